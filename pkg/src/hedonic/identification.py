"""Recover systematic surpluses and primitives from observed shares and prices."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .entropy import HeterogeneitySpec, conjugate, emax_gradient
from .errors import BoundarySupport, DimensionMismatch, NotAProbability
from .market import MarketSpec

SHARE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SystematicUtilities:
    """``U[x, z] = alpha + p`` (producers) and ``V[z, y] = gamma - p`` (consumers)."""

    U: np.ndarray
    V: np.ndarray


def systematic_utilities(spec: MarketSpec, p) -> SystematicUtilities:
    p = np.asarray(p, dtype=np.float64)
    return SystematicUtilities(spec.alpha + p[None, :], spec.gamma - p[:, None])


@dataclass(frozen=True, eq=False)
class ObservedMarket:
    """Conditional choice shares per type (column 0 is the outside option) and prices."""

    shares_x: np.ndarray
    shares_y: np.ndarray
    n: np.ndarray
    m: np.ndarray
    p: np.ndarray
    heterogeneity: HeterogeneitySpec = field(default_factory=HeterogeneitySpec.logit)

    def __post_init__(self):
        for name in ("shares_x", "shares_y"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=np.float64)))
        for name in ("n", "m", "p"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)))
        nz = self.p.size
        if self.shares_x.shape[1] != nz + 1 or self.shares_y.shape[1] != nz + 1:
            raise DimensionMismatch(f"share rows need |Z|+1 = {nz + 1} columns")
        if self.n.size != self.shares_x.shape[0] or self.m.size != self.shares_y.shape[0]:
            raise DimensionMismatch("one mass per share row expected")
        for s in (self.shares_x, self.shares_y):
            if np.any(s < -SHARE_TOL) or np.any(np.abs(s.sum(axis=1) - 1.0) > SHARE_TOL):
                raise NotAProbability("every share row must be a probability vector")

    @classmethod
    def from_equilibrium(cls, eq, n, m, heterogeneity=None):
        return cls(eq.shares_x, eq.shares_y, n, m, eq.p, heterogeneity or HeterogeneitySpec.logit())


@dataclass(frozen=True, eq=False)
class IdentifiedPrimitives:
    alpha_hat: np.ndarray
    gamma_hat: np.ndarray
    utilities: SystematicUtilities
    residual: float = 0.0


def _require_interior(shares, side):
    bad = np.argwhere(shares <= 0)
    if bad.size:
        i, k = bad[0]
        what = "opt-out" if k == 0 else f"quality {k}"
        raise BoundarySupport(f"{side} type {i} has zero share on {what}; log-odds undefined")


def identify_systematic(obs: ObservedMarket, method: str = "auto") -> tuple[SystematicUtilities, float]:
    """Invert observed shares into systematic utilities.

    Under Logit with ``method="auto"`` (or ``"closed"``) this is the log-odds
    against the outside option.  ``method="numeric"`` (always used for
    Empirical shocks) maximises ``mu . U - emax(U)`` per type.  Returns the
    utilities and the largest gap between re-predicted and observed shares.
    """
    _require_interior(obs.shares_x, "producer")
    _require_interior(obs.shares_y, "consumer")
    het = obs.heterogeneity
    if het.kind == "logit" and method in ("auto", "closed"):
        U = np.log(obs.shares_x[:, 1:] / obs.shares_x[:, :1])
        V = np.log(obs.shares_y[:, 1:] / obs.shares_y[:, :1]).T
        return SystematicUtilities(U, V), 0.0

    U = np.empty((obs.shares_x.shape[0], obs.p.size))
    V = np.empty((obs.p.size, obs.shares_y.shape[0]))
    residual = 0.0
    for x, row in enumerate(obs.shares_x):
        shocks = het.producer(x)
        U[x] = conjugate(row, shocks, method="numeric")[1]
        residual = max(residual, float(np.abs(emax_gradient(U[x], shocks) - row).max()))
    for y, row in enumerate(obs.shares_y):
        shocks = het.consumer(y)
        V[:, y] = conjugate(row, shocks, method="numeric")[1]
        residual = max(residual, float(np.abs(emax_gradient(V[:, y], shocks) - row).max()))
    return SystematicUtilities(U, V), residual


def identify_primitives(obs: ObservedMarket, method: str = "auto") -> IdentifiedPrimitives:
    """``alpha = U - p`` and ``gamma = V + p`` from the identified utilities."""
    utils, residual = identify_systematic(obs, method)
    return IdentifiedPrimitives(
        alpha_hat=utils.U - obs.p[None, :],
        gamma_hat=utils.V + obs.p[:, None],
        utilities=utils,
        residual=residual,
    )

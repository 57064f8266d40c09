"""Finite synthetic populations, individual choices, and the simulate -> identify round trip.

Shocks come from a counter-based generator (numpy's Philox) keyed by
``(seed, side, type)``; within a type the value for ``(agent, option)`` is raw
draw number ``agent * (|Z|+1) + option``.  A population is therefore a pure
function of its key, independent of how many other types are drawn or in
which order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .entropy import HeterogeneitySpec, solve_price_equilibrium
from .errors import BoundarySupport, ValidationError
from .identification import ObservedMarket, identify_primitives
from .market import MarketSpec

GENERATOR_ID = "philox4x64-10:uniform53:gumbel-inverse-cdf"
PRODUCER, CONSUMER = 0, 1


def keyed_uniforms(seed: int, side: int, type_index: int, count: int) -> np.ndarray:
    """``count`` uniforms in the open interval (0, 1) for one (seed, side, type) stream."""
    if not 0 <= seed < 2**64:
        raise ValidationError("seed must be a 64-bit unsigned integer")
    key = np.array([seed, (side << 32) | type_index], dtype=np.uint64)
    raw = np.random.Philox(key=key).random_raw(count)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) / 2.0**53


@dataclass(frozen=True, eq=False)
class Population:
    """Per-type shock matrices of shape (agents, |Z|+1); column 0 is the outside option."""

    producer_shocks: tuple
    consumer_shocks: tuple
    seed: int
    generator_id: str = GENERATOR_ID


@dataclass(frozen=True, eq=False)
class EmpiricalShares:
    counts_x: np.ndarray
    counts_y: np.ndarray

    @property
    def sizes_x(self):
        return self.counts_x.sum(axis=1)

    @property
    def sizes_y(self):
        return self.counts_y.sum(axis=1)

    @property
    def shares_x(self):
        return self.counts_x / self.sizes_x[:, None]

    @property
    def shares_y(self):
        return self.counts_y / self.sizes_y[:, None]


def _type_shocks(het_type, seed, side, t, agents, k):
    u = keyed_uniforms(seed, side, t, agents * k).reshape(agents, k)
    if het_type.kind == "logit":
        return _kernels.gumbel(u)
    draws = het_type.draws
    rows = np.minimum((u[:, 0] * draws.shape[0]).astype(np.int64), draws.shape[0] - 1)
    return draws[rows]


def draw_population(spec: MarketSpec, het: HeterogeneitySpec | None, agents_per_type: int, seed: int) -> Population:
    """Draw ``agents_per_type`` agents with shock vectors for every observable type.

    Logit: standard Gumbel by inverse CDF.  Empirical: rows of the type's draw
    matrix resampled uniformly.
    """
    if agents_per_type < 1:
        raise ValidationError("agents_per_type must be at least 1")
    het = (het or HeterogeneitySpec.logit()).check(spec)
    nx, nz, ny = spec.shape
    k = nz + 1
    prod = tuple(_type_shocks(het.producer(x), seed, PRODUCER, x, agents_per_type, k) for x in range(nx))
    cons = tuple(_type_shocks(het.consumer(y), seed, CONSUMER, y, agents_per_type, k) for y in range(ny))
    return Population(prod, cons, int(seed))


def simulate_choices(pop: Population, spec: MarketSpec, p) -> EmpiricalShares:
    """Each agent picks the best of opt-out and every quality; ties go to the lowest option index."""
    p = np.asarray(p, dtype=np.float64)
    counts_x = np.array(
        [_kernels.choice_counts(np.concatenate([[0.0], spec.alpha[x] + p]), s) for x, s in enumerate(pop.producer_shocks)]
    )
    counts_y = np.array(
        [_kernels.choice_counts(np.concatenate([[0.0], spec.gamma[:, y] - p]), s) for y, s in enumerate(pop.consumer_shocks)]
    )
    return EmpiricalShares(counts_x.reshape(len(pop.producer_shocks), -1), counts_y.reshape(len(pop.consumer_shocks), -1))


@dataclass(frozen=True, eq=False)
class RoundTripReport:
    alpha_err: float
    gamma_err: float
    clearing_residual: float
    sample_sizes: tuple
    share_gap: float
    share_gap_within_bound: bool
    p: np.ndarray = field(repr=False, default=None)
    alpha_hat: np.ndarray = field(repr=False, default=None)
    gamma_hat: np.ndarray = field(repr=False, default=None)

    def as_dict(self):
        return {
            "alpha_err": self.alpha_err,
            "gamma_err": self.gamma_err,
            "clearing_residual": self.clearing_residual,
            "sample_sizes": list(self.sample_sizes),
            "share_gap": self.share_gap,
            "share_gap_within_bound": self.share_gap_within_bound,
        }


def share_bound(shares, agents):
    """Four binomial standard errors per cell."""
    return 4.0 * np.sqrt(shares * (1.0 - shares) / agents)


def round_trip(spec: MarketSpec, het: HeterogeneitySpec | None, agents_per_type: int | None, seed: int = 0,
               equilibrium=None) -> RoundTripReport:
    """Solve the Logit equilibrium, simulate choices at its prices, identify, and measure the errors.

    ``agents_per_type=None`` skips simulation and feeds the theoretical
    shares, which must reproduce the primitives to solver precision.
    """
    het = het or HeterogeneitySpec.logit()
    if het.kind != "logit":
        raise ValidationError("round trip needs Logit heterogeneity (exact theoretical shares)")
    eq = equilibrium or solve_price_equilibrium(spec, het)
    if agents_per_type is None:
        sx, sy = eq.shares_x, eq.shares_y
        sizes = ()
        gap, within = 0.0, True
    else:
        pop = draw_population(spec, het, agents_per_type, seed)
        sim = simulate_choices(pop, spec, eq.p)
        sx, sy = sim.shares_x, sim.shares_y
        sizes = tuple(int(s) for s in np.concatenate([sim.sizes_x, sim.sizes_y]))
        theory = np.vstack([eq.shares_x, eq.shares_y])
        diff = np.abs(np.vstack([sx, sy]) - theory)
        gap = float(diff.max())
        within = bool(np.all(diff <= share_bound(theory, agents_per_type)))
    try:
        ident = identify_primitives(ObservedMarket(sx, sy, spec.n, spec.m, eq.p, het))
    except BoundarySupport as exc:
        raise BoundarySupport(f"{exc}; increase the number of agents per type") from None
    fa = np.isfinite(spec.alpha)
    fg = np.isfinite(spec.gamma)
    return RoundTripReport(
        alpha_err=float(np.abs(ident.alpha_hat - spec.alpha)[fa].max(initial=0.0)),
        gamma_err=float(np.abs(ident.gamma_hat - spec.gamma)[fg].max(initial=0.0)),
        clearing_residual=eq.clearing_residual,
        sample_sizes=sizes,
        share_gap=gap,
        share_gap_within_bound=within,
        p=eq.p,
        alpha_hat=ident.alpha_hat,
        gamma_hat=ident.gamma_hat,
    )

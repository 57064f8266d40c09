"""Market data model, validation, indirect surplus, welfare and the equilibrium verifier."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllInfeasibleRowWarning,
    ConstraintViolation,
    DimensionMismatch,
    InfeasibleMass,
    NegativeMass,
    ValidationError,
)

DEFAULT_TOL = 1e-9


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _is_integral(a):
    a = np.asarray(a, dtype=np.float64)
    finite = a[np.isfinite(a)]
    return bool(np.all(finite == np.round(finite)))


@dataclass(frozen=True, eq=False)
class MarketSpec:
    """A finite hedonic market.

    ``alpha[x, z]`` is the producer surplus from supplying quality ``z`` and
    ``gamma[z, y]`` the consumer surplus from buying it.  ``-inf`` marks a
    forbidden pair.  Construction validates the invariants and raises on the
    first violation.
    """

    producer_types: tuple
    consumer_types: tuple
    qualities: tuple
    n: np.ndarray
    m: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    free_disposal: bool = False

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "producer_types", tuple(str(s) for s in self.producer_types))
        set_(self, "consumer_types", tuple(str(s) for s in self.consumer_types))
        set_(self, "qualities", tuple(str(s) for s in self.qualities))
        try:
            set_(self, "n", _frozen(np.atleast_1d(self.n)))
            set_(self, "m", _frozen(np.atleast_1d(self.m)))
            set_(self, "alpha", _frozen(np.atleast_2d(self.alpha)))
            set_(self, "gamma", _frozen(np.atleast_2d(self.gamma)))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"non-numeric market table: {exc}") from None
        set_(self, "free_disposal", bool(self.free_disposal))
        _check(self, warn=False)

    @property
    def shape(self):
        """``(|X|, |Z|, |Y|)``."""
        return len(self.producer_types), len(self.qualities), len(self.consumer_types)

    @property
    def integral(self):
        """True when every population mass is an integer."""
        return _is_integral(self.n) and _is_integral(self.m)

    @property
    def exact(self):
        """True when masses and all finite surpluses are integers (exact arithmetic path)."""
        return self.integral and _is_integral(self.alpha) and _is_integral(self.gamma)

    def replace(self, **changes):
        kw = dict(
            producer_types=self.producer_types,
            consumer_types=self.consumer_types,
            qualities=self.qualities,
            n=self.n,
            m=self.m,
            alpha=self.alpha,
            gamma=self.gamma,
            free_disposal=self.free_disposal,
        )
        kw.update(changes)
        return MarketSpec(**kw)


def _check(spec, warn):
    nx, nz, ny = spec.shape
    if min(nx, nz, ny) < 1:
        raise DimensionMismatch("need at least one producer type, consumer type and quality")
    for name, labels in (
        ("producer", spec.producer_types),
        ("consumer", spec.consumer_types),
        ("quality", spec.qualities),
    ):
        if len(set(labels)) != len(labels):
            raise ValidationError(f"duplicate {name} labels: {labels}")
    if spec.n.shape != (nx,):
        raise DimensionMismatch(f"n has shape {spec.n.shape}, expected ({nx},)")
    if spec.m.shape != (ny,):
        raise DimensionMismatch(f"m has shape {spec.m.shape}, expected ({ny},)")
    if spec.alpha.shape != (nx, nz):
        raise DimensionMismatch(f"alpha has shape {spec.alpha.shape}, expected ({nx}, {nz})")
    if spec.gamma.shape != (nz, ny):
        raise DimensionMismatch(f"gamma has shape {spec.gamma.shape}, expected ({nz}, {ny})")
    for name, mass in (("n", spec.n), ("m", spec.m)):
        if not np.all(np.isfinite(mass)):
            raise ValidationError(f"{name} must be finite")
        if np.any(mass < 0):
            raise NegativeMass(f"{name} has negative entries: {mass.tolist()}")
    for name, table in (("alpha", spec.alpha), ("gamma", spec.gamma)):
        if np.any(np.isnan(table)):
            raise ValidationError(f"{name} contains NaN")
        if np.any(table == np.inf):
            raise ValidationError(f"{name} contains +inf; only finite values or -inf are allowed")
    if warn:
        dead_x = [spec.producer_types[i] for i in np.flatnonzero(np.all(spec.alpha == -np.inf, axis=1))]
        dead_y = [spec.consumer_types[j] for j in np.flatnonzero(np.all(spec.gamma == -np.inf, axis=0))]
        if dead_x or dead_y:
            warnings.warn(
                f"types with no feasible quality (always opt out): producers {dead_x}, consumers {dead_y}",
                AllInfeasibleRowWarning,
                stacklevel=3,
            )


def validate_market(spec: MarketSpec) -> MarketSpec:
    """Re-check the invariants of ``spec`` and return it unchanged.

    Types that cannot reach any quality are legal but trigger an
    :class:`AllInfeasibleRowWarning`.
    """
    _check(spec, warn=True)
    return spec


def worked_example() -> MarketSpec:
    """Four unit-mass sellers, three unit-mass buyers, three qualities, no free disposal."""
    return MarketSpec(
        producer_types=("x1", "x2", "x3", "x4"),
        consumer_types=("y1", "y2", "y3"),
        qualities=("z1", "z2", "z3"),
        n=[1, 1, 1, 1],
        m=[1, 1, 1],
        alpha=[[2, 5, 3], [2, 1, 4], [1, 5, 8], [4, 2, 4]],
        gamma=[[0, 2, 1], [2, 4, 2], [4, 2, 6]],
    )


# ---------------------------------------------------------------- value types

@dataclass(frozen=True, eq=False)
class Allocation:
    """Supply masses ``mu_xz`` (|X|x|Z|) and demand masses ``mu_zy`` (|Z|x|Y|)."""

    mu_xz: np.ndarray
    mu_zy: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu_xz", _frozen(np.atleast_2d(self.mu_xz)))
        object.__setattr__(self, "mu_zy", _frozen(np.atleast_2d(self.mu_zy)))

    @classmethod
    def zeros(cls, spec):
        nx, nz, ny = spec.shape
        return cls(np.zeros((nx, nz)), np.zeros((nz, ny)))

    @property
    def supply(self):
        return self.mu_xz.sum(axis=0)

    @property
    def demand(self):
        return self.mu_zy.sum(axis=1)

    def opt_out(self, spec):
        """``(mu_x0, mu_0y)``: masses of each type that stay out of the market."""
        return spec.n - self.mu_xz.sum(axis=1), spec.m - self.mu_zy.sum(axis=0)


@dataclass(frozen=True, eq=False)
class IndirectUtilities:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", _frozen(self.u))
        object.__setattr__(self, "v", _frozen(self.v))


@dataclass(frozen=True, eq=False)
class PriceBounds:
    p_min: np.ndarray
    p_max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_min", _frozen(self.p_min))
        object.__setattr__(self, "p_max", _frozen(self.p_max))

    def contains(self, p, tol=DEFAULT_TOL):
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p >= self.p_min - tol) and np.all(p <= self.p_max + tol))


@dataclass(frozen=True)
class RationalityViolation:
    """An agent type holding mass on ``chosen`` while ``better`` pays ``slack`` more.

    ``chosen`` / ``better`` are quality labels, or ``None`` for the outside option.
    """

    side: str
    agent: str
    chosen: str | None
    better: str | None
    slack: float


@dataclass(frozen=True)
class VerificationReport:
    people_counting_ok: bool
    market_clearing_ok: bool
    rationality_violations: tuple = field(default_factory=tuple)
    max_residual: float = 0.0
    tol: float = DEFAULT_TOL

    @property
    def ok(self):
        return self.people_counting_ok and self.market_clearing_ok and not self.rationality_violations


# ---------------------------------------------------------------- operations

def indirect_surplus_matrix(spec: MarketSpec):
    """Joint surplus of the best quality for every producer/consumer pair.

    Returns ``(phi, argmax)``: ``phi[x, y] = max_z alpha[x, z] + gamma[z, y]``
    (``-inf`` if no quality is feasible for both) and a boolean
    ``argmax[x, y, z]`` marking the maximizing qualities.
    """
    joint = spec.alpha[:, :, None] + spec.gamma[None, :, :]  # x, z, y
    phi = joint.max(axis=1)
    argmax = (joint == phi[:, None, :]) & np.isfinite(phi)[:, None, :]
    return phi, np.transpose(argmax, (0, 2, 1))


def _feasibility_residual(spec, mu):
    nx, nz, ny = spec.shape
    if mu.mu_xz.shape != (nx, nz) or mu.mu_zy.shape != (nz, ny):
        raise DimensionMismatch(
            f"allocation shapes {mu.mu_xz.shape}, {mu.mu_zy.shape} do not match market {spec.shape}"
        )
    negativity = max(0.0, -float(mu.mu_xz.min()), -float(mu.mu_zy.min()))
    out_x, out_y = mu.opt_out(spec)
    counting = max(0.0, -float(out_x.min()), -float(out_y.min()))
    gap = mu.supply - mu.demand
    if spec.free_disposal:
        clearing = max(0.0, -float(gap.min()))
    else:
        clearing = float(np.abs(gap).max())
    return negativity, counting, clearing


def welfare(spec: MarketSpec, mu: Allocation, tol: float = DEFAULT_TOL) -> float:
    """Total surplus ``sum mu_xz alpha_xz + sum mu_zy gamma_zy`` of a feasible allocation."""
    if np.any((mu.mu_xz > 0) & ~np.isfinite(spec.alpha)) or np.any((mu.mu_zy > 0) & ~np.isfinite(spec.gamma)):
        raise InfeasibleMass("positive mass on a forbidden producer-quality or quality-consumer pair")
    negativity, counting, clearing = _feasibility_residual(spec, mu)
    if max(negativity, counting, clearing) > tol:
        raise ConstraintViolation(
            f"allocation infeasible: negativity {negativity:g}, people counting {counting:g}, clearing {clearing:g}"
        )
    a = np.where(np.isfinite(spec.alpha), spec.alpha, 0.0)
    g = np.where(np.isfinite(spec.gamma), spec.gamma, 0.0)
    return float((mu.mu_xz * a).sum() + (mu.mu_zy * g).sum())


def verify_equilibrium(spec: MarketSpec, p, mu: Allocation, tol: float = DEFAULT_TOL) -> VerificationReport:
    """Check people counting, market clearing and individual rationality at prices ``p``.

    Violations are collected in the report, never raised.  With free disposal,
    excess supply of a quality is only allowed at a non-positive price.
    """
    p = np.asarray(p, dtype=np.float64)
    nx, nz, ny = spec.shape
    if p.shape != (nz,):
        raise DimensionMismatch(f"price vector has shape {p.shape}, expected ({nz},)")
    negativity, counting, clearing = _feasibility_residual(spec, mu)
    residuals = [negativity, counting, clearing]
    clearing_ok = clearing <= tol
    if spec.free_disposal:
        disposal = mu.supply - mu.demand
        stuck = float(np.max(np.where(disposal > tol, p, -np.inf), initial=-np.inf))
        if stuck > tol:
            clearing_ok = False
            residuals.append(stuck)

    violations = []
    out_x, out_y = mu.opt_out(spec)
    sides = (
        ("producer", spec.producer_types, spec.alpha + p[None, :], mu.mu_xz, out_x),
        ("consumer", spec.consumer_types, (spec.gamma - p[:, None]).T, mu.mu_zy.T, out_y),
    )
    for side, labels, payoff, mass, out in sides:
        for i, label in enumerate(labels):
            row = payoff[i]
            best_z = int(np.argmax(row))
            best_inside = row[best_z]
            best = max(best_inside, 0.0)
            better = spec.qualities[best_z] if best_inside > 0 else None
            for z in np.flatnonzero(mass[i] > tol):
                slack = best - row[z]
                residuals.append(slack)
                if slack > tol:
                    violations.append(RationalityViolation(side, label, spec.qualities[z], better, float(slack)))
            if out[i] > tol and best_inside > tol:
                residuals.append(best_inside)
                violations.append(RationalityViolation(side, label, None, spec.qualities[best_z], float(best_inside)))

    return VerificationReport(
        people_counting_ok=max(negativity, counting) <= tol,
        market_clearing_ok=clearing_ok,
        rationality_violations=tuple(violations),
        max_residual=float(max(residuals)),
        tol=tol,
    )


def price_bounds(spec: MarketSpec, uv: IndirectUtilities) -> PriceBounds:
    """Interval of prices supported by the indirect utilities ``uv``.

    ``p_min[z] = max_y gamma[z, y] - v[y]`` and ``p_max[z] = min_x u[x] - alpha[x, z]``.
    Feed the producer-optimal ``u`` and the consumer-optimal ``v`` to get the
    full equilibrium price set.  Entries are infinite when no finite pair
    constrains a quality.
    """
    u = np.asarray(uv.u, dtype=np.float64)
    v = np.asarray(uv.v, dtype=np.float64)
    p_min = (spec.gamma - v[None, :]).max(axis=1)
    p_max = (u[:, None] - spec.alpha).min(axis=0)
    if spec.free_disposal:
        p_min = np.maximum(p_min, 0.0)
    return PriceBounds(p_min, p_max)

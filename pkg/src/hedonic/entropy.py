"""Markets with unobserved taste heterogeneity.

Each agent adds an idiosyncratic shock to every option (index 0 is the outside
option).  Two shock models are supported: iid standard Gumbel (:data:`LOGIT`)
and an :class:`Empirical` draw matrix per observable type.  The expected
maximum ("emax") of a type is convex in its systematic utilities; its gradient
gives choice probabilities, and its convex conjugate maps probabilities back to
utilities.

Equilibrium prices minimise the sum over types of mass-weighted emax values.
Under Logit this is smooth and strictly convex and is solved by damped Newton.
Under Empirical shocks the objective is piecewise linear and equals an ordinary
discrete market with one type per draw, which the flow solver handles exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import BoundarySupport, ConstraintViolation, DeadQuality, MaxIterations, NotAProbability, ValidationError
from .market import Allocation, MarketSpec

PROB_TOL = 1e-9


# ---------------------------------------------------------------- shock models

@dataclass(frozen=True)
class Logit:
    """iid standard Gumbel shocks with scale 1.

    The emax is ``log(1 + sum_z exp(U_z))``: the Gumbel expectation with the
    Euler-Mascheroni constant dropped, a location normalization that cancels
    from choice probabilities and from every price or identification result.
    """

    kind = "logit"


LOGIT = Logit()


@dataclass(frozen=True, eq=False)
class Empirical:
    """Shock draws for one observable type: rows are agents, column 0 is the outside option."""

    draws: np.ndarray
    kind = "empirical"

    def __post_init__(self):
        d = np.atleast_2d(np.array(self.draws, dtype=np.float64))
        if d.shape[0] < 1 or d.shape[1] < 2:
            raise ValidationError(f"draw matrix needs >= 1 row and >= 2 columns, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValidationError("draws must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)


@dataclass(frozen=True, eq=False)
class HeterogeneitySpec:
    """Shock model for every observable type of a market."""

    kind: str = "logit"
    producer_draws: tuple = ()
    consumer_draws: tuple = ()
    seed: int | None = None

    @classmethod
    def logit(cls):
        return cls("logit")

    @classmethod
    def empirical(cls, producer_draws, consumer_draws, seed=None):
        return cls(
            "empirical",
            tuple(Empirical(d) for d in producer_draws),
            tuple(Empirical(d) for d in consumer_draws),
            seed,
        )

    def producer(self, x):
        return LOGIT if self.kind == "logit" else self.producer_draws[x]

    def consumer(self, y):
        return LOGIT if self.kind == "logit" else self.consumer_draws[y]

    def check(self, spec: MarketSpec):
        if self.kind == "logit":
            return self
        if self.kind != "empirical":
            raise ValidationError(f"unknown heterogeneity kind {self.kind!r}")
        nx, nz, ny = spec.shape
        if len(self.producer_draws) != nx or len(self.consumer_draws) != ny:
            raise ValidationError("need one draw matrix per producer type and per consumer type")
        for e in self.producer_draws + self.consumer_draws:
            if e.draws.shape[1] != nz + 1:
                raise ValidationError(f"draw matrices need |Z|+1 = {nz + 1} columns, got {e.draws.shape[1]}")
        return self


# ---------------------------------------------------------------- per-type maps

def emax(U, shocks=LOGIT) -> float:
    """Expected maximum of ``U_z + e_z`` over qualities and ``e_0`` for the outside option."""
    U = np.asarray(U, dtype=np.float64)
    if isinstance(shocks, Empirical):
        return float(_kernels.empirical_rows(U, shocks.draws)[0])
    return float(_kernels.logit_rows(U[None, :])[0][0])


def emax_gradient(U, shocks=LOGIT) -> np.ndarray:
    """Choice probabilities ``(opt-out, z_1, ..., z_|Z|)``.

    Under Empirical shocks, agents indifferent between options are split
    evenly among them.
    """
    U = np.asarray(U, dtype=np.float64)
    if isinstance(shocks, Empirical):
        return _kernels.empirical_rows(U, shocks.draws)[1]
    return _kernels.logit_rows(U[None, :])[1][0]


def _xlogx(a):
    a = np.asarray(a, dtype=np.float64)
    return np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0)), 0.0)


def _check_probability(mu):
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim != 1 or mu.size < 2:
        raise NotAProbability("expected a vector (opt-out, z_1, ..., z_|Z|)")
    if np.any(mu < -PROB_TOL) or abs(mu.sum() - 1.0) > PROB_TOL:
        raise NotAProbability(f"not a probability vector: {mu.tolist()}")
    return np.clip(mu, 0.0, None)


def _logit_conjugate_numeric(mu, tol=1e-15, max_iter=100):
    # maximise mu_in . U - emax(U) by damped Newton; stop on a negligible gradient or step
    inner = mu[1:]
    U = np.zeros(inner.size)
    val = inner @ U - emax(U)
    for _ in range(max_iter):
        pi = emax_gradient(U)[1:]
        g = inner - pi
        if np.max(np.abs(g)) <= tol:
            break
        H = np.diag(pi) - np.outer(pi, pi)
        step = np.linalg.solve(H, g)
        if np.max(np.abs(step)) <= 1e-14 * (1.0 + np.max(np.abs(U))):
            U = U + step
            val = inner @ U - emax(U)
            break
        t = 1.0
        while True:
            cand = U + t * step
            cval = inner @ cand - emax(cand)
            if cval >= val - 1e-14 * (1 + abs(val)) or t < 1e-10:
                break
            t *= 0.5
        U, val = cand, cval
    return val, U


def _empirical_conjugate_numeric(mu, draws, tol=1e-10, max_iter=200):
    # smoothed emax tau*logsumexp((U + e)/tau), tau annealed toward zero, Newton at each level
    inner = mu[1:]
    R, K = draws.shape
    U = np.zeros(K - 1)
    spread = float(draws.std()) + 1.0
    for tau in spread * np.geomspace(1.0, 1e-6, 13):

        def smoothed(U):
            W = draws.copy()
            W[:, 1:] += U
            W /= tau
            e, P = _kernels.logit_rows(W[:, 1:] - W[:, :1])
            val = inner @ U - tau * (e + W[:, 0]).mean()
            return val, P[:, 1:]

        val, P = smoothed(U)
        for _ in range(max_iter):
            g = inner - P.mean(axis=0)
            if np.max(np.abs(g)) <= tol:
                break
            H = (np.einsum("rz,zw->zw", P, np.eye(K - 1)) - np.einsum("rz,rw->zw", P, P)) / (R * tau)
            step = np.linalg.lstsq(H + 1e-12 * np.eye(K - 1), g, rcond=None)[0]
            t = 1.0
            while True:
                cand = U + t * step
                cval, cP = smoothed(cand)
                if cval >= val - 1e-14 * (1 + abs(val)) or t < 1e-10:
                    break
                t *= 0.5
            if cval < val:
                break
            U, val, P = cand, cval, cP
    value = float(inner @ U - emax(U, Empirical(draws)))
    return value, U


def conjugate(mu, shocks=LOGIT, grad=True, method="auto"):
    """Convex conjugate of the emax at the choice-probability vector ``mu``.

    ``mu`` is ``(opt-out, z_1, ..., z_|Z|)``.  Returns ``(value, grad)``; the
    gradient (systematic utilities that generate ``mu``) is ``None`` when
    ``grad=False``.  ``method="closed"`` uses the Logit closed form,
    ``"numeric"`` maximises ``mu . U - emax(U)`` directly; ``"auto"`` picks the
    closed form when one exists.  Under Empirical shocks the numeric route
    anneals a smoothed emax and may return a best-fit ``U`` when ``mu`` is not
    exactly attainable.
    """
    mu = _check_probability(mu)
    empirical = isinstance(shocks, Empirical)
    if method == "auto":
        method = "numeric" if empirical else "closed"
    if grad and np.any(mu <= 0):
        raise BoundarySupport(f"conjugate gradient needs strictly positive shares, got {mu.tolist()}")
    if method == "closed":
        if empirical:
            raise ValueError("no closed form for empirical shocks")
        value = float(_xlogx(mu).sum())
        return value, (np.log(mu[1:] / mu[0]) if grad else None)
    if method != "numeric":
        raise ValueError(f"unknown method {method!r}")
    if empirical:
        value, U = _empirical_conjugate_numeric(mu, shocks.draws)
    else:
        if not grad and np.any(mu <= 0):
            return float(_xlogx(mu).sum()), None
        value, U = _logit_conjugate_numeric(mu)
    return value, (U if grad else None)


# ---------------------------------------------------------------- market level

def conditional_shares(spec: MarketSpec, mu: Allocation):
    """Per-type choice shares including the opt-out column; zero-mass types get NaN rows."""
    out_x, out_y = mu.opt_out(spec)
    with np.errstate(invalid="ignore", divide="ignore"):
        sx = np.column_stack([out_x, mu.mu_xz]) / spec.n[:, None]
        sy = np.column_stack([out_y, mu.mu_zy.T]) / spec.m[:, None]
    return sx, sy


def allocation_from_shares(spec: MarketSpec, shares_x, shares_y) -> Allocation:
    return Allocation(spec.n[:, None] * shares_x[:, 1:], (spec.m[:, None] * shares_y[:, 1:]).T)


def generalized_entropy(spec: MarketSpec, mu: Allocation, het: HeterogeneitySpec | None = None) -> float:
    """Mass-weighted sum of conjugate values over producer and consumer types."""
    het = (het or HeterogeneitySpec.logit()).check(spec)
    sx, sy = conditional_shares(spec, mu)
    total = 0.0
    for x in range(spec.shape[0]):
        if spec.n[x] > 0:
            total += spec.n[x] * conjugate(sx[x], het.producer(x), grad=False, method="auto")[0]
    for y in range(spec.shape[2]):
        if spec.m[y] > 0:
            total += spec.m[y] * conjugate(sy[y], het.consumer(y), grad=False, method="auto")[0]
    return float(total)


def logit_entropy(spec: MarketSpec, mu: Allocation) -> float:
    """Shannon form of the Logit entropy written directly on masses (0 log 0 = 0)."""
    out_x, out_y = mu.opt_out(spec)

    def term(mass, base):
        mass = np.asarray(mass, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(mass > 0, np.log(mass / base), 0.0)
        return float(np.sum(np.where(mass > 0, mass * r, 0.0)))

    return (
        term(mu.mu_xz, spec.n[:, None])
        + term(out_x, spec.n)
        + term(mu.mu_zy, spec.m[None, :])
        + term(out_y, spec.m)
    )


def _surplus(spec, mu):
    a = np.where(np.isfinite(spec.alpha), spec.alpha, 0.0)
    g = np.where(np.isfinite(spec.gamma), spec.gamma, 0.0)
    return float((mu.mu_xz * a).sum() + (mu.mu_zy * g).sum())


def social_welfare_primal(spec: MarketSpec, het: HeterogeneitySpec | None, mu: Allocation, tol: float = 1e-8) -> float:
    """Total systematic surplus of ``mu`` minus its generalized entropy."""
    out_x, out_y = mu.opt_out(spec)
    clearing = np.abs(mu.supply - mu.demand).max()
    worst = max(-mu.mu_xz.min(), -mu.mu_zy.min(), -out_x.min(), -out_y.min(), 0.0)
    if worst > tol or clearing > tol * (1 + float(spec.n.sum() + spec.m.sum())):
        raise ConstraintViolation(f"allocation infeasible (negativity {worst:g}, clearing {clearing:g})")
    if np.any((mu.mu_xz > 0) & ~np.isfinite(spec.alpha)) or np.any((mu.mu_zy > 0) & ~np.isfinite(spec.gamma)):
        raise ConstraintViolation("positive mass on a forbidden pair")
    return _surplus(spec, mu) - generalized_entropy(spec, mu, het)


@dataclass(frozen=True)
class PriceObjective:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray | None
    shares_x: np.ndarray
    shares_y: np.ndarray


def price_objective(spec: MarketSpec, p, het: HeterogeneitySpec | None = None, hessian=True) -> PriceObjective:
    """Social welfare as a function of prices, with its gradient (excess supply).

    The Hessian is the mass-weighted sum of per-type softmax covariances
    (Logit only).
    """
    het = het or HeterogeneitySpec.logit()
    p = np.asarray(p, dtype=np.float64)
    U = spec.alpha + p[None, :]
    V = (spec.gamma - p[:, None]).T
    if het.kind == "logit":
        ex, sx = _kernels.logit_rows(U)
        ey, sy = _kernels.logit_rows(V)
    else:
        rows_x = [_kernels.empirical_rows(U[x], het.producer(x).draws) for x in range(U.shape[0])]
        rows_y = [_kernels.empirical_rows(V[y], het.consumer(y).draws) for y in range(V.shape[0])]
        ex = np.array([r[0] for r in rows_x])
        sx = np.array([r[1] for r in rows_x])
        ey = np.array([r[0] for r in rows_y])
        sy = np.array([r[1] for r in rows_y])
        hessian = False
    value = float(spec.n @ ex + spec.m @ ey)
    grad = spec.n @ sx[:, 1:] - spec.m @ sy[:, 1:]
    H = None
    if hessian:
        px, py = sx[:, 1:], sy[:, 1:]
        H = np.diag(spec.n @ px + spec.m @ py) - px.T @ (spec.n[:, None] * px) - py.T @ (spec.m[:, None] * py)
    return PriceObjective(value, grad, H, sx, sy)


@dataclass(frozen=True, eq=False)
class SmoothEquilibrium:
    p: np.ndarray
    allocation: Allocation
    welfare: float
    clearing_residual: float
    iterations: int
    converged: bool
    shares_x: np.ndarray
    shares_y: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _dead_qualities(spec):
    supply_ok = (np.isfinite(spec.alpha) & (spec.n[:, None] > 0)).any(axis=0)
    demand_ok = (np.isfinite(spec.gamma) & (spec.m[None, :] > 0)).any(axis=1)
    return [spec.qualities[z] for z in np.flatnonzero(~(supply_ok & demand_ok))]


def solve_price_equilibrium(
    spec: MarketSpec,
    het: HeterogeneitySpec | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
    p0=None,
) -> SmoothEquilibrium:
    """Equilibrium prices as the minimiser of the price objective.

    Logit: damped Newton from ``p0`` (default zero) with Armijo backtracking,
    falling back to a gradient step when the Newton direction is unusable.
    Converged when the largest excess supply is at most ``tol``.  Raises
    :class:`MaxIterations` (carrying the last iterate) otherwise.
    """
    het = (het or HeterogeneitySpec.logit()).check(spec)
    dead = _dead_qualities(spec)
    if dead:
        raise DeadQuality(f"qualities with no feasible supplier or no feasible buyer: {dead}")
    if het.kind == "empirical":
        return _solve_empirical(spec, het)

    nz = spec.shape[1]
    p = np.zeros(nz) if p0 is None else np.array(p0, dtype=np.float64)
    obj = price_objective(spec, p, het)
    newton_steps = gradient_steps = 0
    it = 0
    converged = False
    for it in range(max_iter + 1):
        g = obj.gradient
        if np.max(np.abs(g)) <= tol:
            converged = True
            break
        if it == max_iter:
            break
        try:
            step = -np.linalg.solve(obj.hessian, g)
            slope = g @ step
            if not np.all(np.isfinite(step)) or slope >= 0:
                raise np.linalg.LinAlgError
            newton_steps += 1
        except np.linalg.LinAlgError:
            step = -g
            slope = -(g @ g)
            gradient_steps += 1
        t = 1.0
        slack = 1e-13 * (1.0 + abs(obj.value))
        while True:
            cand = price_objective(spec, p + t * step, het)
            if cand.value <= obj.value + 1e-4 * t * slope + slack or t < 1e-12:
                break
            t *= 0.5
        p = p + t * step
        obj = cand

    result = _smooth_result(spec, p, obj, it, converged, {"newton_steps": newton_steps, "gradient_steps": gradient_steps})
    if not converged:
        raise MaxIterations(
            f"no convergence after {max_iter} iterations (excess supply {result.clearing_residual:.3g})",
            partial=result,
        )
    return result


def _smooth_result(spec, p, obj, iterations, converged, diagnostics):
    mu = allocation_from_shares(spec, obj.shares_x, obj.shares_y)
    residual = float(np.max(np.abs(obj.gradient)))
    return SmoothEquilibrium(
        p=p,
        allocation=mu,
        welfare=obj.value,
        clearing_residual=residual,
        iterations=iterations,
        converged=converged,
        shares_x=obj.shares_x,
        shares_y=obj.shares_y,
        diagnostics=diagnostics,
    )


def _solve_empirical(spec, het):
    # one discrete type per draw: alpha_xz + e_rz - e_r0 with mass n_x / R
    from .flow import solve_equilibrium

    nx, nz, ny = spec.shape
    alpha, n, owner_x = [], [], []
    for x in range(nx):
        d = het.producer(x).draws
        alpha.append(spec.alpha[x][None, :] + d[:, 1:] - d[:, :1])
        n.append(np.full(d.shape[0], spec.n[x] / d.shape[0]))
        owner_x += [x] * d.shape[0]
    gamma, m, owner_y = [], [], []
    for y in range(ny):
        d = het.consumer(y).draws
        gamma.append((spec.gamma[:, y][None, :] + d[:, 1:] - d[:, :1]).T)
        m.append(np.full(d.shape[0], spec.m[y] / d.shape[0]))
        owner_y += [y] * d.shape[0]
    expanded = MarketSpec(
        producer_types=[f"x{i}" for i in range(len(owner_x))],
        consumer_types=[f"y{j}" for j in range(len(owner_y))],
        qualities=spec.qualities,
        n=np.concatenate(n),
        m=np.concatenate(m),
        alpha=np.vstack(alpha),
        gamma=np.hstack(gamma),
        free_disposal=spec.free_disposal,
    )
    out = solve_equilibrium(expanded)
    owner_x = np.array(owner_x)
    owner_y = np.array(owner_y)
    mu_xz = np.zeros((nx, nz))
    mu_zy = np.zeros((nz, ny))
    np.add.at(mu_xz, owner_x, out.allocation.mu_xz)
    np.add.at(mu_zy.T, owner_y, out.allocation.mu_zy.T)
    mu = Allocation(mu_xz, mu_zy)
    obj = price_objective(spec, out.p, het, hessian=False)
    sx, sy = conditional_shares(spec, mu)
    width = out.bounds.p_max - out.bounds.p_min
    return SmoothEquilibrium(
        p=out.p,
        allocation=mu,
        welfare=obj.value,
        clearing_residual=float(np.max(np.abs(mu.supply - mu.demand))),
        iterations=out.diagnostics["augmentations"],
        converged=True,
        shares_x=sx,
        shares_y=sy,
        diagnostics={
            "price_interval": (out.bounds.p_min, out.bounds.p_max),
            "non_unique": bool(np.any(width > 1e-9)),
        },
    )

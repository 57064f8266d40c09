"""Maximum surplus flow on the producer -> quality -> consumer network.

The primal is solved by successive shortest paths (costs are negated
surpluses) with the total flow value left free: augmentation stops as soon as
the best residual path has no positive surplus, which is exactly the opt-out
margin.  Dual potentials are read off the optimality conditions afterwards as
shortest-path distances from the outside option, which also yields the
producer- and consumer-optimal extremes of the dual set.

When every mass and finite surplus is an integer, all arithmetic runs on
Python ints, so integrality and duality hold bit-exactly.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DualInconsistency, NonIntegralMasses, TooLarge
from .market import (
    DEFAULT_TOL,
    Allocation,
    IndirectUtilities,
    MarketSpec,
    PriceBounds,
    indirect_surplus_matrix,
)

SOURCE, INTERMEDIATE, TARGET = "source", "intermediate", "target"


@dataclass(frozen=True, eq=False)
class FlowNetwork:
    """Tripartite network: nodes ordered X, Z, Y; arcs (x, z) then (z, y), forbidden pairs pruned."""

    spec: MarketSpec
    nodes: tuple
    arcs: tuple
    phi: np.ndarray
    node_mass: np.ndarray

    @property
    def n_nodes(self):
        return len(self.nodes)

    def node_index(self, role, k):
        nx, nz, _ = self.spec.shape
        return {SOURCE: 0, INTERMEDIATE: nx, TARGET: nx + nz}[role] + k


@dataclass(frozen=True, eq=False)
class ExtremalDuals:
    """Componentwise extremes of the optimal dual set (it is a lattice)."""

    u_min: np.ndarray
    u_max: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray


@dataclass(frozen=True, eq=False)
class EquilibriumOutcome:
    p: np.ndarray
    allocation: Allocation
    u: np.ndarray
    v: np.ndarray
    welfare: float
    bounds: PriceBounds
    extremes: ExtremalDuals
    diagnostics: dict = field(default_factory=dict)

    @property
    def utilities(self):
        return IndirectUtilities(self.u, self.v)


def build_network(spec: MarketSpec) -> FlowNetwork:
    nx, nz, ny = spec.shape
    nodes = (
        [(SOURCE, lbl) for lbl in spec.producer_types]
        + [(INTERMEDIATE, lbl) for lbl in spec.qualities]
        + [(TARGET, lbl) for lbl in spec.consumer_types]
    )
    arcs, phi = [], []
    for x in range(nx):
        for z in range(nz):
            if np.isfinite(spec.alpha[x, z]):
                arcs.append((x, nx + z))
                phi.append(spec.alpha[x, z])
    for z in range(nz):
        for y in range(ny):
            if np.isfinite(spec.gamma[z, y]):
                arcs.append((nx + z, nx + nz + y))
                phi.append(spec.gamma[z, y])
    mass = np.concatenate([-spec.n, np.zeros(nz), spec.m])
    return FlowNetwork(spec, tuple(nodes), tuple(arcs), np.asarray(phi, dtype=np.float64), mass)


def gradient(net: FlowNetwork, potential) -> np.ndarray:
    """Arc-wise ``U[head] - U[tail]``."""
    U = np.asarray(potential, dtype=np.float64)
    if not net.arcs:
        return np.zeros(0)
    tails, heads = np.array(net.arcs).T
    return U[heads] - U[tails]


def divergence(net: FlowNetwork, flow) -> np.ndarray:
    """Node-wise inflow minus outflow; the adjoint of :func:`gradient`."""
    mu = np.asarray(flow, dtype=np.float64)
    out = np.zeros(net.n_nodes)
    if net.arcs:
        tails, heads = np.array(net.arcs).T
        np.add.at(out, heads, mu)
        np.subtract.at(out, tails, mu)
    return out


# ---------------------------------------------------------------- primal

class _Residual:
    """Adjacency-list residual graph with paired reverse edges."""

    def __init__(self, n):
        self.adj = [[] for _ in range(n)]
        self.to, self.cap, self.cost = [], [], []

    def add(self, a, b, cap, cost):
        e = len(self.to)
        self.to += [b, a]
        self.cap += [cap, 0]
        self.cost += [cost, -cost]
        self.adj[a].append(e)
        self.adj[b].append(e + 1)
        return e


def _scalars(spec):
    if spec.exact:
        conv = int
        zero = 0
    else:
        conv = float
        zero = 0.0
    return conv, zero


def _ssp(net):
    """Successive shortest paths from S to T while the path surplus is positive."""
    spec = net.spec
    nx, nz, ny = spec.shape
    conv, zero = _scalars(spec)
    n_nodes = net.n_nodes
    S, T = n_nodes, n_nodes + 1
    g = _Residual(n_nodes + 2)
    big = conv(sum(conv(v) for v in spec.n) + sum(conv(v) for v in spec.m) + 1)

    for x in range(nx):
        g.add(S, x, conv(spec.n[x]), zero)
    arc_edges = [g.add(a, b, big, -conv(phi)) for (a, b), phi in zip(net.arcs, net.phi)]
    for y in range(ny):
        g.add(nx + nz + y, T, conv(spec.m[y]), zero)
    disp_edges = [g.add(nx + z, T, big, zero) for z in range(nz)] if spec.free_disposal else []

    scale = float(np.abs(net.phi).max()) + 1.0 if len(net.phi) else 1.0
    eps = 0 if spec.exact else 1e-12 * scale

    # initial potentials: the network is a DAG ordered S, X, Z, Y, T
    inf = float("inf")
    h = [inf] * (n_nodes + 2)
    h[S] = zero
    order = [S] + list(range(n_nodes)) + [T]
    for a in order:
        if h[a] == inf:
            continue
        for e in g.adj[a]:
            if g.cap[e] > 0 and h[a] + g.cost[e] < h[g.to[e]]:
                h[g.to[e]] = h[a] + g.cost[e]
    h = [zero if v == inf else v for v in h]

    augmentations = 0
    while True:
        dist = [inf] * (n_nodes + 2)
        parent = [-1] * (n_nodes + 2)
        dist[S] = zero
        heap = [(zero, S)]
        done = [False] * (n_nodes + 2)
        while heap:
            d, a = heapq.heappop(heap)
            if done[a]:
                continue
            done[a] = True
            for e in g.adj[a]:
                if g.cap[e] <= 0:
                    continue
                b = g.to[e]
                rc = g.cost[e] + h[a] - h[b]
                if rc < 0:
                    rc = zero
                nd = d + rc
                if nd < dist[b]:
                    dist[b] = nd
                    parent[b] = e
                    heapq.heappush(heap, (nd, b))
        if dist[T] == inf:
            break
        for w in range(n_nodes + 2):
            if dist[w] < inf:
                h[w] = h[w] + dist[w]
        if h[T] - h[S] >= -eps:
            break
        amount = None
        w = T
        while w != S:
            e = parent[w]
            amount = g.cap[e] if amount is None else min(amount, g.cap[e])
            w = g.to[e ^ 1]
        w = T
        while w != S:
            e = parent[w]
            g.cap[e] -= amount
            g.cap[e ^ 1] += amount
            w = g.to[e ^ 1]
        augmentations += 1

    flow = [g.cap[e ^ 1] for e in arc_edges]
    disposal = [g.cap[e ^ 1] for e in disp_edges] if disp_edges else [zero] * nz
    return flow, disposal, augmentations


def _bellman_ford(n, edges, source, zero, eps=0):
    """Shortest distances from ``source``; ``edges`` are (a, b, w) meaning U[b] <= U[a] + w.

    Relaxations must improve by more than ``eps`` (float round-off on zero-cost cycles).
    """
    inf = float("inf")
    dist = [inf] * n
    dist[source] = zero
    for _ in range(n + 1):
        changed = False
        for a, b, w in edges:
            if dist[a] != inf and dist[a] + w < dist[b] - eps:
                dist[b] = dist[a] + w
                changed = True
        if not changed:
            return dist
    raise DualInconsistency("negative cycle in the optimality graph: flow is not optimal")


def _dual_graph(net, flow, disposal, sent, received, tol):
    """Difference constraints whose solutions are exactly the optimal potentials."""
    spec = net.spec
    nx, nz, ny = spec.shape
    conv, zero = _scalars(spec)
    O = net.n_nodes
    edges = []
    for (a, b), phi, f in zip(net.arcs, net.phi, flow):
        w = conv(phi)
        edges.append((b, a, -w))
        if f > tol:
            edges.append((a, b, w))
    for x in range(nx):
        edges.append((O, x, zero))
        if conv(spec.n[x]) - sent[x] > tol:
            edges.append((x, O, zero))
    for y in range(ny):
        yy = nx + nz + y
        edges.append((yy, O, zero))
        if conv(spec.m[y]) - received[y] > tol:
            edges.append((O, yy, zero))
    if spec.free_disposal:
        for z in range(nz):
            edges.append((O, nx + z, zero))
            if disposal[z] > tol:
                edges.append((nx + z, O, zero))
    return edges


@dataclass(frozen=True, eq=False)
class Flow:
    """Arc flows in ``net.arcs`` order plus per-quality disposal (zero without free disposal).

    ``exact`` keeps the Python-int values when the market is integral.
    """

    values: np.ndarray
    disposal: np.ndarray
    exact: tuple | None = None
    augmentations: int = 0

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @classmethod
    def from_values(cls, net, values, disposal=None):
        nz = net.spec.shape[1]
        values = np.asarray(values, dtype=np.float64)
        disposal = np.zeros(nz) if disposal is None else np.asarray(disposal, dtype=np.float64)
        exact = None
        if net.spec.exact and np.all(values == np.round(values)) and np.all(disposal == np.round(disposal)):
            exact = (tuple(int(v) for v in values), tuple(int(d) for d in disposal))
        return cls(values, disposal, exact)

    def _scalars(self):
        if self.exact is not None:
            return list(self.exact[0]), list(self.exact[1])
        return list(self.values), list(self.disposal)


def _node_totals(net, flow_vals):
    nx, nz, ny = net.spec.shape
    sent = [0] * nx
    received = [0] * ny
    for (a, b), f in zip(net.arcs, flow_vals):
        if a < nx:
            sent[a] += f
        else:
            received[b - nx - nz] += f
    return sent, received


def _mass_tol(spec):
    return 0 if spec.exact else DEFAULT_TOL * (1.0 + float(max(spec.n.max(), spec.m.max())))


def _extremes(net, flow):
    spec = net.spec
    nx, nz, ny = spec.shape
    _, zero = _scalars(spec)
    flow_vals, disposal = flow._scalars()
    if not spec.exact:
        flow_vals = [float(f) for f in flow_vals]
    sent, received = _node_totals(net, flow_vals)
    edges = _dual_graph(net, flow_vals, disposal, sent, received, _mass_tol(spec))
    O = net.n_nodes
    eps = 0 if spec.exact else 1e-11 * (1.0 + float(np.abs(net.phi).max(initial=0.0)))
    hi = _bellman_ford(O + 1, edges, O, zero, eps)
    to_o = _bellman_ford(O + 1, [(b, a, w) for a, b, w in edges], O, zero, eps)

    inf = float("inf")
    X = range(nx)
    Z = range(nx, nx + nz)
    Y = range(nx + nz, nx + nz + ny)

    def arr(vals):
        return np.array([float(v) for v in vals], dtype=np.float64)

    return ExtremalDuals(
        u_min=arr(-hi[i] for i in X),
        u_max=arr(to_o[i] for i in X),
        v_min=arr(-to_o[i] for i in Y),
        v_max=arr(hi[i] for i in Y),
        p_min=arr(-hi[i] if hi[i] != inf else -inf for i in Z),
        p_max=arr(to_o[i] if to_o[i] != inf else inf for i in Z),
    )


def _potential_from(net, ext):
    spec = net.spec
    u, v = ext.u_min, ext.v_max
    p = ext.p_min.copy()
    for z in np.flatnonzero(~np.isfinite(p)):
        # no finite demand arc: the tightest producer-side price is feasible
        cand = (u - spec.alpha[:, z]).min()
        p[z] = cand if np.isfinite(cand) else 0.0
    if spec.free_disposal:
        p = np.maximum(p, 0.0)
    # a zero-mass type leaves its own utility unbounded in the dual; use its envelope value
    u = np.where(np.isfinite(u), u, np.maximum((spec.alpha + p[None, :]).max(axis=1), 0.0))
    v = np.where(np.isfinite(v), v, np.maximum((spec.gamma - p[:, None]).max(axis=0), 0.0))
    return np.concatenate([-u, -p, v])


def _total(net, flow):
    if flow.exact is not None:
        return float(sum(f * int(ph) for f, ph in zip(flow.exact[0], net.phi)))
    return float(flow.values @ net.phi)


def solve_max_surplus_flow(net: FlowNetwork):
    """Optimal flow, an optimal potential, and the maximal total surplus.

    The potential follows ``U_x = -u_x``, ``U_z = -p_z``, ``U_y = v_y`` and is the
    consumer-optimal vertex of the dual set (largest ``U`` on every node).
    """
    vals, disposal, augmentations = _ssp(net)
    exact = (tuple(vals), tuple(disposal)) if net.spec.exact else None
    flow = Flow(
        np.asarray(vals, dtype=np.float64), np.asarray(disposal, dtype=np.float64), exact, augmentations
    )
    potential = _potential_from(net, _extremes(net, flow))
    return flow, potential, _total(net, flow)


def extremal_duals(net: FlowNetwork, flow) -> ExtremalDuals:
    """Producer- and consumer-optimal duals consistent with the optimal ``flow``."""
    if not isinstance(flow, Flow):
        flow = Flow.from_values(net, flow)
    return _extremes(net, flow)


def extract_equilibrium(net: FlowNetwork, flow, potential, tol: float = DEFAULT_TOL) -> EquilibriumOutcome:
    """Map an optimal (flow, potential) pair back to prices, allocation and utilities.

    Utilities are reset to their envelope values ``u = max(alpha + p, 0)`` and
    ``v = max(gamma - p, 0)``.
    """
    spec = net.spec
    nx, nz, ny = spec.shape
    if not isinstance(flow, Flow):
        flow = Flow.from_values(net, flow)
    values = flow.values
    U = np.asarray(potential, dtype=np.float64)
    p = -U[nx:nx + nz]

    slack = gradient(net, U) - net.phi
    scale = 1.0 + float(np.abs(net.phi).max(initial=0.0)) + float(np.abs(U).max(initial=0.0))
    if slack.size and (slack.min() < -tol * scale or np.any(np.abs(slack[values > 0]) > tol * scale)):
        raise DualInconsistency(f"complementary slackness violated (min slack {slack.min():g})")

    mu_xz = np.zeros((nx, nz))
    mu_zy = np.zeros((nz, ny))
    for (a, b), f in zip(net.arcs, values):
        if a < nx:
            mu_xz[a, b - nx] = f
        else:
            mu_zy[a - nx, b - nx - nz] = f
    allocation = Allocation(mu_xz, mu_zy)

    u = np.maximum((spec.alpha + p[None, :]).max(axis=1), 0.0)
    v = np.maximum((spec.gamma - p[:, None]).max(axis=0), 0.0)
    ext = _extremes(net, flow)
    bounds = PriceBounds(ext.p_min, ext.p_max)
    welfare = _total(net, flow)
    dual = float(spec.n @ u + spec.m @ v)
    diagnostics = {
        "augmentations": flow.augmentations,
        "exact_arithmetic": spec.exact,
        "dual_value": dual,
        "duality_gap": abs(welfare - dual),
        "traded": (mu_xz.sum(axis=0)).tolist(),
    }
    return EquilibriumOutcome(p, allocation, u, v, welfare, bounds, ext, diagnostics)


def solve_equilibrium(spec: MarketSpec) -> EquilibriumOutcome:
    """Build the network, solve it and extract the equilibrium in one call."""
    net = build_network(spec)
    flow, potential, _ = solve_max_surplus_flow(net)
    return extract_equilibrium(net, flow, potential)


def dual_value(net: FlowNetwork, potential) -> float:
    """``sum_w U_w N_w``: the objective of the dual flow problem."""
    return float(np.asarray(potential, dtype=np.float64) @ net.node_mass)


# ---------------------------------------------------------------- oracle

def assignment_oracle(spec: MarketSpec, max_states: int = 10**6) -> float:
    """Best total indirect surplus over all partial matchings of individuals.

    Individuals of one type are interchangeable, so the search runs over
    integer match-count matrices ``k[x, y]`` (row sums <= n_x, column sums <=
    m_y), exhaustively and memoized on remaining consumer capacity.  Unrelated
    to the flow formulation: it only uses the indirect surplus ``phi``.
    """
    if not spec.integral:
        raise NonIntegralMasses("assignment oracle needs integer masses")
    n = [int(v) for v in spec.n]
    m = [int(v) for v in spec.m]
    if sum(n) * sum(m) > max_states or np.prod([c + 1 for c in m], dtype=float) > max_states:
        raise TooLarge(f"population too large for enumeration ({sum(n)} x {sum(m)})")
    phi, _ = indirect_surplus_matrix(spec)
    nx, ny = phi.shape
    feasible = [[y for y in range(ny) if np.isfinite(phi[x, y])] for x in range(nx)]

    def count_vectors(total, caps, ys):
        # all k over ys with k[y] <= caps[y], sum(k) <= total
        ranges = [range(min(caps[y], total) + 1) for y in ys]
        for ks in itertools.product(*ranges):
            if sum(ks) <= total:
                yield ks

    @lru_cache(maxsize=None)
    def best(x, caps):
        if x == nx:
            return 0.0
        ys = feasible[x]
        result = -np.inf
        for ks in count_vectors(n[x], caps, ys):
            rest = list(caps)
            gain = 0.0
            for y, k in zip(ys, ks):
                rest[y] -= k
                gain += k * phi[x, y]
            result = max(result, gain + best(x + 1, tuple(rest)))
        return result

    return float(best(0, tuple(m)))

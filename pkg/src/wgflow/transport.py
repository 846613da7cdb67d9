"""Optimal transport at desk scale: the exact Wasserstein-2 distance between
one-dimensional measures through their quantile functions, and the finite
primal/dual transportation problem solved by the transportation simplex with
a complementary-slackness duality certificate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import DomainError, Measure1D, QuantileGrid, quantile_pieces

BALANCE_TOL = 1e-12
MARGINAL_TOL = 1e-9
DUALITY_TOL = 1e-7
_SUPPORT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteInstance:
    """A balanced discrete transport instance.

    ``source_points``/``sink_points`` hold the locations as (count, dim)
    arrays, the mass vectors each sum to 1 within ``BALANCE_TOL``, and
    ``cost[i, j]`` is the unit transport cost, by default the squared
    Euclidean distance between the points.
    """

    source_points: np.ndarray
    source_masses: np.ndarray
    sink_points: np.ndarray
    sink_masses: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        sp = np.atleast_2d(np.asarray(self.source_points, dtype=float))
        tp = np.atleast_2d(np.asarray(self.sink_points, dtype=float))
        p = np.asarray(self.source_masses, dtype=float).reshape(-1)
        q = np.asarray(self.sink_masses, dtype=float).reshape(-1)
        c = np.asarray(self.cost, dtype=float)
        if sp.shape[0] != p.size or tp.shape[0] != q.size:
            raise DomainError("point and mass counts disagree")
        if np.any(p <= 0) or np.any(q <= 0):
            raise DomainError("masses must be positive")
        if abs(p.sum() - 1.0) > BALANCE_TOL or abs(q.sum() - 1.0) > BALANCE_TOL:
            raise DomainError("instance is unbalanced: masses must each sum to 1")
        if c.shape != (p.size, q.size):
            raise DomainError(f"cost shape {c.shape} does not match {(p.size, q.size)}")
        for name, arr in (
            ("source_points", sp),
            ("sink_points", tp),
            ("source_masses", p),
            ("sink_masses", q),
            ("cost", c),
        ):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @staticmethod
    def from_weighted_points(sources, sinks, cost=None) -> "DiscreteInstance":
        """Build from ``(point, mass)`` pairs; points may be scalars or vectors."""
        sp = np.atleast_2d(np.asarray([np.atleast_1d(pt) for pt, _ in sources], dtype=float))
        tp = np.atleast_2d(np.asarray([np.atleast_1d(pt) for pt, _ in sinks], dtype=float))
        p = np.asarray([m for _, m in sources], dtype=float)
        q = np.asarray([m for _, m in sinks], dtype=float)
        if cost is None:
            diff = sp[:, None, :] - tp[None, :, :]
            cost = np.sum(diff * diff, axis=2)
        return DiscreteInstance(sp, p, tp, q, np.asarray(cost, dtype=float))

    @staticmethod
    def from_json_dict(d: dict) -> "DiscreteInstance":
        sources = [(pt, m) for pt, m in d["sources"]]
        sinks = [(pt, m) for pt, m in d["sinks"]]
        cost = d.get("cost")
        return DiscreteInstance.from_weighted_points(sources, sinks, cost)


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """A coupling matrix with its objective value."""

    x: np.ndarray
    objective: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).copy()
        if np.any(x < -MARGINAL_TOL):
            raise DomainError("transport plan has negative entries")
        x[x < 0.0] = 0.0
        x.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "objective", float(self.objective))

    def check(self, inst: DiscreteInstance, tol: float = MARGINAL_TOL):
        if np.max(np.abs(self.x.sum(axis=1) - inst.source_masses)) > tol:
            raise DomainError("plan row sums do not match source masses")
        if np.max(np.abs(self.x.sum(axis=0) - inst.sink_masses)) > tol:
            raise DomainError("plan column sums do not match sink masses")
        if abs(float(np.sum(self.x * inst.cost)) - self.objective) > tol:
            raise DomainError("plan objective is inconsistent with its matrix")


@dataclass(frozen=True, eq=False)
class DualSolution:
    """Feasible dual potentials with their objective value."""

    u: np.ndarray
    v: np.ndarray
    objective: float

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float).copy()
        v = np.asarray(self.v, dtype=float).copy()
        u.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "objective", float(self.objective))

    def check(self, inst: DiscreteInstance, tol: float = MARGINAL_TOL):
        slack = inst.cost - self.u[:, None] - self.v[None, :]
        if np.min(slack) < -tol:
            raise DomainError("dual potentials violate u_i + v_j <= c_ij")
        obj = float(inst.source_masses @ self.u + inst.sink_masses @ self.v)
        if abs(obj - self.objective) > tol:
            raise DomainError("dual objective is inconsistent with its potentials")


def w2_quantile(g1: QuantileGrid, g2: QuantileGrid) -> float:
    """Discrete Wasserstein-2 distance sqrt((1/n) sum (X1_i - X2_i)^2)."""
    if g1.n != g2.n:
        raise DomainError(f"grid sizes differ: {g1.n} vs {g2.n}")
    d = g1.values - g2.values
    return float(np.sqrt(np.mean(d * d)))


def w2_exact_discrete(m1: Measure1D, m2: Measure1D) -> float:
    """Exact Wasserstein-2 distance between two measures.

    The squared distance is the integral over (0, 1) of the squared quantile
    difference; both quantiles are piecewise affine, so the integrand is
    integrated in closed form on the merged breakpoints.
    """
    p1 = quantile_pieces(m1)
    p2 = quantile_pieces(m2)
    breaks = sorted({s for seg in p1 for s in seg[:2]} | {s for seg in p2 for s in seg[:2]})
    total = 0.0
    i1 = i2 = 0
    for u, v in zip(breaks[:-1], breaks[1:]):
        if v - u <= 0.0:
            continue
        mid = 0.5 * (u + v)
        while i1 + 1 < len(p1) and p1[i1][1] <= mid:
            i1 += 1
        while i2 + 1 < len(p2) and p2[i2][1] <= mid:
            i2 += 1
        a = p1[i1][2] - p2[i2][2]
        b = p1[i1][3] - p2[i2][3]
        total += (
            a * a * (v - u)
            + a * b * (v * v - u * u)
            + b * b * (v**3 - u**3) / 3.0
        )
    return float(np.sqrt(max(total, 0.0)))


def _northwest_corner(p: np.ndarray, q: np.ndarray):
    m, n = p.size, q.size
    x = np.zeros((m, n))
    basis = []
    a = p.copy()
    b = q.copy()
    i = j = 0
    while True:
        t = min(a[i], b[j])
        x[i, j] = t
        basis.append((i, j))
        a[i] -= t
        b[j] -= t
        if i == m - 1 and j == n - 1:
            break
        if (a[i] <= b[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    return x, basis


def _tree_potentials(basis, cost, m, n):
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    adj_row = [[] for _ in range(m)]
    adj_col = [[] for _ in range(n)]
    for i, j in basis:
        adj_row[i].append(j)
        adj_col[j].append(i)
    u[0] = 0.0
    stack = [("r", 0)]
    while stack:
        kind, k = stack.pop()
        if kind == "r":
            for j in adj_row[k]:
                if np.isnan(v[j]):
                    v[j] = cost[k, j] - u[k]
                    stack.append(("c", j))
        else:
            for i in adj_col[k]:
                if np.isnan(u[i]):
                    u[i] = cost[i, k] - v[k]
                    stack.append(("r", i))
    if np.any(np.isnan(u)) or np.any(np.isnan(v)):
        raise RuntimeError("basis graph is not a spanning tree")
    return u, v


def _basis_cycle(basis, enter, m, n):
    """Cells of the unique cycle created by adding ``enter`` to the basis tree.

    Returns the cycle as a list starting with ``enter``, signs alternating
    +, -, +, ... along it.
    """
    i0, j0 = enter
    adj = {}
    for i, j in basis:
        adj.setdefault(("r", i), []).append(("c", j))
        adj.setdefault(("c", j), []).append(("r", i))
    start, goal = ("r", i0), ("c", j0)
    parent = {start: None}
    stack = [start]
    while stack:
        node = stack.pop()
        if node == goal:
            break
        for nxt in adj.get(node, []):
            if nxt not in parent:
                parent[nxt] = node
                stack.append(nxt)
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    path.reverse()  # r(i0) ... c(j0)
    cells = []
    for aa, bb in zip(path[:-1], path[1:]):
        (ka, va), (kb, vb) = aa, bb
        cells.append((va, vb) if ka == "r" else (vb, va))
    return [enter] + cells[::-1]


def solve_primal(inst: DiscreteInstance, max_pivots: int | None = None) -> TransportPlan:
    """Minimal-cost plan via the transportation simplex.

    Bland's least-index rule is used for both the entering and the leaving
    cell, which rules out cycling on degenerate instances.
    """
    p = inst.source_masses
    q = inst.sink_masses
    cost = inst.cost
    m, n = cost.shape
    x, basis = _northwest_corner(p, q)
    if max_pivots is None:
        max_pivots = 200 * m * n + 200
    for _ in range(max_pivots):
        u, v = _tree_potentials(basis, cost, m, n)
        reduced = cost - u[:, None] - v[None, :]
        for i, j in basis:
            reduced[i, j] = 0.0
        flat = reduced.reshape(-1)
        candidates = np.flatnonzero(flat < -1e-12)
        if candidates.size == 0:
            break
        enter = (int(candidates[0]) // n, int(candidates[0]) % n)
        cycle = _basis_cycle(basis, enter, m, n)
        minus = cycle[1::2]
        theta = min(x[c] for c in minus)
        leave = min(c for c in minus if x[c] == theta)
        for k, c in enumerate(cycle):
            x[c] += theta if k % 2 == 0 else -theta
        x[leave] = 0.0
        basis.remove(leave)
        basis.append(enter)
    else:
        raise RuntimeError("transportation simplex did not terminate")
    x[x < 0.0] = 0.0
    plan = TransportPlan(x, float(np.sum(cost * x)))
    plan.check(inst)
    return plan


def solve_dual(inst: DiscreteInstance, plan: TransportPlan) -> DualSolution:
    """Dual potentials certifying the optimality of ``plan``.

    Potentials are recovered from complementary slackness on the plan's
    support graph; when that graph is disconnected the free per-component
    shifts are fixed by the tightest feasible values (a shortest-path
    computation over the inter-component slack).  Infeasibility after the
    recovery means the plan was not optimal.
    """
    cost = inst.cost
    m, n = cost.shape
    support = plan.x > _SUPPORT_TOL
    u = np.zeros(m)
    v = np.zeros(n)
    comp_row = np.full(m, -1)
    comp_col = np.full(n, -1)
    ncomp = 0
    for i0 in range(m):
        if comp_row[i0] >= 0:
            continue
        comp_row[i0] = ncomp
        u[i0] = 0.0
        stack = [("r", i0)]
        while stack:
            kind, k = stack.pop()
            if kind == "r":
                for j in np.flatnonzero(support[k]):
                    if comp_col[j] < 0:
                        comp_col[j] = ncomp
                        v[j] = cost[k, j] - u[k]
                        stack.append(("c", int(j)))
            else:
                for i in np.flatnonzero(support[:, k]):
                    if comp_row[i] < 0:
                        comp_row[i] = ncomp
                        u[i] = cost[i, k] - v[k]
                        stack.append(("r", int(i)))
        ncomp += 1
    if np.any(comp_col < 0):
        # columns with no support edge cannot occur for positive sink masses
        raise DomainError("plan support misses a sink; plan is not feasible")

    if ncomp > 1:
        slack = cost - u[:, None] - v[None, :]
        # tightest shift delta_a - delta_b <= min slack over rows(a) x cols(b)
        w = np.full((ncomp, ncomp), np.inf)
        for a in range(ncomp):
            rows = comp_row == a
            for b in range(ncomp):
                cols = comp_col == b
                if a != b and rows.any() and cols.any():
                    w[a, b] = float(np.min(slack[np.ix_(rows, cols)]))
        delta = np.zeros(ncomp)
        for sweep in range(ncomp + 1):
            changed = False
            for a in range(ncomp):
                for b in range(ncomp):
                    if np.isfinite(w[a, b]) and delta[a] > delta[b] + w[a, b] + 1e-15:
                        delta[a] = delta[b] + w[a, b]
                        changed = True
            if not changed:
                break
        else:
            raise DomainError(
                "no feasible dual completion exists; the plan is not optimal"
            )
        u = u + delta[comp_row]
        v = v - delta[comp_col]

    dual = DualSolution(
        u, v, float(inst.source_masses @ u + inst.sink_masses @ v)
    )
    dual.check(inst)
    if abs(dual.objective - plan.objective) > DUALITY_TOL:
        raise DomainError(
            "duality gap exceeds tolerance; the supplied plan is not optimal"
        )
    return dual

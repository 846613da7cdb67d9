"""Closed-form reference solutions for the pure-cusp potentials and
PDE-level diagnostics that any trajectory can be checked against.

For the repulsive cusp the quantile evolves linearly in time at every mass
label.  For the attractive cusp the state equals the exact isotonic
projection of the time-reversed linear transport, which reproduces sticky
collapse without case analysis; the projection is computed in closed form on
the piecewise affine quantile, including partial pooling of rising pieces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .jko import FlowTrajectory
from .measures import DomainError, Measure1D, QuantileGrid, quantile_pieces
from .potential import Potential, velocity_profile
from .transport import w2_quantile

KIND_REPULSIVE = "repulsive_cusp_diffusion"
KIND_ATTRACTIVE = "attractive_cusp_collapse"


@dataclass(frozen=True)
class ExactSolution:
    """Reference flow for W(x) = -eta_abs*|x| (diffusion) or +eta_abs*|x|
    (collapse) started from a finitely described measure."""

    kind: str
    init: Measure1D
    eta_abs: float

    def __post_init__(self):
        if self.kind not in (KIND_REPULSIVE, KIND_ATTRACTIVE):
            raise DomainError(f"unknown exact-solution kind {self.kind!r}")
        if not self.eta_abs > 0.0:
            raise DomainError("eta_abs must be positive")


# ---------------------------------------------------------------------------
# exact isotonic projection of a piecewise affine function on (0, 1)
#
# Elements are ["raw", s0, s1, a, b] with value a + b*s and b >= 0, or
# ["pool", s0, s1, value] for a flat stretch produced by pooling.  Decreasing
# input pieces enter as pools; violating junctions are repaired right to
# left.  Pools absorb flat pieces wholesale and split rising pieces at the
# point where the pooled mean meets the function value; a pool flanked by
# rising pieces on both sides is resolved jointly, since fitting one side at
# a time need not terminate.


def _start_value(el):
    return el[3] + el[4] * el[1] if el[0] == "raw" else el[3]


def _end_value(el):
    return el[3] + el[4] * el[2] if el[0] == "raw" else el[3]


def _piece_mean(s0, s1, a, b):
    return a + b * 0.5 * (s0 + s1)


def _violates(left, right) -> bool:
    lo, hi = _start_value(right), _end_value(left)
    return lo < hi - 1e-12 * max(1.0, abs(lo), abs(hi))


def _merge_pools(stack, k):
    left, right = stack[k], stack[k + 1]
    w1 = left[2] - left[1]
    w2 = right[2] - right[1]
    stack[k : k + 2] = [
        ["pool", left[1], right[2], (w1 * left[3] + w2 * right[3]) / (w1 + w2)]
    ]


def _absorb_right(stack, k):
    """Pool at k swallows the whole element at k+1."""
    pool, el = stack[k], stack[k + 1]
    wp = pool[2] - pool[1]
    width = el[2] - el[1]
    mean = el[3] if el[0] == "pool" else _piece_mean(el[1], el[2], el[3], el[4])
    stack[k : k + 2] = [
        ["pool", pool[1], el[2], (wp * pool[3] + width * mean) / (wp + width)]
    ]


def _absorb_left(stack, k):
    """Pool at k+1 swallows the whole element at k."""
    el, pool = stack[k], stack[k + 1]
    wp = pool[2] - pool[1]
    width = el[2] - el[1]
    mean = el[3] if el[0] == "pool" else _piece_mean(el[1], el[2], el[3], el[4])
    stack[k : k + 2] = [
        ["pool", el[1], pool[2], (wp * pool[3] + width * mean) / (wp + width)]
    ]


def _eat_head(stack, k):
    """Pool at k extends into the rising piece at k+1 with a smooth fit."""
    _, ps0, ps1, v = stack[k]
    _, s0, s1, a, b = stack[k + 1]
    wp = ps1 - ps0
    w = -wp + math.sqrt(wp * wp + 2.0 * wp * (v - a - b * s0) / b)
    if w >= s1 - s0:
        _absorb_right(stack, k)
        return
    split = s0 + w
    stack[k : k + 2] = [
        ["pool", ps0, split, a + b * split],
        ["raw", split, s1, a, b],
    ]


def _eat_tail(stack, k):
    """Pool at k+1 extends into the rising piece at k with a smooth fit."""
    _, s0, s1, a, b = stack[k]
    _, ps0, ps1, v = stack[k + 1]
    wp = ps1 - ps0
    w = -wp + math.sqrt(wp * wp - 2.0 * wp * (v - a - b * s1) / b)
    if w >= s1 - s0:
        _absorb_left(stack, k)
        return
    split = s1 - w
    stack[k : k + 2] = [
        ["raw", s0, split, a, b],
        ["pool", split, ps1, a + b * split],
    ]


def _joint_fit(stack, k):
    """Refit a pool flanked by rising pieces: stack[k..k+2] = [A, P, B].

    The pooled interval [alpha, beta] of the local solution has each end
    either at a smooth-fit point (pool value equals the piece value there)
    or at the outer edge of the flanking piece (that piece fully absorbed).
    Every end pattern is closed form; the pattern whose side conditions hold
    (scored, so boundary ties resolve cleanly) is the local solution.
    Resolving the triple in one shot is what makes the repair loop
    terminate: alternating single-sided fits can contract forever without
    reaching the common fit.
    """
    _, l0, l1, a1, b1 = stack[k]
    _, p0, p1, v_pool = stack[k + 1]
    _, r0, r1, a2, b2 = stack[k + 2]
    span_p = p1 - p0
    content = v_pool * span_p
    fa0, fa1 = a1 + b1 * l0, a1 + b1 * l1
    fb0, fb1 = a2 + b2 * r0, a2 + b2 * r1
    int_a = 0.5 * (fa0 + fa1) * (l1 - l0)
    int_b = 0.5 * (fb0 + fb1) * (r1 - r0)
    width_a = l1 - l0
    width_b = r1 - r0

    def _root(arg):
        return math.sqrt(arg) if arg >= 0.0 else None

    def left_smooth(extra_content, base_span):
        """Eat w off A's tail so that mean = f_A(l1 - w); None if no root."""
        w = _root(base_span * base_span - 2.0 * (extra_content - fa1 * base_span) / b1)
        return None if w is None else w - base_span

    def right_smooth(extra_content, base_span):
        """Eat w off B's head so that mean = f_B(r0 + w); None if no root."""
        w = _root(base_span * base_span - 2.0 * (fb0 * base_span - extra_content) / b2)
        return None if w is None else w - base_span

    # every end pattern is scored by its worst violated side condition; the
    # true local solution scores zero up to roundoff
    candidates: list[tuple[float, float, float, float]] = []

    def add(score, alpha, beta, v):
        candidates.append((max(score, 0.0), alpha, beta, v))

    # (smooth, r0): fit inside A, leave B
    w = left_smooth(content, span_p)
    if w is not None:
        alpha = min(max(l1 - w, l0), l1)
        v = a1 + b1 * alpha
        add(max(-w, w - width_a, v - fb0), alpha, p1, v)

    # (l1, smooth): leave A, fit inside B
    w = right_smooth(content, span_p)
    if w is not None:
        beta = min(max(r0 + w, r0), r1)
        v = a2 + b2 * beta
        add(max(-w, w - width_b, fa1 - v), p0, beta, v)

    # (smooth, smooth): common fit value; the defect is quadratic in v
    def g(v):
        alpha = (v - a1) / b1
        beta = (v - a2) / b2
        eaten_a = a1 * (l1 - alpha) + 0.5 * b1 * (l1 * l1 - alpha * alpha)
        eaten_b = a2 * (beta - r0) + 0.5 * b2 * (beta * beta - r0 * r0)
        return v * (beta - alpha) - (content + eaten_a + eaten_b)

    v_lo, v_hi = max(fa0, fb0), min(fa1, fb1)
    if v_lo <= v_hi:
        g0, g1, g2 = g(0.0), g(1.0), g(2.0)
        c2 = 0.5 * (g2 - 2.0 * g1 + g0)
        c1 = g1 - g0 - c2
        roots = []
        if abs(c2) < 1e-14 * max(1.0, abs(c1), abs(g0)):
            if c1 != 0.0:
                roots = [-g0 / c1]
        else:
            disc = c1 * c1 - 4.0 * c2 * g0
            if disc >= 0.0:
                sq = math.sqrt(disc)
                roots = [(-c1 - sq) / (2.0 * c2), (-c1 + sq) / (2.0 * c2)]
        for v in roots:
            alpha = min(max((v - a1) / b1, l0), l1)
            beta = min(max((v - a2) / b2, r0), r1)
            add(max(v_lo - v, v - v_hi), alpha, beta, v)

    # (l0, r0): absorb A whole, leave B
    v = (content + int_a) / (span_p + width_a)
    add(max(v - fa0, v - fb0), l0, p1, v)

    # (l1, r1): leave A, absorb B whole
    v = (content + int_b) / (span_p + width_b)
    add(max(fb1 - v, fa1 - v), p0, r1, v)

    # (l0, smooth): absorb A whole, fit inside B
    w = right_smooth(content + int_a, span_p + width_a)
    if w is not None:
        beta = min(max(r0 + w, r0), r1)
        v = a2 + b2 * beta
        add(max(-w, w - width_b, v - fa0), l0, beta, v)

    # (smooth, r1): fit inside A, absorb B whole
    w = left_smooth(content + int_b, span_p + width_b)
    if w is not None:
        alpha = min(max(l1 - w, l0), l1)
        v = a1 + b1 * alpha
        add(max(-w, w - width_a, fb1 - v), alpha, r1, v)

    # (l0, r1): absorb both
    v = (content + int_a + int_b) / (span_p + width_a + width_b)
    add(max(v - fa0, fb1 - v), l0, r1, v)

    _, alpha, beta, v = min(candidates, key=lambda c: c[0])
    new: list[list] = []
    if alpha > l0:
        new.append(["raw", l0, alpha, a1, b1])
    new.append(["pool", alpha, beta, v])
    if beta < r1:
        new.append(["raw", beta, r1, a2, b2])
    stack[k : k + 3] = new


def _repair(stack):
    guard = 0
    while True:
        guard += 1
        if guard > 10000:
            raise RuntimeError("isotonic repair did not terminate")
        bad = None
        for k in range(len(stack) - 1):
            if _violates(stack[k], stack[k + 1]):
                bad = k
        if bad is None:
            return
        left, right = stack[bad], stack[bad + 1]
        if left[0] == "pool" and right[0] == "pool":
            _merge_pools(stack, bad)
        elif left[0] == "pool":
            if right[4] == 0.0:
                _absorb_right(stack, bad)
            elif bad - 1 >= 0 and stack[bad - 1][0] == "raw" and stack[bad - 1][4] > 0.0:
                _joint_fit(stack, bad - 1)
            else:
                _eat_head(stack, bad)
        elif right[0] == "pool":
            if left[4] == 0.0:
                _absorb_left(stack, bad)
            elif bad + 2 < len(stack) and stack[bad + 2][0] == "raw" and stack[bad + 2][4] > 0.0:
                _joint_fit(stack, bad)
            else:
                _eat_tail(stack, bad)
        else:
            raise AssertionError("rising pieces cannot violate each other")


def _isotonic_pieces(pieces):
    """Isotonic projection of a piecewise affine function given as
    (s0, s1, a, b) tuples with only upward jumps between pieces."""
    stack: list[list] = []
    for s0, s1, a, b in pieces:
        if b >= 0.0:
            stack.append(["raw", s0, s1, a, b])
        else:
            stack.append(["pool", s0, s1, _piece_mean(s0, s1, a, b)])
        _repair(stack)
    return stack


def _transported_pieces(sol: ExactSolution, t: float):
    """Pieces of X0(s) + sign * eta_abs * t * (2s - 1) before projection."""
    sign = 1.0 if sol.kind == KIND_REPULSIVE else -1.0
    shift = sign * sol.eta_abs * t
    return [
        (s0, s1, a - shift, b + 2.0 * shift)
        for s0, s1, a, b in quantile_pieces(sol.init)
    ]


def _structure(sol: ExactSolution, t: float):
    pieces = _transported_pieces(sol, t)
    if sol.kind == KIND_REPULSIVE:
        # slopes b + 2 eta t stay nonnegative and jumps stay upward
        return [["raw", s0, s1, a, b] for s0, s1, a, b in pieces]
    return _isotonic_pieces(pieces)


def _eval_structure(structure, z: float) -> float:
    for el in structure:
        if z < el[2]:
            return _start_value(el) + (el[4] * (z - el[1]) if el[0] == "raw" else 0.0)
    el = structure[-1]
    return _end_value(el) if el[0] == "raw" else el[3]


def exact_quantile(sol: ExactSolution, t: float, z: float) -> float:
    """Quantile of the reference solution at time ``t`` and mass label ``z``."""
    if t < 0.0:
        raise DomainError(f"time {t} must be nonnegative")
    if not 0.0 < z < 1.0:
        raise DomainError(f"mass label {z} outside (0, 1)")
    return _eval_structure(_structure(sol, t), z)


def exact_grid(sol: ExactSolution, t: float, n: int) -> QuantileGrid:
    """Reference quantile sampled at the ``n`` midpoint nodes."""
    if n < 1:
        raise DomainError("grid size must be positive")
    structure = _structure(sol, t)
    nodes = (np.arange(n) + 0.5) / n
    return QuantileGrid([_eval_structure(structure, z) for z in nodes])


def exact_measure(sol: ExactSolution, t: float) -> Measure1D:
    """The reference state at time ``t`` as a measure.

    Rising stretches become uniform segments, flats and pools become atoms.
    """
    if t < 0.0:
        raise DomainError(f"time {t} must be nonnegative")
    atoms: list[tuple[float, float]] = []
    pieces: list[tuple[float, float, float]] = []
    for el in _structure(sol, t):
        mass = el[2] - el[1]
        if mass <= 0.0:
            continue
        if el[0] == "raw" and el[4] > 0.0:
            pieces.append((_start_value(el), _end_value(el), mass))
        else:
            atoms.append((_start_value(el), mass))
    return Measure1D(atoms=tuple(atoms), pieces=tuple(pieces))


def _is_collapsed(sol: ExactSolution, t: float) -> bool:
    structure = _structure(sol, t)
    return _end_value(structure[-1]) <= _start_value(structure[0])


def collapse_time(sol: ExactSolution, tol: float = 1e-12) -> float:
    """Smallest time at which the attractive solution is constant in ``z``."""
    if sol.kind != KIND_ATTRACTIVE:
        raise DomainError("collapse time is defined for the attractive kind only")
    if _is_collapsed(sol, 0.0):
        return 0.0
    hi = 1.0
    for _ in range(80):
        if _is_collapsed(sol, hi):
            break
        hi *= 2.0
    else:
        raise RuntimeError("no collapse found while doubling the horizon")
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if _is_collapsed(sol, mid):
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# trajectory diagnostics


@dataclass(frozen=True)
class SpaceTimeBump:
    """Compactly supported test function g(x) h(t) with exact derivatives.

    Each factor is ``(1 - u^2)^3`` with ``u`` the normalized offset inside
    the declared window and zero outside, so the function is C^2 with
    closed-form partials.
    """

    x_center: float
    x_radius: float
    t_center: float
    t_radius: float

    @staticmethod
    def _factor(y, c, r):
        u = (np.asarray(y, dtype=float) - c) / r
        base = np.where(np.abs(u) < 1.0, 1.0 - u * u, 0.0)
        return base**3

    @staticmethod
    def _dfactor(y, c, r):
        u = (np.asarray(y, dtype=float) - c) / r
        inside = np.abs(u) < 1.0
        base = np.where(inside, 1.0 - u * u, 0.0)
        return np.where(inside, -6.0 * u * base * base / r, 0.0)

    def value(self, x, t):
        return self._factor(x, self.x_center, self.x_radius) * self._factor(
            t, self.t_center, self.t_radius
        )

    def dx(self, x, t):
        return self._dfactor(x, self.x_center, self.x_radius) * self._factor(
            t, self.t_center, self.t_radius
        )

    def dt(self, x, t):
        return self._factor(x, self.x_center, self.x_radius) * self._dfactor(
            t, self.t_center, self.t_radius
        )


def default_bump_library(
    x_window: tuple[float, float], t_window: tuple[float, float]
) -> list[SpaceTimeBump]:
    """Four bumps spread over the declared space-time window."""
    xl, xr = x_window
    tl, tr = t_window
    xc, xr2 = 0.5 * (xl + xr), 0.5 * (xr - xl)
    tc, tr2 = 0.5 * (tl + tr), 0.5 * (tr - tl)
    return [
        SpaceTimeBump(xc, xr2, tc, tr2),
        SpaceTimeBump(xc - 0.4 * xr2, 0.6 * xr2, tc, tr2),
        SpaceTimeBump(xc + 0.4 * xr2, 0.6 * xr2, tc - 0.3 * tr2, 0.7 * tr2),
        SpaceTimeBump(xc, 0.8 * xr2, tc + 0.3 * tr2, 0.7 * tr2),
    ]


def weak_residual(
    traj: FlowTrajectory,
    W: Potential,
    test_fns: list[SpaceTimeBump],
    velocity_override=None,
) -> float:
    """Largest distributional defect of the trajectory over the test functions.

    Evaluates ``| integral of (d_t phi + v d_x phi) d(mu_t) dt
    + integral of phi(., t0) d(mu_0) |`` with midpoint quadrature in time and
    the quantile-grid expectation in space.  The velocity comes from the
    tie-excluding pairwise field unless ``velocity_override`` (a callable on
    grids) is supplied, which lets corrupted velocity fields be probed.
    """
    times = traj.times
    worst = 0.0
    midgrids = []
    velocities = []
    for k in range(times.size - 1):
        xm = 0.5 * (traj.states[k].values + traj.states[k + 1].values)
        gm = QuantileGrid(xm)
        midgrids.append(gm)
        if velocity_override is None:
            velocities.append(velocity_profile(W, gm))
        else:
            velocities.append(np.asarray(velocity_override(gm), dtype=float))
    for phi in test_fns:
        acc = 0.0
        for k in range(times.size - 1):
            tm = 0.5 * (times[k] + times[k + 1])
            xm = midgrids[k].values
            integrand = phi.dt(xm, tm) + velocities[k] * phi.dx(xm, tm)
            acc += (times[k + 1] - times[k]) * float(np.mean(integrand))
        acc += float(np.mean(phi.value(traj.states[0].values, times[0])))
        worst = max(worst, abs(acc))
    return worst


def metric_derivative_estimate(traj: FlowTrajectory) -> np.ndarray:
    """Per-step speed W2(X_k, X_{k+1}) / (t_{k+1} - t_k)."""
    if len(traj.states) < 2:
        raise DomainError("metric derivative needs at least two states")
    taus = np.diff(traj.times)
    return np.array(
        [
            w2_quantile(traj.states[k], traj.states[k + 1]) / taus[k]
            for k in range(taus.size)
        ]
    )

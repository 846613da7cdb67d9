"""Finite particle dynamics companion to the quantile flow.

Forward Euler with exact event location: between collisions the cusp force
is piecewise constant in the ordering, so the integrator is exact there.
Collisions of attracting particles merge sticky (mass-weighted position,
momentum preserved); a repulsive contact does not merge, and exactly
coincident particles feel no mutual force, so they travel together unless a
splitting branch is chosen explicitly through ``nonuniqueness_branches``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .jko import FlowTrajectory
from .measures import DomainError, Measure1D, to_quantile_grid
from .potential import Potential, deriv_smooth, evaluate
from .potential import interaction_energy as grid_interaction_energy

MASS_TOL = 1e-12
_EVENT_TOL = 1e-13


@dataclass(frozen=True, eq=False)
class ParticleState:
    """Sorted particle positions with positive masses summing to 1."""

    positions: np.ndarray
    masses: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float).reshape(-1).copy()
        m = np.asarray(self.masses, dtype=float).reshape(-1).copy()
        if x.size != m.size or x.size < 1:
            raise DomainError("positions and masses must have equal positive length")
        if np.any(np.diff(x) < 0.0):
            raise DomainError("positions must be sorted nondecreasing")
        if np.any(m <= 0.0):
            raise DomainError("masses must be positive")
        if abs(m.sum() - 1.0) > MASS_TOL:
            raise DomainError("masses must sum to 1")
        x.flags.writeable = False
        m.flags.writeable = False
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "time", float(self.time))

    @property
    def count(self) -> int:
        return self.positions.size

    def as_measure(self) -> Measure1D:
        return Measure1D(atoms=tuple(zip(self.positions, self.masses)))


def ode_rhs(W: Potential, st: ParticleState) -> np.ndarray:
    """Velocities dx_i/dt = -sum over j with x_j != x_i of m_j W'(x_i - x_j).

    Coincident particles are excluded, which makes a fully collapsed state
    stationary.
    """
    x = st.positions
    d = x[:, None] - x[None, :]
    # sign(0) = 0 and the smooth derivative vanishes at 0: ties drop out.
    force = (deriv_smooth(W, d) + W.eta * np.sign(d)) @ st.masses
    return -force


def interaction_energy(W: Potential, st: ParticleState) -> float:
    """(1/2) sum_{i,j} m_i m_j W(x_i - x_j)."""
    d = st.positions[:, None] - st.positions[None, :]
    return 0.5 * float(st.masses @ evaluate(W, d) @ st.masses)


def _merge_group(x, m, lo, hi):
    """Replace particles lo..hi (inclusive) by their sticky merge."""
    mass = m[lo : hi + 1].sum()
    pos = float(np.dot(x[lo : hi + 1], m[lo : hi + 1]) / mass)
    x_new = np.concatenate([x[:lo], [pos], x[hi + 1 :]])
    m_new = np.concatenate([m[:lo], [mass], m[hi + 1 :]])
    return x_new, m_new


def integrate(W: Potential, st0: ParticleState, t_end: float, dt: float) -> list[ParticleState]:
    """Advance the particle system to ``t_end``, recording every substep.

    A substep ends early when two neighbours would cross; they are then
    advanced exactly to contact.  At contact the one-sided relative velocity
    is ``-(m_i + m_j) * eta``: nonpositive (attractive or neutral cusp) means
    a sticky merge, positive (repulsive cusp) leaves the pair coincident.
    """
    if dt <= 0.0:
        raise DomainError(f"dt {dt} must be positive")
    x = st0.positions.copy()
    m = st0.masses.copy()
    t = st0.time
    out = [st0]
    horizon_tol = 1e-12 * max(1.0, abs(t_end))
    while t < t_end - horizon_tol:
        v = ode_rhs(W, ParticleState(x, m, t))
        h = min(dt, t_end - t)
        # earliest crossing among adjacent, distinct, approaching pairs
        whens = np.full(max(x.size - 1, 0), np.inf)
        for i in range(x.size - 1):
            gap = x[i + 1] - x[i]
            rel = v[i] - v[i + 1]
            if gap > 0.0 and rel > 0.0:
                whens[i] = gap / rel
        event = min(h, float(whens.min(initial=np.inf)))
        # every pair crossing within tolerance of the event takes part in it
        contact = [i for i in range(whens.size) if whens[i] <= event + _EVENT_TOL]
        x = x + event * v
        t = t + event
        if contact:
            # group simultaneous contacts into runs of coincident particles
            idx = contact
            groups: list[list[int]] = [[idx[0]]]
            for i in idx[1:]:
                if i == groups[-1][-1] + 1:
                    groups[-1].append(i)
                else:
                    groups.append([i])
            for grp in reversed(groups):
                lo, hi = grp[0], grp[-1] + 1
                meet = float(np.dot(x[lo : hi + 1], m[lo : hi + 1]) / m[lo : hi + 1].sum())
                x[lo : hi + 1] = meet
                if W.eta >= 0.0:
                    x, m = _merge_group(x, m, lo, hi)
        if np.any(np.diff(x) < 0.0):
            raise RuntimeError("particle ordering violated during integration")
        out.append(ParticleState(x.copy(), m.copy(), t))
    return out


def nonuniqueness_branches(x0: float, t: float, pair_onset: float = 1.0) -> list[ParticleState]:
    """Distinct solutions emanating from a single unit mass at ``x0`` under
    the repulsive unit cusp.

    Returns, at time ``t``: the stationary atom; the symmetric half-mass pair
    with gap ``t``; the symmetric third-mass triple with outer speed 2/3; and
    a pair that stays atomic until ``pair_onset`` and then opens.  Each curve
    satisfies the tie-excluding particle system exactly.
    """
    if t < 0.0:
        raise DomainError(f"time {t} must be nonnegative")
    if pair_onset <= 0.0:
        raise DomainError("pair_onset must be positive")
    stationary = ParticleState([x0], [1.0], t)
    pair = ParticleState([x0 - t / 2.0, x0 + t / 2.0], [0.5, 0.5], t)
    triple = ParticleState(
        [x0 - 2.0 * t / 3.0, x0, x0 + 2.0 * t / 3.0],
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        t,
    )
    s = max(0.0, t - pair_onset)
    delayed = ParticleState([x0 - s / 2.0, x0 + s / 2.0], [0.5, 0.5], t)
    return [stationary, pair, triple, delayed]


def quantile_trajectory(W: Potential, history: list[ParticleState], n: int) -> FlowTrajectory:
    """Empirical-measure quantile grids of a particle history.

    Useful for comparing particle runs with quantile flows; step costs use
    the actual substep lengths, which are nonuniform around collision events.
    """
    from .transport import w2_quantile

    states = [to_quantile_grid(st.as_measure(), n) for st in history]
    times = np.array([st.time for st in history])
    energies = np.array([grid_interaction_energy(W, g) for g in states])
    costs = []
    for k in range(len(states) - 1):
        span = times[k + 1] - times[k]
        if span <= 0.0:
            costs.append(0.0)
        else:
            costs.append(w2_quantile(states[k], states[k + 1]) ** 2 / (2.0 * span))
    return FlowTrajectory(times, tuple(states), energies, np.array(costs))

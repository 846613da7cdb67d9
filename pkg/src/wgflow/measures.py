"""Probability measures on the real line built from weighted atoms and
uniform-density segments, together with their cumulative distribution
functions and monotone rearrangements (quantile functions).

The quantile function uses the strict-inequality pseudo-inverse
``X(s) = inf {x : M(x) > s}``, evaluated in closed form from the measure's
breakpoint structure.  All types are immutable value objects.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

MASS_TOL = 1e-12


class DomainError(ValueError):
    """An operation was invoked outside its stated domain."""


def _as_float(x) -> float:
    v = float(x)
    if not np.isfinite(v):
        raise DomainError(f"non-finite value {x!r}")
    return v


@dataclass(frozen=True)
class Measure1D:
    """A probability measure: point masses plus uniform segments.

    ``atoms`` is a tuple of ``(position, mass)`` pairs and ``pieces`` a tuple
    of ``(left, right, mass)`` triples carrying uniform density
    ``mass / (right - left)``.  Atoms may sit inside pieces and positions may
    repeat; contributions add.  Total mass must be 1 within ``MASS_TOL``.
    """

    atoms: tuple[tuple[float, float], ...] = ()
    pieces: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        atoms = tuple((_as_float(x), _as_float(m)) for x, m in self.atoms)
        pieces = tuple(
            (_as_float(l), _as_float(r), _as_float(m)) for l, r, m in self.pieces
        )
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "pieces", pieces)
        for x, m in atoms:
            if m <= 0.0:
                raise DomainError(f"atom at {x} has nonpositive mass {m}")
        for l, r, m in pieces:
            if not l < r:
                raise DomainError(f"piece ({l}, {r}) is not an interval")
            if m <= 0.0:
                raise DomainError(f"piece ({l}, {r}) has nonpositive mass {m}")
        total = sum(m for _, m in atoms) + sum(m for *_, m in pieces)
        if abs(total - 1.0) > MASS_TOL:
            raise DomainError(f"total mass {total!r} differs from 1 beyond {MASS_TOL}")

    @staticmethod
    def dirac(x: float) -> "Measure1D":
        return Measure1D(atoms=((x, 1.0),))

    @staticmethod
    def uniform(left: float, right: float) -> "Measure1D":
        return Measure1D(pieces=((left, right, 1.0),))

    @staticmethod
    def from_atoms(pairs: Iterable[tuple[float, float]]) -> "Measure1D":
        return Measure1D(atoms=tuple(pairs))

    def support_bounds(self) -> tuple[float, float]:
        xs = [x for x, _ in self.atoms] + [v for l, r, _ in self.pieces for v in (l, r)]
        return min(xs), max(xs)

    def mean(self) -> float:
        """Exact first moment."""
        total = sum(x * m for x, m in self.atoms)
        total += sum(m * (l + r) / 2.0 for l, r, m in self.pieces)
        return total

    def second_moment(self) -> float:
        """Exact second moment; for a uniform segment E[X^2] = (l^2+lr+r^2)/3."""
        total = sum(x * x * m for x, m in self.atoms)
        total += sum(m * (l * l + l * r + r * r) / 3.0 for l, r, m in self.pieces)
        return total

    def to_json_dict(self) -> dict:
        return {
            "atoms": [[x, m] for x, m in self.atoms],
            "pieces": [[l, r, m] for l, r, m in self.pieces],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "Measure1D":
        atoms = tuple((float(x), float(m)) for x, m in d.get("atoms", []))
        pieces = tuple((float(l), float(r), float(m)) for l, r, m in d.get("pieces", []))
        return Measure1D(atoms=atoms, pieces=pieces)


@dataclass(frozen=True)
class QuantileGrid:
    """A nondecreasing sample of a quantile function at midpoint nodes.

    ``values[k]`` approximates ``X((k + 1/2) / n)`` for ``k = 0..n-1``.  The
    array is stored read-only; grids are safe to share.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if v.size < 1:
            raise DomainError("quantile grid needs at least one value")
        if not np.all(np.isfinite(v)):
            raise DomainError("quantile grid values must be finite")
        if np.any(np.diff(v) < 0.0):
            raise DomainError("quantile grid values must be nondecreasing")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) / self.n

    def __eq__(self, other) -> bool:
        return isinstance(other, QuantileGrid) and np.array_equal(
            self.values, other.values
        )

    def __hash__(self):
        return hash(self.values.tobytes())


def _breakpoints(m: Measure1D):
    """Breakpoint structure of the CDF.

    Returns sorted positions ``xs`` and arrays ``f_left``, ``f_right`` with the
    one-sided CDF values at each position; between consecutive positions the
    CDF is affine.
    """
    jumps: dict[float, float] = {}
    for x, mass in m.atoms:
        jumps[x] = jumps.get(x, 0.0) + mass
    points = set(jumps)
    for l, r, _ in m.pieces:
        points.add(l)
        points.add(r)
    xs = np.array(sorted(points), dtype=float)
    K = xs.size
    f_left = np.empty(K)
    f_right = np.empty(K)
    acc = 0.0
    for k in range(K):
        f_left[k] = acc
        acc += jumps.get(float(xs[k]), 0.0)
        f_right[k] = acc
        if k + 1 < K:
            lo, hi = xs[k], xs[k + 1]
            dens = 0.0
            for l, r, mass in m.pieces:
                if l <= lo and r >= hi:
                    dens += mass / (r - l)
            acc += dens * (hi - lo)
    return xs, f_left, f_right


def cdf(m: Measure1D, x: float) -> float:
    """CDF value ``mu((-inf, x])``; right-continuous and nondecreasing."""
    total = 0.0
    for p, mass in m.atoms:
        if p <= x:
            total += mass
    for l, r, mass in m.pieces:
        if x >= r:
            total += mass
        elif x > l:
            total += mass * (x - l) / (r - l)
    return min(max(total, 0.0), 1.0)


def _quantile_from_structure(xs, f_left, f_right, s: float) -> float:
    k = int(np.searchsorted(f_right, s, side="right"))
    if k >= xs.size:
        return float(xs[-1])
    if f_left[k] > s:
        d = (f_left[k] - f_right[k - 1]) / (xs[k] - xs[k - 1])
        return float(xs[k - 1] + (s - f_right[k - 1]) / d)
    return float(xs[k])


def quantile(m: Measure1D, s: float) -> float:
    """Monotone rearrangement ``inf {x : cdf(m, x) > s}`` for ``s`` in (0, 1)."""
    if not 0.0 < s < 1.0:
        raise DomainError(f"quantile level {s} outside (0, 1)")
    xs, f_left, f_right = _breakpoints(m)
    return _quantile_from_structure(xs, f_left, f_right, s)


def to_quantile_grid(m: Measure1D, n: int) -> QuantileGrid:
    """Sample the quantile function at the n midpoint nodes (k + 1/2)/n."""
    if n < 1:
        raise DomainError(f"grid size {n} must be positive")
    xs, f_left, f_right = _breakpoints(m)
    nodes = (np.arange(n) + 0.5) / n
    vals = np.array(
        [_quantile_from_structure(xs, f_left, f_right, s) for s in nodes]
    )
    return QuantileGrid(vals)


def from_quantile_grid(g: QuantileGrid) -> Measure1D:
    """Atomic measure with mass 1/n per grid value, exactly equal values merged."""
    v = g.values
    n = g.n
    atoms = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and v[j + 1] == v[i]:
            j += 1
        atoms.append((float(v[i]), (j - i + 1) / n))
        i = j + 1
    return Measure1D(atoms=tuple(atoms))


def expectation(g: QuantileGrid, f: Callable[[float], float]) -> float:
    """Midpoint-rule value of ``integral of f d(mu)`` through the quantile grid."""
    return float(np.mean([f(float(x)) for x in g.values]))


def quantile_pieces(m: Measure1D) -> list[tuple[float, float, float, float]]:
    """Affine pieces of the quantile function.

    Returns ``(s0, s1, a, b)`` tuples with ``X(s) = a + b*s`` on ``(s0, s1)``;
    atoms appear as flat pieces (b = 0), uniform stretches as rising pieces.
    The pieces cover (0, 1) up to zero-length gaps and are sorted by ``s0``.
    """
    xs, f_left, f_right = _breakpoints(m)
    segs: list[tuple[float, float, float, float]] = []
    K = xs.size
    for k in range(K):
        if f_right[k] > f_left[k]:
            segs.append((float(f_left[k]), float(f_right[k]), float(xs[k]), 0.0))
        if k + 1 < K and f_left[k + 1] > f_right[k]:
            d = (f_left[k + 1] - f_right[k]) / (xs[k + 1] - xs[k])
            b = 1.0 / d
            a = float(xs[k]) - float(f_right[k]) * b
            segs.append((float(f_right[k]), float(f_left[k + 1]), a, b))
    return segs

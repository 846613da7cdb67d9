"""Even interaction potentials W(x) = eta*|x| + (beta/2)*x^2 + sum c*|x|^p,
their interaction energy on quantile grids, and the two force fields the
dynamics use: the tie-excluding pointwise field and the index-ordered
subgradient of the energy on the monotone cone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import DomainError, QuantileGrid


@dataclass(frozen=True)
class Potential:
    """Parametric even potential with W(0) = 0.

    ``eta`` weights the |x| cusp (negative means a repulsive concave kink at
    the origin), ``beta`` the x^2/2 confinement, and each ``(c, p)`` in
    ``terms`` adds ``c * |x|**p`` with ``p > 1`` so the cusp coefficient is
    unambiguous.  ``jko_eligible`` is False when any exponent exceeds 2, in
    which case the quadratic growth bound fails and the implicit scheme
    refuses the potential; evaluation and particle dynamics still work.
    """

    eta: float = 0.0
    beta: float = 0.0
    terms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "beta", float(self.beta))
        terms = tuple((float(c), float(p)) for c, p in self.terms)
        object.__setattr__(self, "terms", terms)
        for c, p in terms:
            if not p > 1.0:
                raise DomainError(f"exponent {p} must exceed 1")

    @property
    def jko_eligible(self) -> bool:
        return all(p <= 2.0 for _, p in self.terms)

    @property
    def growth_exceeds_quadratic(self) -> bool:
        return not self.jko_eligible

    def __call__(self, x):
        return evaluate(self, x)

    def to_json_dict(self) -> dict:
        return {"eta": self.eta, "beta": self.beta, "terms": [[c, p] for c, p in self.terms]}

    @staticmethod
    def from_json_dict(d: dict) -> "Potential":
        return Potential(
            eta=float(d.get("eta", 0.0)),
            beta=float(d.get("beta", 0.0)),
            terms=tuple((float(c), float(p)) for c, p in d.get("terms", [])),
        )


def evaluate(W: Potential, x):
    """W(x); accepts scalars or arrays."""
    ax = np.abs(x)
    out = W.eta * ax + 0.5 * W.beta * np.square(x)
    for c, p in W.terms:
        out = out + c * ax**p
    return out


def smooth_part(W: Potential, x):
    """The C1 remainder after removing the cusp: W(x) - eta*|x|."""
    ax = np.abs(x)
    out = 0.5 * W.beta * np.square(x)
    for c, p in W.terms:
        out = out + c * ax**p
    return out


def deriv_smooth(W: Potential, x):
    """Derivative of the smooth part; zero at the origin since every p > 1."""
    out = W.beta * np.asarray(x, dtype=float)
    s = np.sign(x)
    ax = np.abs(x)
    for c, p in W.terms:
        out = out + c * p * ax ** (p - 1.0) * s
    return out if np.ndim(x) else float(out)


def interaction_energy(W: Potential, g: QuantileGrid) -> float:
    """Grid interaction energy (1/(2 n^2)) sum_{i,j} W(X_i - X_j).

    Diagonal terms vanish because W(0) = 0.
    """
    v = g.values
    diff = v[:, None] - v[None, :]
    return float(np.sum(evaluate(W, diff)) / (2.0 * g.n**2))


def _force_row(W: Potential, values: np.ndarray, i: int) -> float:
    d = values[i] - values
    # sign(0) = 0 and the smooth derivative vanishes at 0, so tied values and
    # the self term drop out without masking.
    return float(np.sum(deriv_smooth(W, d) + W.eta * np.sign(d)))


def velocity_field(W: Potential, g: QuantileGrid, i: int) -> float:
    """Velocity of the flow at grid point ``i``: minus the mean pairwise force.

    Tied values are excluded from the interaction, so a fully collapsed grid
    is stationary under this field.
    """
    n = g.n
    if not 0 <= i < n:
        raise DomainError(f"index {i} outside 0..{n - 1}")
    return -_force_row(W, g.values, i) / n


def velocity_profile(W: Potential, g: QuantileGrid) -> np.ndarray:
    """velocity_field evaluated at every grid index."""
    v = g.values
    diff = v[:, None] - v[None, :]
    force = np.sum(deriv_smooth(W, diff) + W.eta * np.sign(diff), axis=1)
    return -force / g.n


def energy_subgradient(W: Potential, g: QuantileGrid) -> np.ndarray:
    """Gradient of ``interaction_energy`` restricted to the monotone cone.

    Component ``i`` equals (1/n^2) [ sum_j dW_smooth(X_i - X_j)
    + eta * (2(i+1) - n - 1) ]: on the cone the cusp contribution is an exact
    linear form in the grid values, with the sign taken from the index order
    rather than the (possibly tied) values.  This is the field that drives
    the implicit scheme off atomic states.
    """
    v = g.values
    n = g.n
    diff = v[:, None] - v[None, :]
    smooth = np.sum(deriv_smooth(W, diff), axis=1)
    ranks = 2.0 * np.arange(n) + 1.0 - n
    return (smooth + W.eta * ranks) / n**2


def cusp_rank_weights(n: int) -> np.ndarray:
    """The integer weights 2(i+1) - n - 1 of the cone-linearized cusp term."""
    return 2.0 * np.arange(n) + 1.0 - n


def curvature_bound(W: Potential, radius: float) -> float:
    """Upper bound for |d2/dx2 of the smooth part| on |x| <= radius.

    For exponents below 2 the second derivative blows up near 0; the bound is
    then only a step-size seed and line search corrects it.
    """
    r = max(float(radius), 1.0)
    bound = abs(W.beta)
    for c, p in W.terms:
        bound += abs(c) * p * (p - 1.0) * r ** (p - 2.0)
    return bound


@dataclass(frozen=True)
class ConvexityCertificate:
    """Constants making W(x) + (lambda_second/2) x^2 + lambda_prime |x| convex.

    ``lambda_minus = max(0, lambda_prime, lambda_second)`` feeds the implicit
    scheme's step restriction.  Construction fails if midpoint convexity of
    the compensated potential does not hold on a sampled grid in
    ``[-radius, radius]``.
    """

    lambda_prime: float
    lambda_second: float
    radius: float

    @property
    def lambda_minus(self) -> float:
        return max(0.0, self.lambda_prime, self.lambda_second)


def convexity_certificate(W: Potential, radius: float = 10.0) -> ConvexityCertificate:
    """Conservative closed-form certificate, numerically verified.

    lambda_prime absorbs a negative cusp; lambda_second absorbs negative
    quadratic curvature from beta and from negative-coefficient power terms
    evaluated at the working radius.
    """
    r = max(float(radius), 1.0)
    lam_prime = max(0.0, -W.eta)
    lam_second = max(0.0, -W.beta)
    for c, p in W.terms:
        if c < 0.0:
            lam_second += -c * p * (p - 1.0) * r ** (p - 2.0)
    cert = ConvexityCertificate(lam_prime, lam_second, r)
    _verify_midpoint_convexity(W, cert)
    return cert


def _verify_midpoint_convexity(W: Potential, cert: ConvexityCertificate, samples: int = 129):
    xs = np.linspace(-cert.radius, cert.radius, samples)
    f = evaluate(W, xs) + 0.5 * cert.lambda_second * xs**2 + cert.lambda_prime * np.abs(xs)
    # pairs with an on-grid midpoint: indices of equal parity
    scale = 1.0 + float(np.max(np.abs(f)))
    for step in (2, 4, 8, 16, 32):
        if step >= samples:
            break
        lo = f[:-step]
        hi = f[step:]
        mid = f[step // 2 : samples - step // 2]
        if np.any(2.0 * mid > lo + hi + 1e-9 * scale):
            raise DomainError(
                "convexity certificate verification failed: compensated potential "
                "is not midpoint convex on the sampled grid"
            )

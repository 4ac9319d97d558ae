"""Core circular-data arithmetic: angle wrapping, running trigonometric
moments, and the modified Bessel machinery used throughout the package.

Angles are plain floats in radians, normalized to the half-open interval
[-pi, pi).  Running sums live in :class:`TrigAccumulator`, which supports
O(1) updates as observations arrive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "TWO_PI",
    "DegenerateSampleError",
    "TrigAccumulator",
    "normalize_angle",
    "atan2_paper",
    "mean_direction",
    "resultant_length",
    "mean_resultant_length",
    "bessel_i0",
    "bessel_i1",
    "bessel_k",
    "a_ratio",
    "a_inverse",
    "sample_concentration",
]

TWO_PI = 2.0 * math.pi

# a_inverse brackets the root on [0, A_INVERSE_BRACKET] and only widens the
# bracket for mean resultant lengths beyond a_ratio(700) ~ 1 - 7e-4.
A_INVERSE_BRACKET = 700.0
_A_INVERSE_BRACKET_CAP = 1e12


class DegenerateSampleError(ValueError):
    """Raised when a statistic is undefined for the sample at hand, e.g.
    the concentration of a set of identical angles."""


def normalize_angle(x):
    """Reduce an angle (or array of angles) mod 2*pi into [-pi, pi).

    The boundary convention maps +pi to -pi so every direction has a
    unique representative.

    Parameters
    ----------
    x : float or ndarray
        Angle(s) in radians. Must be finite.

    Returns
    -------
    float or ndarray
        Normalized angle(s) in [-pi, pi).
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("angles must be finite")
    out = np.mod(arr + math.pi, TWO_PI) - math.pi
    # float rounding in mod() can land exactly on +pi; fold it back
    out = np.where(out >= math.pi, out - TWO_PI, out)
    if np.isscalar(x) or arr.ndim == 0:
        return float(out)
    return out


def atan2_paper(x: float, y: float) -> float:
    """Four-quadrant inverse tangent with sine-component first.

    Computes the angle of the vector with cosine component ``y`` and sine
    component ``x``.  Note the argument order: the sine part comes first,
    so for mean directions this is called as ``atan2_paper(S, C)``.  The
    origin maps to 0 by convention, as does the degenerate case x = 0
    with y < 0.  The result is normalized into [-pi, pi).
    """
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("atan2_paper requires finite inputs")
    if y > 0.0:
        r = math.atan(x / y)
    elif y < 0.0:
        sign = 0.0 if x == 0.0 else math.copysign(1.0, x)
        r = math.atan(x / y) + math.pi * sign
    elif x != 0.0:
        r = math.copysign(math.pi / 2.0, x)
    else:
        r = 0.0
    return normalize_angle(r)


@dataclass
class TrigAccumulator:
    """Running trigonometric sums over a stream of angles.

    Tracks the raw (unnormalized) sums

    ``C = sum cos(X_j)``, ``S = sum sin(X_j)``,
    ``C2 = sum cos^2(X_j)``, ``S2 = sum sin^2(X_j)``,
    ``A2 = sum sin(X_j) cos(X_j)``

    along with the count ``n``.  Normalization by ``n`` happens at read
    time so the one-at-a-time recursions stay exact.
    """

    n: int = 0
    C: float = 0.0
    S: float = 0.0
    C2: float = 0.0
    S2: float = 0.0
    A2: float = 0.0

    @classmethod
    def from_angles(cls, xs) -> "TrigAccumulator":
        """Build an accumulator from a batch of angles in one pass."""
        xs = np.asarray(xs, dtype=float)
        s = np.sin(xs)
        c = np.cos(xs)
        return cls(
            n=int(xs.size),
            C=float(c.sum()),
            S=float(s.sum()),
            C2=float((c * c).sum()),
            S2=float((s * s).sum()),
            A2=float((s * c).sum()),
        )

    def push(self, x: float) -> None:
        """Add one observation to the running sums."""
        s = math.sin(x)
        c = math.cos(x)
        self.n += 1
        self.C += c
        self.S += s
        self.C2 += c * c
        self.S2 += s * s
        self.A2 += s * c

    def push_many(self, xs) -> None:
        for x in np.asarray(xs, dtype=float).ravel():
            self.push(float(x))

    def copy(self) -> "TrigAccumulator":
        return TrigAccumulator(self.n, self.C, self.S, self.C2, self.S2, self.A2)


def mean_direction(acc: TrigAccumulator) -> float:
    """Sample mean direction atan2(S, C) of the accumulated angles.

    A perfectly balanced sample (C = S = 0) yields 0 by the atan2
    convention; callers that care should inspect
    :func:`resultant_length` for degeneracy.
    """
    if acc.n < 1:
        raise ValueError("mean direction requires at least one observation")
    return atan2_paper(acc.S, acc.C)


def resultant_length(acc: TrigAccumulator) -> float:
    """Length R = sqrt(C^2 + S^2) of the resultant vector, in [0, n]."""
    if acc.n < 1:
        raise ValueError("resultant length requires at least one observation")
    return math.hypot(acc.C, acc.S)


def mean_resultant_length(acc: TrigAccumulator) -> float:
    """R/n, the standard concentration measure in [0, 1]."""
    return resultant_length(acc) / acc.n


def bessel_i0(x: float) -> float:
    """Modified Bessel function of the first kind, order 0, for x >= 0."""
    if x < 0:
        raise ValueError("bessel_i0 requires x >= 0")
    return float(special.i0(x))


def bessel_i1(x: float) -> float:
    """Modified Bessel function of the first kind, order 1, for x >= 0."""
    if x < 0:
        raise ValueError("bessel_i1 requires x >= 0")
    return float(special.i1(x))


def bessel_k(nu: float, x: float) -> float:
    """Modified Bessel function of the second kind K_nu(x), x > 0."""
    if x <= 0:
        raise ValueError("bessel_k requires x > 0")
    if nu <= 0:
        raise ValueError("bessel_k requires nu > 0")
    return float(special.kv(nu, x))


def a_ratio(kappa: float) -> float:
    """Mean resultant length A(kappa) = I1(kappa)/I0(kappa) of a von Mises
    distribution with concentration kappa.

    Evaluated with exponentially scaled Bessel functions so the ratio is
    stable for arbitrarily large kappa.  Strictly increasing from 0 at
    kappa = 0 toward 1 as kappa -> inf.
    """
    if kappa < 0:
        raise ValueError("a_ratio requires kappa >= 0")
    return float(special.i1e(kappa) / special.i0e(kappa))


def a_inverse(r: float) -> float:
    """Concentration kappa with a_ratio(kappa) = r, for r in [0, 1).

    Solved by bracketed bisection; the default bracket [0, 700] covers
    mean resultant lengths up to ~0.99929 and is widened automatically
    for more concentrated samples.
    """
    if not 0.0 <= r < 1.0:
        raise ValueError("a_inverse requires 0 <= r < 1")
    if r == 0.0:
        return 0.0
    lo, hi = 0.0, A_INVERSE_BRACKET
    while a_ratio(hi) < r:
        hi *= 2.0
        if hi > _A_INVERSE_BRACKET_CAP:
            raise DegenerateSampleError(
                f"mean resultant length {r!r} too close to 1 to invert"
            )
    # absolute 1e-10 below the default bracket, relative beyond it
    while hi - lo > max(1e-10, 1e-12 * lo):
        mid = 0.5 * (lo + hi)
        if a_ratio(mid) < r:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sample_concentration(acc: TrigAccumulator) -> float:
    """Sample concentration A^{-1}(R/n) of the accumulated angles.

    Raises
    ------
    DegenerateSampleError
        If R/n = 1, i.e. all angles coincide and the concentration is
        unbounded.
    """
    if acc.n < 2:
        raise ValueError("sample concentration requires at least two observations")
    rbar = mean_resultant_length(acc)
    if rbar >= 1.0:
        raise DegenerateSampleError("all angles identical: concentration unbounded")
    return a_inverse(rbar)

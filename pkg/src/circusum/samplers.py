"""Random generation of circular distributions used by the run-length
experiments: wrapped stable (including skew-stable), wrapped Student-t,
wrapped skew-normal and skew-t, von Mises, sine-skewed, and two-component
mixtures, with scale solving that standardizes each family to a target
von Mises-equivalent concentration.

All samplers are pure functions of an explicit ``numpy.random.Generator``;
reproducibility comes from :class:`RngStream`, which derives independent
generators from a (seed, stream_id) pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from circusum.circular import TWO_PI, a_ratio, mean_direction, normalize_angle
from circusum.circular import TrigAccumulator

__all__ = [
    "FAMILIES",
    "DistributionSpec",
    "MixtureSpec",
    "RngStream",
    "wrap",
    "solve_stable_scale",
    "solve_student_scale",
    "resolve_sigma",
    "make_sampler",
    "sample",
    "double_angles",
]

FAMILIES = (
    "wrapped_stable",
    "wrapped_t",
    "wrapped_skew_normal",
    "wrapped_skew_t",
    "von_mises",
    "sine_skewed",
    "mixture",
)

# draws used to locate the mean direction of a skewed wrapped family once
# per parameter combination (cached); rotation of the draws by the result
# standardizes the location so the in-control mean direction is nu
_CENTERING_DRAWS = 1_000_000
_CENTERING_SEED = 0x5CA1AB1E
_centering_cache: dict[tuple, float] = {}


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream handle.

    The same (seed, stream_id) always reproduces the identical sample
    sequence; distinct stream_ids give statistically independent streams
    (numpy SeedSequence semantics).
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng((self.seed, self.stream_id))


@dataclass(frozen=True)
class MixtureSpec:
    """Two-component mixture p*g(x) + (1-p)*g(x - mu0) of a unimodal base."""

    p: float
    mu0: float
    base: "DistributionSpec"


@dataclass(frozen=True)
class DistributionSpec:
    """Parameters of one data-generating circular distribution.

    Only the fields relevant to ``family`` may be set:

    - ``wrapped_stable``: alpha in (0, 2], beta in [-1, 1], and sigma or
      kappa (kappa is converted with :func:`solve_stable_scale`).
    - ``wrapped_t``: alpha = degrees of freedom > 0, and sigma or kappa
      (:func:`solve_student_scale`).
    - ``wrapped_skew_normal``: lambda (inf allowed), sigma.
    - ``wrapped_skew_t``: lambda, alpha = degrees of freedom, sigma.
    - ``von_mises``: kappa >= 0 (0 is the circular uniform).
    - ``sine_skewed``: lambda in [-1, 1], kappa of the von Mises base.
    - ``mixture``: the ``mixture`` field only, with p in [1/2, 1).

    ``nu`` is the location (mean direction) for every family.
    """

    family: str
    alpha: Optional[float] = None
    beta: float = 0.0
    lambda_: Optional[float] = None
    sigma: Optional[float] = None
    kappa: Optional[float] = None
    nu: float = 0.0
    mixture: Optional[MixtureSpec] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        f = self.family
        if f not in FAMILIES:
            raise ValueError(f"unknown family {f!r}; expected one of {FAMILIES}")
        if not math.isfinite(self.nu):
            raise ValueError("nu must be finite")
        if f != "mixture" and self.mixture is not None:
            raise ValueError("mixture parameters only apply to family='mixture'")
        if f in ("wrapped_stable", "wrapped_t"):
            if self.alpha is None:
                raise ValueError(f"{f} requires alpha")
            if f == "wrapped_stable" and not 0.0 < self.alpha <= 2.0:
                raise ValueError("stable index alpha must lie in (0, 2]")
            if f == "wrapped_t" and self.alpha <= 0:
                raise ValueError("degrees of freedom must be positive")
            if f == "wrapped_stable" and not -1.0 <= self.beta <= 1.0:
                raise ValueError("stable skewness beta must lie in [-1, 1]")
            if f == "wrapped_t" and self.beta != 0.0:
                raise ValueError("wrapped_t takes no beta")
            if (self.sigma is None) == (self.kappa is None):
                raise ValueError(f"{f} requires exactly one of sigma or kappa")
            if self.sigma is not None and self.sigma <= 0:
                raise ValueError("sigma must be positive")
            if self.kappa is not None and self.kappa <= 0:
                raise ValueError("target kappa must be positive")
            if self.lambda_ is not None:
                raise ValueError(f"{f} takes no lambda")
        elif f in ("wrapped_skew_normal", "wrapped_skew_t"):
            if self.lambda_ is None:
                raise ValueError(f"{f} requires lambda")
            if f == "wrapped_skew_t":
                if self.alpha is None or self.alpha <= 0:
                    raise ValueError("wrapped_skew_t requires alpha (df) > 0")
            elif self.alpha is not None:
                raise ValueError("wrapped_skew_normal takes no alpha")
            if self.sigma is None or self.sigma <= 0:
                raise ValueError(f"{f} requires sigma > 0 (kappa solving unsupported)")
            if self.kappa is not None:
                raise ValueError(f"{f} takes sigma directly, not kappa")
            if self.beta != 0.0:
                raise ValueError(f"{f} takes no beta")
        elif f == "von_mises":
            if self.kappa is None or self.kappa < 0:
                raise ValueError("von_mises requires kappa >= 0")
            if any(v is not None for v in (self.alpha, self.lambda_, self.sigma)):
                raise ValueError("von_mises takes only kappa and nu")
            if self.beta != 0.0:
                raise ValueError("von_mises takes no beta")
        elif f == "sine_skewed":
            if self.lambda_ is None or not -1.0 <= self.lambda_ <= 1.0:
                raise ValueError("sine_skewed requires lambda in [-1, 1]")
            if self.kappa is None or self.kappa < 0:
                raise ValueError("sine_skewed requires base kappa >= 0")
            if self.alpha is not None or self.sigma is not None or self.beta != 0.0:
                raise ValueError("sine_skewed takes only lambda, kappa and nu")
        elif f == "mixture":
            mix = self.mixture
            if mix is None:
                raise ValueError("mixture requires a mixture block")
            if not 0.5 <= mix.p < 1.0:
                raise ValueError("mixture weight p must lie in [1/2, 1)")
            if not math.isfinite(mix.mu0):
                raise ValueError("mixture mu0 must be finite")
            if not isinstance(mix.base, DistributionSpec):
                raise ValueError("mixture base must be a DistributionSpec")
            if mix.base.family == "mixture":
                raise ValueError("mixture base must be unimodal, not another mixture")
            if any(
                v is not None for v in (self.alpha, self.lambda_, self.sigma, self.kappa)
            ):
                raise ValueError("mixture takes only the mixture block and nu")

    def to_dict(self) -> dict:
        out: dict = {"family": self.family, "nu": self.nu}
        for key, attr in (
            ("alpha", self.alpha),
            ("lambda", self.lambda_),
            ("sigma", self.sigma),
            ("kappa", self.kappa),
        ):
            if attr is not None:
                out[key] = attr
        if self.beta != 0.0:
            out["beta"] = self.beta
        if self.mixture is not None:
            out["mixture"] = {
                "p": self.mixture.p,
                "mu0": self.mixture.mu0,
                "base": self.mixture.base.to_dict(),
            }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DistributionSpec":
        if not isinstance(d, dict):
            raise ValueError("distribution spec must be a JSON object")
        known = {"family", "alpha", "beta", "lambda", "sigma", "kappa", "nu", "mixture"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown distribution fields: {sorted(extra)}")
        mix = None
        if d.get("mixture") is not None:
            m = d["mixture"]
            missing = {"p", "mu0", "base"} - set(m)
            if missing:
                raise ValueError(f"mixture block missing fields: {sorted(missing)}")
            mix = MixtureSpec(
                p=float(m["p"]),
                mu0=float(m["mu0"]),
                base=cls.from_dict(m["base"]),
            )
        return cls(
            family=d.get("family", ""),
            alpha=None if d.get("alpha") is None else float(d["alpha"]),
            beta=float(d.get("beta", 0.0)),
            lambda_=None if d.get("lambda") is None else float(d["lambda"]),
            sigma=None if d.get("sigma") is None else float(d["sigma"]),
            kappa=None if d.get("kappa") is None else float(d["kappa"]),
            nu=float(d.get("nu", 0.0)),
            mixture=mix,
        )


def wrap(y, sigma: float = 1.0):
    """Scale a linear draw by sigma and wrap it onto [-pi, pi)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return normalize_angle(np.asarray(y, dtype=float) * sigma)


def solve_stable_scale(alpha: float, kappa: float) -> float:
    """Pre-wrap scale making a wrapped stable(alpha) draw have
    concentration kappa: sigma = (-log A(kappa))^(1/alpha).

    Valid for any skewness: the modulus of the stable characteristic
    function is exp(-sigma^alpha) regardless of beta.
    """
    if not 0.0 < alpha <= 2.0:
        raise ValueError("alpha must lie in (0, 2]")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return (-math.log(a_ratio(kappa))) ** (1.0 / alpha)


def _student_cf(sigma: float, df: float) -> float:
    """Characteristic function of a Student-t(df) at sigma > 0."""
    x = math.sqrt(df) * sigma
    return float(kv(df / 2.0, x)) * x ** (df / 2.0) / (
        2.0 ** (df / 2.0 - 1.0) * gamma_fn(df / 2.0)
    )


def solve_student_scale(df: float, kappa: float) -> float:
    """Pre-wrap scale making a wrapped Student-t(df) draw have
    concentration kappa.

    Solves K_{df/2}(sqrt(df) sigma) (sqrt(df) sigma)^{df/2}
    = 2^{df/2-1} Gamma(df/2) A(kappa) for sigma by bracketed root
    finding; the characteristic function decreases from 1 at sigma = 0,
    so a root always exists.
    """
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    target = a_ratio(kappa)
    lo, hi = 1e-12, 1.0
    while _student_cf(hi, df) > target:
        hi *= 2.0
        if hi > 1e6:
            raise RuntimeError("failed to bracket the student scale root")
    sigma = brentq(lambda s: _student_cf(s, df) - target, lo, hi, xtol=1e-14, rtol=1e-15)
    return float(sigma)


def resolve_sigma(spec: DistributionSpec) -> Optional[float]:
    """Pre-wrap scale actually used for a wrapped family (None for the
    families defined directly on the circle)."""
    if spec.family == "wrapped_stable":
        if spec.sigma is not None:
            return spec.sigma
        return solve_stable_scale(spec.alpha, spec.kappa)
    if spec.family == "wrapped_t":
        if spec.sigma is not None:
            return spec.sigma
        return solve_student_scale(spec.alpha, spec.kappa)
    if spec.family in ("wrapped_skew_normal", "wrapped_skew_t"):
        return spec.sigma
    return None


def _stable_linear(gen: np.random.Generator, n: int, alpha: float, beta: float):
    """Chambers-Mallows-Stuck draws from the stable law with
    characteristic function exp(-|t|^alpha (1 - i beta tan(pi alpha/2) sgn t))
    for alpha != 1 and exp(-|t| (1 + i beta (2/pi) sgn(t) log|t|)) at
    alpha = 1, so |cf(t)| = exp(-|t|^alpha) in every case.
    """
    v = (gen.random(n) - 0.5) * math.pi
    if alpha == 2.0:
        w = gen.standard_exponential(n)
        return 2.0 * np.sqrt(w) * np.sin(v)
    if alpha == 1.0 and beta == 0.0:
        return np.tan(v)
    w = gen.standard_exponential(n)
    if beta == 0.0:
        return (
            np.sin(alpha * v)
            / np.cos(v) ** (1.0 / alpha)
            * (np.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha)
        )
    if alpha == 1.0:
        b = math.pi / 2.0 + beta * v
        return (2.0 / math.pi) * (
            b * np.tan(v) - beta * np.log((math.pi / 2.0) * w * np.cos(v) / b)
        )
    t0 = math.atan(beta * math.tan(math.pi * alpha / 2.0)) / alpha
    scale = (1.0 + beta**2 * math.tan(math.pi * alpha / 2.0) ** 2) ** (1.0 / (2 * alpha))
    return (
        scale
        * np.sin(alpha * (v + t0))
        / np.cos(v) ** (1.0 / alpha)
        * (np.cos(v - alpha * (v + t0)) / w) ** ((1.0 - alpha) / alpha)
    )


def _skew_normal_linear(gen: np.random.Generator, n: int, lam: float):
    """Draws Y = delta |Z0| + sqrt(1 - delta^2) Z1, delta = lam/sqrt(1+lam^2).

    lam = inf is the half-normal limit |Z0|.
    """
    if math.isinf(lam):
        delta = math.copysign(1.0, lam)
    else:
        delta = lam / math.sqrt(1.0 + lam * lam)
    z0 = gen.standard_normal(n)
    z1 = gen.standard_normal(n)
    return delta * np.abs(z0) + math.sqrt(max(0.0, 1.0 - delta * delta)) * z1


class Sampler:
    """Draws angles from one distribution through an explicit generator.

    Successive ``draw`` calls continue the generator's stream, so a
    replication can consume its variates in blocks.
    """

    def __init__(self, spec: DistributionSpec):
        self.spec = spec
        self.sigma = resolve_sigma(spec)
        self._center = _center_offset(spec)
        if spec.family == "mixture":
            self._base = Sampler(spec.mixture.base)

    def draw(self, gen: np.random.Generator, n: int) -> np.ndarray:
        spec = self.spec
        f = spec.family
        if f == "von_mises":
            if spec.kappa == 0.0:
                raw = gen.uniform(-math.pi, math.pi, n)
            else:
                raw = gen.vonmises(0.0, spec.kappa, n)
        elif f == "wrapped_stable":
            raw = _stable_linear(gen, n, spec.alpha, spec.beta) * self.sigma
        elif f == "wrapped_t":
            raw = gen.standard_t(spec.alpha, n) * self.sigma
        elif f == "wrapped_skew_normal":
            raw = _skew_normal_linear(gen, n, spec.lambda_) * self.sigma
        elif f == "wrapped_skew_t":
            z = _skew_normal_linear(gen, n, spec.lambda_)
            chi2 = gen.chisquare(spec.alpha, n)
            raw = z / np.sqrt(chi2 / spec.alpha) * self.sigma
        elif f == "sine_skewed":
            raw = self._draw_sine_skewed(gen, n)
        elif f == "mixture":
            raw = self._base.draw(gen, n)
            shifted = gen.random(n) >= spec.mixture.p
            raw = raw + np.where(shifted, spec.mixture.mu0, 0.0)
        else:  # pragma: no cover - validate() forbids this
            raise ValueError(f"unknown family {f!r}")
        return normalize_angle(raw + (spec.nu - self._center))

    def _draw_sine_skewed(self, gen: np.random.Generator, n: int) -> np.ndarray:
        # rejection from the centered base g with envelope g * (1 + |lam|)
        lam = self.spec.lambda_
        kappa = self.spec.kappa
        bound = 1.0 + abs(lam)
        out = np.empty(n)
        got = 0
        while got < n:
            todo = n - got
            # expected acceptance rate is 1/bound
            m = max(32, int(todo * bound * 1.2))
            if kappa == 0.0:
                theta = gen.uniform(-math.pi, math.pi, m)
            else:
                theta = gen.vonmises(0.0, kappa, m)
            u = gen.random(m)
            keep = theta[u * bound <= 1.0 + lam * np.sin(theta)]
            take = min(todo, keep.size)
            out[got : got + take] = keep[:take]
            got += take
        return out


def _center_offset(spec: DistributionSpec) -> float:
    """Mean direction of the raw (nu = 0) wrapped draws for skewed
    wrapped families, estimated once per parameter combination from a
    large calibration sample and cached.

    Subtracting this offset standardizes the location so that the
    requested nu is the in-control mean direction.  Symmetric families
    need no correction; sine-skewed and mixture densities carry their
    stated location by construction.
    """
    f = spec.family
    skew_stable = f == "wrapped_stable" and spec.beta != 0.0
    skew_other = f in ("wrapped_skew_normal", "wrapped_skew_t")
    if not (skew_stable or skew_other):
        return 0.0
    sigma = resolve_sigma(spec)
    key = (f, spec.alpha, spec.beta, spec.lambda_, sigma)
    if key not in _centering_cache:
        # derive the calibration stream from the parameter bits so the
        # offset is reproducible across processes
        entropy = [_CENTERING_SEED, FAMILIES.index(f)]
        for v in (spec.alpha, spec.beta, spec.lambda_, sigma):
            x = math.nan if v is None else float(v)
            entropy.append(int(np.float64(x).view(np.uint64)))
        gen = np.random.default_rng(entropy)
        if skew_stable:
            raw = _stable_linear(gen, _CENTERING_DRAWS, spec.alpha, spec.beta)
        elif f == "wrapped_skew_normal":
            raw = _skew_normal_linear(gen, _CENTERING_DRAWS, spec.lambda_)
        else:
            z = _skew_normal_linear(gen, _CENTERING_DRAWS, spec.lambda_)
            chi2 = gen.chisquare(spec.alpha, _CENTERING_DRAWS)
            raw = z / np.sqrt(chi2 / spec.alpha)
        angles = wrap(raw, sigma)
        _centering_cache[key] = mean_direction(TrigAccumulator.from_angles(angles))
    return _centering_cache[key]


def make_sampler(spec: DistributionSpec) -> Sampler:
    """Construct a reusable sampler (resolves scales and location
    centering once)."""
    return Sampler(spec)


def sample(spec: DistributionSpec, n: int, rng: RngStream) -> np.ndarray:
    """Draw n i.i.d. angles from the given distribution.

    Deterministic: the same (spec, n, rng) reproduces the identical
    sequence bit for bit.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    return make_sampler(spec).draw(rng.generator(), n)


def double_angles(xs) -> np.ndarray:
    """Map each angle x to 2x (mod 2*pi).

    Collapses antipodal bimodality into a unimodal distribution, making
    direction monitoring possible for densities with two modes pi apart.
    """
    return normalize_angle(2.0 * np.asarray(xs, dtype=float))

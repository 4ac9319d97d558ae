"""Two-sided CUSUM state machines for angular streams.

Two monitors share one mechanism: a *direction* chart whose summand is the
standardized sine deviation of each new observation from the running mean
direction, and a *concentration* chart whose summand is the standardized
cosine deviation less the running mean resultant length.  Both summands
are rotation invariant: shifting every observation by a fixed angle leaves
the chart unchanged, so no in-control direction needs to be specified.

The chart warms up on the first ``m`` observations, then updates its
moment estimates with every new arrival (self-starting behaviour).  The
summand for observation ``n`` is always computed from observations
``1..n-1`` before ``n`` enters the running sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from circusum.circular import (
    DegenerateSampleError,
    TrigAccumulator,
    mean_direction,
    sample_concentration,
)

__all__ = [
    "MODES",
    "DEGENERACY_EPS",
    "IllConditionedWarmupError",
    "CusumConfig",
    "SignalEvent",
    "CusumState",
    "direction_summand",
    "concentration_summand",
    "direction_summands",
    "concentration_summands",
    "cusum_update",
    "estimate_reference_constant",
    "solve_delta_for_zeta",
    "DeltaSolveResult",
]

MODES = ("direction", "concentration")

# variance estimates at or below DEGENERACY_EPS * (n-1) mean the warmup
# cannot standardize the summand yet (ties / collinear data)
DEGENERACY_EPS = 1e-12


class IllConditionedWarmupError(RuntimeError):
    """Raised when the running variance estimate is too degenerate to
    standardize a summand (e.g. all warmup angles identical)."""


@dataclass(frozen=True)
class CusumConfig:
    """Chart parameters: mode, reference value, control limit, warmup size."""

    mode: str
    zeta: float
    h: float
    m: int

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.zeta < 0:
            raise ValueError("reference value zeta must be >= 0")
        if self.h <= 0:
            raise ValueError("control limit h must be positive")
        if self.m < 2:
            raise ValueError("warmup size m must be at least 2")


@dataclass(frozen=True)
class SignalEvent:
    """Alarm record: where the chart signalled and what segment it closed."""

    signal_index: int
    side: str  # "up" | "down"
    changepoint: int
    segment_start: int
    segment_mean: float
    segment_kappa: float


def _bstar_squared(acc: TrigAccumulator) -> float:
    """(n) * (R B)^2 over the accumulated angles: the squared direction
    denominator before division by the count."""
    return (
        acc.C * acc.C * acc.S2
        + acc.S * acc.S * acc.C2
        - 2.0 * acc.C * acc.S * acc.A2
    )


def direction_summand(acc: TrigAccumulator, x: float) -> float:
    """Standardized direction deviation of a new angle x from the mean
    direction of the accumulated history.

    Equals sin(x - nu_hat)/B with B^2 the mean of sin^2(X_i - nu_hat),
    computed in the resultant-scaled form

        (C sin x - S cos x) / sqrt((C^2 S2 + S^2 C2 - 2 C S A2)/n)

    which avoids evaluating nu_hat itself.

    Raises
    ------
    IllConditionedWarmupError
        If the denominator is degenerate; the caller should extend the
        warmup with x and try again on the next observation.
    """
    k = acc.n
    if k < 2:
        raise ValueError("direction summand requires at least two prior angles")
    b2 = _bstar_squared(acc)
    if b2 <= DEGENERACY_EPS * k:
        raise IllConditionedWarmupError(
            "degenerate direction variance: extend the warmup"
        )
    v = acc.C * math.sin(x) - acc.S * math.cos(x)
    return v / math.sqrt(b2 / k)


def _sum_cos2_dev(acc: TrigAccumulator, r2: float) -> float:
    """sum cos^2(X_i - nu_hat) via the expansion in the raw sums."""
    return (
        acc.C * acc.C * acc.C2
        + acc.S * acc.S * acc.S2
        + 2.0 * acc.C * acc.S * acc.A2
    ) / r2


def concentration_summand(acc: TrigAccumulator, x: float) -> float:
    """Standardized concentration deviation of a new angle x: the cosine
    deviation cos(x - nu_hat) less the mean resultant length R/n, divided
    by the standard deviation of the cosine deviations.
    """
    k = acc.n
    if k < 2:
        raise ValueError("concentration summand requires at least two prior angles")
    r2 = acc.C * acc.C + acc.S * acc.S
    if r2 <= 0.0:
        raise IllConditionedWarmupError(
            "zero resultant: mean direction undefined, extend the warmup"
        )
    bp2 = _sum_cos2_dev(acc, r2) / k - r2 / (k * k)
    if bp2 <= DEGENERACY_EPS * k:
        raise IllConditionedWarmupError(
            "degenerate concentration variance: extend the warmup"
        )
    r = math.sqrt(r2)
    cos_dev = (acc.C * math.cos(x) + acc.S * math.sin(x)) / r
    return (cos_dev - r / k) / math.sqrt(bp2)


def cusum_update(
    d_plus: float, d_minus: float, xi: float, zeta: float
) -> tuple[float, float]:
    """One two-sided CUSUM step: reflected sums of (xi -+ zeta)."""
    return (
        max(0.0, d_plus + xi - zeta),
        min(0.0, d_minus + xi + zeta),
    )


class CusumState:
    """Sequential two-sided CUSUM over an angular stream.

    Feed observations with :meth:`step`.  The first ``config.m``
    observations are warmup; monitoring starts with the next one.  After
    a signal the state freezes; :meth:`restart` returns a fresh state for
    the data from the estimated changepoint onward.

    ``start_index`` anchors this state's observations in the caller's
    global 1-based numbering, so signal indices and changepoints stay
    meaningful across restarts.
    """

    def __init__(self, config: CusumConfig, start_index: int = 1):
        if start_index < 1:
            raise ValueError("start_index is 1-based")
        self.config = config
        self.start_index = start_index
        self.acc = TrigAccumulator()
        self.d_plus = 0.0
        self.d_minus = 0.0
        self.n_total = 0
        self.warmup_len = config.m
        self.extended_warmup = 0
        # the chart sits at zero throughout the warmup
        self.last_zero_plus = start_index - 1
        self.last_zero_minus = start_index - 1
        self.phase = "warming"
        self.signal: Optional[SignalEvent] = None
        self._history: list[float] = []

    @property
    def last_index(self) -> int:
        """Global index of the most recently consumed observation."""
        return self.start_index + self.n_total - 1

    def _summand(self, x: float) -> float:
        if self.config.mode == "direction":
            return direction_summand(self.acc, x)
        return concentration_summand(self.acc, x)

    def step(self, x: float) -> str:
        """Consume one observation (radians; any finite value, the chart
        is 2*pi-periodic); returns the phase afterwards."""
        if self.phase == "signaled":
            raise RuntimeError("state already signalled; restart before stepping")
        x = float(x)
        if not math.isfinite(x):
            raise ValueError("angles must be finite")
        global_idx = self.start_index + self.n_total
        if self.n_total < self.warmup_len:
            self._push(x)
            self.last_zero_plus = global_idx
            self.last_zero_minus = global_idx
            return self.phase
        try:
            xi = self._summand(x)
        except IllConditionedWarmupError:
            self.warmup_len += 1
            self.extended_warmup += 1
            self._push(x)
            self.last_zero_plus = global_idx
            self.last_zero_minus = global_idx
            return self.phase
        self.d_plus, self.d_minus = cusum_update(
            self.d_plus, self.d_minus, xi, self.config.zeta
        )
        h = self.config.h
        if self.d_plus >= h or self.d_minus <= -h:
            side = "up" if self.d_plus >= h else "down"
            changepoint = self.last_zero_plus if side == "up" else self.last_zero_minus
            self._push(x)
            self.signal = self._make_event(global_idx, side, changepoint)
            self.phase = "signaled"
            return self.phase
        if self.d_plus == 0.0:
            self.last_zero_plus = global_idx
        if self.d_minus == 0.0:
            self.last_zero_minus = global_idx
        self._push(x)
        self.phase = "monitoring"
        return self.phase

    def step_many(self, xs) -> str:
        """Feed angles until the stream ends or the chart signals."""
        for x in np.asarray(xs, dtype=float).ravel():
            if self.step(float(x)) == "signaled":
                break
        return self.phase

    def _push(self, x: float) -> None:
        self.acc.push(x)
        self.n_total += 1
        self._history.append(x)

    def _make_event(self, signal_idx: int, side: str, changepoint: int) -> SignalEvent:
        seg = self._history[: changepoint - self.start_index + 1]
        nu, kappa = segment_summary(seg)
        return SignalEvent(
            signal_index=signal_idx,
            side=side,
            changepoint=changepoint,
            segment_start=self.start_index,
            segment_mean=nu,
            segment_kappa=kappa,
        )

    def changepoint_estimate(self) -> int:
        """Last global index before the signal at which the signalling
        side sat exactly at zero."""
        if self.signal is None:
            raise RuntimeError("no signal: changepoint undefined")
        return self.signal.changepoint

    def restart(self, from_index: Optional[int] = None) -> "CusumState":
        """Fresh state whose warmup starts at the estimated changepoint
        plus one (or an explicit global index)."""
        if self.signal is None:
            raise RuntimeError("cannot restart an unsignalled state")
        if from_index is None:
            from_index = self.signal.changepoint + 1
        if from_index <= self.signal.segment_start - 1:
            raise ValueError("restart index precedes this state's data")
        return CusumState(self.config, start_index=from_index)


def segment_summary(angles) -> tuple[float, float]:
    """Mean direction and sample concentration of a closed segment.

    Concentration is +inf when every angle in the segment coincides.
    """
    acc = TrigAccumulator.from_angles(np.asarray(angles, dtype=float))
    nu = mean_direction(acc)
    try:
        kappa = sample_concentration(acc)
    except DegenerateSampleError:
        kappa = math.inf
    return nu, kappa


def _prefix_sums(xs: np.ndarray):
    s = np.sin(xs)
    c = np.cos(xs)
    return (
        s,
        c,
        np.cumsum(c),
        np.cumsum(s),
        np.cumsum(c * c),
        np.cumsum(s * s),
        np.cumsum(s * c),
    )


def direction_summands(xs) -> np.ndarray:
    """Whole-sequence direction summands: entry j is the summand of
    observation j+2 given observations 1..j+1.  Degenerate denominators
    yield NaN.  Useful for traces and batch diagnostics."""
    xs = np.asarray(xs, dtype=float)
    if xs.size < 2:
        raise ValueError("need at least two angles")
    s, c, C, S, C2, S2, A2 = _prefix_sums(xs)
    k = np.arange(1, xs.size, dtype=float)
    Cp, Sp = C[:-1], S[:-1]
    b2 = Cp * Cp * S2[:-1] + Sp * Sp * C2[:-1] - 2.0 * Cp * Sp * A2[:-1]
    v = Cp * s[1:] - Sp * c[1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(b2 > DEGENERACY_EPS * k, v / np.sqrt(b2 / k), np.nan)
    return out


def concentration_summands(xs) -> np.ndarray:
    """Whole-sequence concentration summands, aligned like
    :func:`direction_summands`."""
    xs = np.asarray(xs, dtype=float)
    if xs.size < 2:
        raise ValueError("need at least two angles")
    s, c, C, S, C2, S2, A2 = _prefix_sums(xs)
    k = np.arange(1, xs.size, dtype=float)
    Cp, Sp = C[:-1], S[:-1]
    r2 = Cp * Cp + Sp * Sp
    with np.errstate(invalid="ignore", divide="ignore"):
        sum_cos2 = (Cp * Cp * C2[:-1] + Sp * Sp * S2[:-1] + 2.0 * Cp * Sp * A2[:-1]) / r2
        bp2 = sum_cos2 / k - r2 / (k * k)
        r = np.sqrt(r2)
        cos_dev = (Cp * c[1:] + Sp * s[1:]) / r
        ok = (r2 > 0.0) & (bp2 > DEGENERACY_EPS * k)
        out = np.where(ok, (cos_dev - r / k) / np.sqrt(bp2), np.nan)
    return out


def estimate_reference_constant(phase1, delta0: float) -> float:
    """Reference value for efficient detection of a rotation of size
    delta0, estimated from in-control data:

        (delta0/2) * mean sin(X_j + delta0 - nu_hat)
                   / sqrt(mean sin^2(X_j - nu_hat)).
    """
    xs = np.asarray(phase1, dtype=float)
    if xs.size < 2:
        raise ValueError("reference constant needs at least two observations")
    if not 0.0 < delta0 <= math.pi:
        raise ValueError("delta0 must lie in (0, pi]")
    nu = mean_direction(TrigAccumulator.from_angles(xs))
    num = np.sin(xs + delta0 - nu).mean()
    den2 = (np.sin(xs - nu) ** 2).mean()
    # identical angles leave only rounding residue in the denominator
    if den2 <= 1e-24:
        raise DegenerateSampleError("zero sine variance in the warmup sample")
    return 0.5 * delta0 * num / math.sqrt(den2)


class DeltaSolveResult(NamedTuple):
    delta0: float
    bracketed: bool


def solve_delta_for_zeta(phase1, zeta_cap: float, grid: int = 4096) -> DeltaSolveResult:
    """Smallest rotation size delta0 whose estimated reference constant
    reaches zeta_cap.

    The reference-constant curve rises from 0, peaks, and returns to 0 at
    delta0 = pi, so the smallest crossing is located on a grid and
    refined by bisection.  If the cap exceeds the attainable maximum the
    result is (pi, False).
    """
    if zeta_cap <= 0:
        raise ValueError("zeta_cap must be positive")
    deltas = np.linspace(0.0, math.pi, grid + 1)[1:]
    vals = np.array([estimate_reference_constant(phase1, d) for d in deltas])
    above = np.nonzero(vals >= zeta_cap)[0]
    if above.size == 0:
        return DeltaSolveResult(math.pi, False)
    i = above[0]
    lo = deltas[i - 1] if i > 0 else deltas[0] * 1e-6
    hi = deltas[i]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if estimate_reference_constant(phase1, mid) < zeta_cap:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return DeltaSolveResult(0.5 * (lo + hi), True)

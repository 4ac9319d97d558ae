"""Control-limit calibration via Monte Carlo run lengths of a two-sided
standard-normal CUSUM.

The chart applied to standardized angular summands behaves, in control,
like a standard normal CUSUM, so its control limit for a nominal
in-control average run length can be taken from the normal chart.  One
vectorized first-passage engine serves both the direct ARL estimate and
the inverse search for the limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from circusum.samplers import RngStream

__all__ = ["ArlEstimate", "normal_cusum_arl", "find_control_limit"]

# fraction of truncated runs above which an estimate is untrustworthy
CENSORING_CAP = 0.01


@dataclass(frozen=True)
class ArlEstimate:
    """Mean run length with its Monte Carlo uncertainty.

    ``censored`` counts runs truncated at the simulation horizon (each
    contributes the horizon itself to the mean); ``redrawn`` and
    ``discarded`` count replicates rejected before contributing, for
    degenerate warmups and for alarms before the changepoint in
    out-of-control runs.
    """

    mean: float
    stderr: float
    reps: int
    censored: int = 0
    redrawn: int = 0
    discarded: int = 0

    @property
    def flagged(self) -> bool:
        return self.censored > CENSORING_CAP * self.reps

    @classmethod
    def from_run_lengths(cls, ns, censored=0, redrawn=0, discarded=0) -> "ArlEstimate":
        ns = np.asarray(ns, dtype=float)
        if ns.size == 0:
            raise ValueError("no run lengths to aggregate")
        sd = ns.std(ddof=1) if ns.size > 1 else 0.0
        return cls(
            mean=float(ns.mean()),
            stderr=float(sd / math.sqrt(ns.size)),
            reps=int(ns.size),
            censored=int(censored),
            redrawn=int(redrawn),
            discarded=int(discarded),
        )


def normal_cusum_arl(
    zeta: float,
    h: float,
    reps: int,
    rng: RngStream,
    horizon: int = 1_000_000,
) -> ArlEstimate:
    """Average run length of the two-sided CUSUM with N(0,1) summands.

    Both barriers start at zero, there is no warmup, and the run length
    is the first step at which D+ >= h or D- <= -h.  Runs still alive at
    ``horizon`` are counted at the horizon and reported as censored.

    Replications are advanced in lockstep through one generator, so a
    repeated call with the same ``rng`` reuses the same underlying
    variates (common random numbers across h values, up to the gradual
    divergence of the surviving set).
    """
    if zeta < 0:
        raise ValueError("zeta must be >= 0")
    if h <= 0:
        raise ValueError("h must be positive")
    if reps < 1:
        raise ValueError("reps must be positive")
    gen = rng.generator()
    d_plus = np.zeros(reps)
    d_minus = np.zeros(reps)
    alive = np.arange(reps)
    run_lengths = np.empty(reps, dtype=np.int64)
    t = 0
    while alive.size:
        t += 1
        z = gen.standard_normal(alive.size)
        np.maximum(d_plus + z - zeta, 0.0, out=d_plus)
        np.minimum(d_minus + z + zeta, 0.0, out=d_minus)
        hit = (d_plus >= h) | (d_minus <= -h)
        if t >= horizon:
            hit[:] = True
        if hit.any():
            run_lengths[alive[hit]] = t
            keep = ~hit
            alive = alive[keep]
            d_plus = d_plus[keep]
            d_minus = d_minus[keep]
    censored = int(np.count_nonzero(run_lengths >= horizon))
    return ArlEstimate.from_run_lengths(run_lengths, censored=censored)


def _siegmund_start(zeta: float, arl0: float) -> float:
    """Closed-form starting guess for the two-sided limit (corrected
    diffusion approximation of the one-sided chart at twice the target)."""
    target = 2.0 * arl0
    if zeta <= 1e-12:
        return max(1.0, math.sqrt(target) - 1.166)
    # invert (exp(2 zeta b) - 2 zeta b - 1)/(2 zeta^2) = target for b = h + 1.166
    b = math.log(2.0 * zeta * zeta * target + 1.0) / (2.0 * zeta)
    for _ in range(60):
        f = (math.exp(2 * zeta * b) - 2 * zeta * b - 1) / (2 * zeta * zeta) - target
        fp = (math.exp(2 * zeta * b) - 1) / zeta
        step = f / fp
        b -= step
        if abs(step) < 1e-12 * max(1.0, b):
            break
    return max(0.5, b - 1.166)


def find_control_limit(
    zeta: float,
    arl0: float,
    reps: int,
    rng: RngStream,
    rel_tol: float = 0.005,
    horizon: int = 1_000_000,
) -> float:
    """Control limit h giving the two-sided standard-normal CUSUM an
    in-control average run length of arl0.

    Brackets around a corrected-diffusion starting guess, then bisects on
    the Monte Carlo ARL with the same random stream at every evaluation.
    The returned h reproduces arl0 within about ``rel_tol`` (subject to
    Monte Carlo noise of order 1/sqrt(reps)).
    """
    if arl0 < 50:
        raise ValueError("arl0 must be at least 50")
    if reps < 1000:
        raise ValueError("control-limit search needs at least 1000 reps")

    pilot = max(2000, reps // 20)
    pilot_rng = RngStream(rng.seed, rng.stream_id + 1)

    def pilot_arl(h):
        return normal_cusum_arl(zeta, h, pilot, pilot_rng, horizon=horizon).mean

    lo = hi = _siegmund_start(zeta, arl0)
    grow = 0
    while pilot_arl(hi) < arl0:
        hi *= 1.25
        grow += 1
        if grow > 60:
            raise RuntimeError("failed to bracket the control limit from above")
    grow = 0
    while pilot_arl(lo) > arl0:
        lo *= 0.8
        grow += 1
        if grow > 60:
            raise RuntimeError("failed to bracket the control limit from below")

    h = 0.5 * (lo + hi)
    for _ in range(40):
        h = 0.5 * (lo + hi)
        est = normal_cusum_arl(zeta, h, reps, rng, horizon=horizon)
        if abs(est.mean - arl0) <= rel_tol * arl0:
            return h
        if est.mean < arl0:
            lo = h
        else:
            hi = h
        if hi - lo < 1e-4 * h:
            break
    return 0.5 * (lo + hi)

"""Run-length experiments for the circular CUSUM charts: in-control ARL
across distribution families, out-of-control ARL after an induced
rotation, conditional-ARL profiles against the warmup variance estimate,
and a batch table runner.

Replications are advanced in lockstep by a vectorized engine; every
replicate owns an independent random stream derived from
(seed, replicate, attempt), so results do not depend on batching and a
rerun with the same seed reproduces the same numbers exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from circusum.calibration import ArlEstimate, find_control_limit
from circusum.detectors import DEGENERACY_EPS, MODES
from circusum.samplers import DistributionSpec, RngStream, make_sampler, resolve_sigma
from circusum.samplers import solve_stable_scale, solve_student_scale

__all__ = [
    "ShiftSpec",
    "ExperimentSpec",
    "ReplicateRecords",
    "ProfileBin",
    "ExperimentFileError",
    "calibrated_limit",
    "run_replications",
    "in_control_arl",
    "out_of_control_arl",
    "conditional_arl_profile",
    "profile_from_records",
    "run_table",
    "CSV_HEADER",
]

CSV_HEADER = [
    "spec_id",
    "mode",
    "family",
    "kappa",
    "zeta",
    "m",
    "arl0",
    "delta",
    "tau",
    "reps",
    "arl",
    "stderr",
    "censored",
]

# defaults for resolving a control limit from a nominal ARL0
CALIBRATION_REPS = 100_000
CALIBRATION_SEED = 0xCA11B
_h_cache: dict[tuple, float] = {}

_BLOCK = 256
_MAX_ATTEMPTS = 200


class ExperimentFileError(ValueError):
    """Raised for malformed experiment files, citing the offending entry."""


@dataclass(frozen=True)
class ShiftSpec:
    """Rotation of size delta applied from observation tau + 1 onward."""

    delta: float
    tau: int


@dataclass(frozen=True)
class ExperimentSpec:
    """One run-length experiment cell."""

    dist: DistributionSpec
    mode: str = "direction"
    m: int = 25
    zeta: float = 0.0
    arl0: Optional[float] = 500.0
    h: Optional[float] = None
    reps: int = 20_000
    seed: int = 0
    shift: Optional[ShiftSpec] = None
    spec_id: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.m < 2:
            raise ValueError("warmup m must be at least 2")
        if self.reps < 1000:
            raise ValueError("run-length estimates need reps >= 1000")
        if self.zeta < 0:
            raise ValueError("zeta must be >= 0")
        if self.h is None and self.arl0 is None:
            raise ValueError("either arl0 or an explicit control limit h is required")
        if self.h is not None and self.h <= 0:
            raise ValueError("h must be positive")
        if self.shift is not None:
            if self.shift.tau < self.m:
                raise ValueError("shift.tau must be at least the warmup size m")
            if not math.isfinite(self.shift.delta):
                raise ValueError("shift.delta must be finite")

    @property
    def kappa(self) -> Optional[float]:
        return self.dist.kappa

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {
            "id", "spec_id", "kind", "dist", "mode", "m", "zeta",
            "arl0", "h", "reps", "seed", "shift",
        }
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown experiment fields: {sorted(extra)}")
        if "dist" not in d:
            raise ValueError("experiment entry needs a dist block")
        shift = None
        if d.get("shift") is not None:
            sh = d["shift"]
            missing = {"delta", "tau"} - set(sh)
            if missing:
                raise ValueError(f"shift block missing fields: {sorted(missing)}")
            shift = ShiftSpec(delta=float(sh["delta"]), tau=int(sh["tau"]))
        return cls(
            dist=DistributionSpec.from_dict(d["dist"]),
            mode=d.get("mode", "direction"),
            m=int(d.get("m", 25)),
            zeta=float(d.get("zeta", 0.0)),
            arl0=None if d.get("arl0") is None else float(d["arl0"]),
            h=None if d.get("h") is None else float(d["h"]),
            reps=int(d.get("reps", 20_000)),
            seed=int(d.get("seed", 0)),
            shift=shift,
            spec_id=str(d.get("spec_id", d.get("id", ""))),
        )


@dataclass
class ReplicateRecords:
    """Per-replicate outcomes of one experiment cell.

    ``signal_index`` holds the global observation index of each alarm
    (warmup included); censored runs carry the horizon boundary.
    ``warmup_scale`` is the warmup value of the summand denominator
    (the direction B*_m, or B'_m in concentration mode).
    """

    signal_index: np.ndarray
    warmup_scale: np.ndarray
    censored: int
    redrawn: int
    discarded: int
    m: int
    tau: Optional[int]

    @property
    def run_lengths(self) -> np.ndarray:
        """Post-warmup run lengths N (in-control accounting)."""
        return self.signal_index - self.m

    @property
    def detection_delays(self) -> np.ndarray:
        """N - tau for shifted experiments."""
        if self.tau is None:
            raise ValueError("no shift in this experiment")
        return self.signal_index - self.tau


def calibrated_limit(
    zeta: float,
    arl0: float,
    reps: int = CALIBRATION_REPS,
    seed: int = CALIBRATION_SEED,
) -> float:
    """Standard-normal control limit for (zeta, arl0), cached per process."""
    key = (round(zeta, 12), round(arl0, 6), reps, seed)
    if key not in _h_cache:
        stream = (int(zeta * 1e6) << 24) ^ int(arl0)
        _h_cache[key] = find_control_limit(zeta, arl0, reps, RngStream(seed, stream))
    return _h_cache[key]


def _resolve_h(spec: ExperimentSpec) -> float:
    if spec.h is not None:
        return spec.h
    return calibrated_limit(spec.zeta, spec.arl0)


def _horizon(spec: ExperimentSpec) -> int:
    if spec.arl0 is not None:
        return int(100 * spec.arl0)
    return 1_000_000


class _BatchOutcome(NamedTuple):
    signal_index: np.ndarray  # 0 where the rep did not finish normally
    warmup_scale: np.ndarray
    degenerate: np.ndarray  # bool: warmup or mid-stream variance collapse
    early_alarm: np.ndarray  # bool: alarm at or before tau (shifted runs)
    censored: np.ndarray  # bool


def _run_batch(
    sampler,
    mode: str,
    zeta: float,
    h: float,
    m: int,
    shift: Optional[ShiftSpec],
    horizon: int,
    seed: int,
    rep_ids: np.ndarray,
    attempts: np.ndarray,
) -> _BatchOutcome:
    """Advance one batch of replicates in lockstep to completion."""
    n = rep_ids.size
    gens = [
        np.random.default_rng((seed, int(r), int(a)))
        for r, a in zip(rep_ids, attempts)
    ]
    direction = mode == "direction"
    tau = shift.tau if shift is not None else None
    delta = shift.delta if shift is not None else 0.0

    warm = np.empty((n, m))
    for i, g in enumerate(gens):
        warm[i] = sampler.draw(g, m)
    s = np.sin(warm)
    c = np.cos(warm)
    C = c.sum(axis=1)
    S = s.sum(axis=1)
    C2 = (c * c).sum(axis=1)
    S2 = (s * s).sum(axis=1)
    A2 = (s * c).sum(axis=1)

    signal_index = np.zeros(n, dtype=np.int64)
    warmup_scale = np.zeros(n)
    degenerate = np.zeros(n, dtype=bool)
    early_alarm = np.zeros(n, dtype=bool)
    censored = np.zeros(n, dtype=bool)

    with np.errstate(invalid="ignore", divide="ignore"):
        if direction:
            b2 = C * C * S2 + S * S * C2 - 2.0 * C * S * A2
            degenerate |= b2 <= DEGENERACY_EPS * m
            warmup_scale = np.sqrt(np.maximum(b2, 0.0) / m)
        else:
            r2 = C * C + S * S
            sumcos2 = (C * C * C2 + S * S * S2 + 2.0 * C * S * A2) / r2
            bp2 = sumcos2 / m - r2 / (m * m)
            degenerate |= (r2 <= 0.0) | (bp2 <= DEGENERACY_EPS * m)
            warmup_scale = np.sqrt(np.maximum(bp2, 0.0))

    alive = np.nonzero(~degenerate)[0]
    C, S, C2, S2, A2 = (arr[alive].copy() for arr in (C, S, C2, S2, A2))
    gens_alive = [gens[i] for i in alive]
    alive = alive.copy()
    d_plus = np.zeros(alive.size)
    d_minus = np.zeros(alive.size)

    buf = np.empty((alive.size, 0))
    col = 0
    t = m  # observations consumed so far
    k = float(m)
    while alive.size:
        if col >= buf.shape[1]:
            buf = np.empty((alive.size, _BLOCK))
            for i, g in enumerate(gens_alive):
                buf[i] = sampler.draw(g, _BLOCK)
            col = 0
        t += 1
        x = buf[:, col]
        col += 1
        if tau is not None and t > tau:
            x = x + delta  # sin/cos are periodic: no rewrap needed
        xs = np.sin(x)
        xc = np.cos(x)
        with np.errstate(invalid="ignore", divide="ignore"):
            if direction:
                b2 = C * C * S2 + S * S * C2 - 2.0 * C * S * A2
                bad = b2 <= DEGENERACY_EPS * k
                xi = (C * xs - S * xc) / np.sqrt(b2 / k)
            else:
                r2 = C * C + S * S
                sumcos2 = (C * C * C2 + S * S * S2 + 2.0 * C * S * A2) / r2
                bp2 = sumcos2 / k - r2 / (k * k)
                bad = (r2 <= 0.0) | (bp2 <= DEGENERACY_EPS * k)
                r = np.sqrt(r2)
                xi = ((C * xc + S * xs) / r - r / k) / np.sqrt(bp2)
        if bad.any():
            xi = np.where(bad, 0.0, xi)
        np.maximum(d_plus + xi - zeta, 0.0, out=d_plus)
        np.minimum(d_minus + xi + zeta, 0.0, out=d_minus)
        hit = (d_plus >= h) | (d_minus <= -h)

        done = hit | bad
        at_horizon = t - m >= horizon
        if at_horizon:
            done[:] = True
        if done.any():
            ids = alive[done]
            hit_ids = alive[hit]
            signal_index[hit_ids] = t
            degenerate[alive[bad & ~hit]] = True
            if tau is not None:
                early_alarm[hit_ids[signal_index[hit_ids] <= tau]] = True
            if at_horizon:
                cens = done & ~hit & ~bad
                cens_ids = alive[cens]
                censored[cens_ids] = True
                signal_index[cens_ids] = t
            keep = ~done
            alive = alive[keep]
            C, S, C2, S2, A2 = (arr[keep] for arr in (C, S, C2, S2, A2))
            d_plus = d_plus[keep]
            d_minus = d_minus[keep]
            buf = buf[keep]
            gens_alive = [g for g, kp in zip(gens_alive, keep) if kp]
            xs = xs[keep]
            xc = xc[keep]
        C += xc
        S += xs
        C2 += xc * xc
        S2 += xs * xs
        A2 += xs * xc
        k += 1.0
    return _BatchOutcome(signal_index, warmup_scale, degenerate, early_alarm, censored)


def run_replications(spec: ExperimentSpec) -> ReplicateRecords:
    """Simulate every replicate of an experiment cell to completion.

    Replicates whose warmup cannot standardize the summand are re-drawn
    on a fresh substream and counted; in shifted experiments, replicates
    that alarm at or before tau likewise (conditioning on no false alarm
    before the change).
    """
    sampler = make_sampler(spec.dist)
    h = _resolve_h(spec)
    horizon = _horizon(spec)
    reps = spec.reps

    signal_index = np.zeros(reps, dtype=np.int64)
    warmup_scale = np.zeros(reps)
    cens_mask = np.zeros(reps, dtype=bool)
    redrawn = 0
    discarded = 0

    rep_ids = np.arange(reps, dtype=np.int64)
    attempts = np.zeros(reps, dtype=np.int64)
    pending = rep_ids
    while pending.size:
        out = _run_batch(
            sampler,
            spec.mode,
            spec.zeta,
            h,
            spec.m,
            spec.shift,
            horizon,
            spec.seed,
            pending,
            attempts[pending],
        )
        finished = ~(out.degenerate | out.early_alarm)
        fin_ids = pending[finished]
        signal_index[fin_ids] = out.signal_index[finished]
        warmup_scale[fin_ids] = out.warmup_scale[finished]
        cens_mask[fin_ids] = out.censored[finished]
        redrawn += int(out.degenerate.sum())
        discarded += int(out.early_alarm.sum())
        retry = pending[~finished]
        attempts[retry] += 1
        if attempts[retry.astype(np.int64)].max(initial=0) > _MAX_ATTEMPTS:
            raise RuntimeError(
                "replicates keep failing (degenerate warmups or alarms before tau)"
            )
        pending = retry
    if spec.shift is not None:
        total = discarded + reps
        if discarded > 0.9 * total:
            warnings.warn(
                f"discard rate {discarded/total:.1%} exceeds 90%: "
                "tau is too late for this in-control ARL",
                stacklevel=2,
            )
    return ReplicateRecords(
        signal_index=signal_index,
        warmup_scale=warmup_scale,
        censored=int(cens_mask.sum()),
        redrawn=redrawn,
        discarded=discarded,
        m=spec.m,
        tau=spec.shift.tau if spec.shift is not None else None,
    )


def in_control_arl(spec: ExperimentSpec) -> ArlEstimate:
    """Average in-control run length, counted from the first monitored
    observation."""
    if spec.shift is not None:
        raise ValueError("in_control_arl takes an unshifted experiment")
    rec = run_replications(spec)
    return ArlEstimate.from_run_lengths(
        rec.run_lengths, censored=rec.censored, redrawn=rec.redrawn
    )


def out_of_control_arl(spec: ExperimentSpec) -> ArlEstimate:
    """Average detection delay E[N - tau | N > tau] after a rotation of
    size shift.delta at observation shift.tau + 1."""
    if spec.shift is None:
        raise ValueError("out_of_control_arl needs a shift block")
    rec = run_replications(spec)
    return ArlEstimate.from_run_lengths(
        rec.detection_delays,
        censored=rec.censored,
        redrawn=rec.redrawn,
        discarded=rec.discarded,
    )


class ProfileBin(NamedTuple):
    bin_mid: float
    mean_rl: float
    stderr: float
    count: int


def profile_from_records(
    rec: ReplicateRecords, bin_width: float = 1.0, min_count: int = 100
) -> list[ProfileBin]:
    """Bin per-replicate run lengths by the warmup scale estimate; bins
    holding fewer than ``min_count`` replicates are suppressed."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    idx = np.floor(rec.warmup_scale / bin_width).astype(np.int64)
    rls = rec.run_lengths.astype(float)
    out = []
    for b in np.unique(idx):
        sel = idx == b
        cnt = int(sel.sum())
        if cnt < min_count:
            continue
        vals = rls[sel]
        sd = vals.std(ddof=1) if cnt > 1 else 0.0
        out.append(
            ProfileBin(
                bin_mid=float((b + 0.5) * bin_width),
                mean_rl=float(vals.mean()),
                stderr=float(sd / math.sqrt(cnt)),
                count=cnt,
            )
        )
    return out


def conditional_arl_profile(
    spec: ExperimentSpec, bin_width: float = 1.0
) -> list[ProfileBin]:
    """In-control ARL conditional on the warmup denominator estimate."""
    if spec.shift is not None:
        raise ValueError("the conditional profile is an in-control diagnostic")
    return profile_from_records(run_replications(spec), bin_width=bin_width)


def _scale_row(entry: dict, idx: int) -> dict:
    try:
        dist = DistributionSpec.from_dict(entry["dist"])
    except (KeyError, ValueError) as exc:
        raise ExperimentFileError(f"entry {idx}: {exc}") from exc
    if dist.kappa is None:
        raise ExperimentFileError(f"entry {idx}: scale entries need a target kappa")
    if dist.family == "wrapped_stable":
        sigma = solve_stable_scale(dist.alpha, dist.kappa)
    elif dist.family == "wrapped_t":
        sigma = solve_student_scale(dist.alpha, dist.kappa)
    else:
        raise ExperimentFileError(
            f"entry {idx}: scale solving applies to wrapped_stable and wrapped_t"
        )
    return {
        "spec_id": str(entry.get("spec_id", entry.get("id", f"entry{idx}"))),
        "mode": "scale",
        "family": dist.family,
        "kappa": dist.kappa,
        "zeta": "",
        "m": "",
        "arl0": "",
        "delta": "",
        "tau": "",
        "reps": 0,
        "arl": sigma,
        "stderr": 0.0,
        "censored": 0,
    }


def _arl_row(entry: dict, idx: int) -> dict:
    try:
        spec = ExperimentSpec.from_dict(entry)
    except (KeyError, ValueError, TypeError) as exc:
        raise ExperimentFileError(f"entry {idx}: {exc}") from exc
    est = out_of_control_arl(spec) if spec.shift else in_control_arl(spec)
    return {
        "spec_id": spec.spec_id or f"entry{idx}",
        "mode": spec.mode,
        "family": spec.dist.family,
        "kappa": "" if spec.kappa is None else spec.kappa,
        "zeta": spec.zeta,
        "m": spec.m,
        "arl0": "" if spec.arl0 is None else spec.arl0,
        "delta": spec.shift.delta if spec.shift else "",
        "tau": spec.shift.tau if spec.shift else "",
        "reps": spec.reps,
        "arl": est.mean,
        "stderr": est.stderr,
        "censored": est.censored,
    }


def run_table(experiment_path: str, out_path: Optional[str] = None) -> str:
    """Run every entry of a JSON experiment file and render the results
    as CSV (also written to ``out_path`` when given).

    The file holds a JSON array.  Each entry is either an ARL experiment
    (fields of :class:`ExperimentSpec`, with ``dist`` nested) or, with
    ``"kind": "scale"``, a concentration-standardization solve whose
    sigma lands in the ``arl`` column.
    """
    with open(experiment_path, "r", encoding="utf-8") as fh:
        try:
            entries = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ExperimentFileError(
                f"{experiment_path} is not valid JSON (line {exc.lineno}): {exc.msg}"
            ) from exc
    if not isinstance(entries, list):
        raise ExperimentFileError("experiment file must hold a JSON array")
    rows = []
    for idx, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ExperimentFileError(f"entry {idx}: expected a JSON object")
        kind = entry.get("kind", "arl")
        if kind == "scale":
            rows.append(_scale_row(entry, idx))
        elif kind == "arl":
            rows.append(_arl_row(entry, idx))
        else:
            raise ExperimentFileError(f"entry {idx}: unknown kind {kind!r}")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    text = buf.getvalue()
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text

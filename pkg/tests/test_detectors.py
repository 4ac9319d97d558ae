import math

import numpy as np
import pytest

from circusum.circular import TrigAccumulator, normalize_angle
from circusum.detectors import (
    CusumConfig,
    CusumState,
    IllConditionedWarmupError,
    concentration_summand,
    concentration_summands,
    cusum_update,
    direction_summand,
    direction_summands,
    estimate_reference_constant,
    solve_delta_for_zeta,
)


def reference_direction_summands(xs):
    """Definitional oracle: sin(x_n - nu_hat)/B with explicit nu_hat and a
    direct sum of squared sine deviations.  Defined from the third
    observation on (a single prior point has zero sine variance)."""
    xs = np.asarray(xs, dtype=float)
    out = []
    for n in range(2, len(xs)):
        prev = xs[:n]
        nu = math.atan2(np.sin(prev).sum(), np.cos(prev).sum())
        b2 = (np.sin(prev - nu) ** 2).mean()
        out.append(math.sin(xs[n] - nu) / math.sqrt(b2))
    return np.array(out)


def reference_concentration_summands(xs):
    # from the fourth observation on: two prior points have identically
    # zero cosine-deviation variance (both deviations equal R/2)
    xs = np.asarray(xs, dtype=float)
    out = []
    for n in range(3, len(xs)):
        prev = xs[:n]
        nu = math.atan2(np.sin(prev).sum(), np.cos(prev).sum())
        r = math.hypot(np.cos(prev).sum(), np.sin(prev).sum())
        bp2 = (np.cos(prev - nu) ** 2).mean() - (r / n) ** 2
        out.append((math.cos(xs[n] - nu) - r / n) / math.sqrt(bp2))
    return np.array(out)


def vm_stream(seed, n, kappa=2.0, mu=0.4):
    return np.random.default_rng(seed).vonmises(mu, kappa, n)


class TestDirectionSummand:
    def test_hand_example(self):
        acc = TrigAccumulator.from_angles([-math.pi / 4, math.pi / 4])
        # nu_hat = 0, B = sqrt(1/2), summand = sin(pi/2)/B = sqrt(2)
        assert direction_summand(acc, math.pi / 2) == pytest.approx(
            math.sqrt(2.0), abs=1e-12
        )

    def test_at_mean_direction_is_zero(self):
        acc = TrigAccumulator.from_angles([-math.pi / 4, math.pi / 4])
        assert direction_summand(acc, 0.0) == pytest.approx(0.0, abs=1e-15)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(3)
        xs = rng.vonmises(1.0, 2.0, 40)
        acc = TrigAccumulator.from_angles(xs)
        x = 1.9
        base = direction_summand(acc, x)
        for delta in (1.234, -2.5, 3.0):
            acc_rot = TrigAccumulator.from_angles(normalize_angle(xs + delta))
            assert direction_summand(acc_rot, normalize_angle(x + delta)) == pytest.approx(
                base, abs=1e-10
            )

    def test_degenerate_warmup_raises(self):
        acc = TrigAccumulator.from_angles([0.5, 0.5, 0.5])
        with pytest.raises(IllConditionedWarmupError):
            direction_summand(acc, 1.0)

    def test_needs_two_points(self):
        acc = TrigAccumulator.from_angles([0.1])
        with pytest.raises(ValueError):
            direction_summand(acc, 1.0)


class TestConcentrationSummand:
    def test_hand_example(self):
        acc = TrigAccumulator.from_angles([-math.pi / 3, 0.0, math.pi / 3])
        # R = 2, mean cos dev = 2/3, B'^2 = 1/2 - 4/9 = 1/18
        assert concentration_summand(acc, 0.0) == pytest.approx(
            math.sqrt(2.0), abs=1e-12
        )

    def test_centering_zero(self):
        acc = TrigAccumulator.from_angles([-math.pi / 3, 0.0, math.pi / 3])
        x = math.acos(2.0 / 3.0)  # cos(x - nu_hat) = R/(n-1)
        assert concentration_summand(acc, x) == pytest.approx(0.0, abs=1e-12)

    def test_reflection_invariance(self):
        rng = np.random.default_rng(7)
        xs = rng.vonmises(0.9, 1.5, 60)
        x = 0.7
        a = concentration_summand(TrigAccumulator.from_angles(xs), x)
        b = concentration_summand(
            TrigAccumulator.from_angles(normalize_angle(-xs)), normalize_angle(-x)
        )
        assert a == pytest.approx(b, abs=1e-10)

    def test_expansion_matches_direct_sum(self):
        rng = np.random.default_rng(11)
        xs = rng.vonmises(-2.0, 0.8, 200)
        acc = TrigAccumulator.from_angles(xs)
        nu = math.atan2(acc.S, acc.C)
        direct = (np.cos(xs - nu) ** 2).sum()
        from circusum.detectors import _sum_cos2_dev

        r2 = acc.C**2 + acc.S**2
        assert _sum_cos2_dev(acc, r2) == pytest.approx(direct, abs=1e-10)


class TestBatchSummands:
    def test_matches_definitional_form_direction(self):
        xs = vm_stream(13, 10000)
        got = direction_summands(xs)[1:]  # entry 0 has a single prior point
        want = reference_direction_summands(xs)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_matches_definitional_form_concentration(self):
        xs = vm_stream(17, 10000)
        got = concentration_summands(xs)[2:]
        want = reference_concentration_summands(xs)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_two_prior_points_always_degenerate_for_concentration(self):
        assert math.isnan(concentration_summands(vm_stream(18, 3))[1])

    def test_matches_streaming_functions(self):
        xs = vm_stream(19, 500)
        dir_batch = direction_summands(xs)
        con_batch = concentration_summands(xs)
        acc = TrigAccumulator()
        acc.push(float(xs[0]))
        for j in range(1, len(xs)):
            if j >= 2:
                assert direction_summand(acc, float(xs[j])) == pytest.approx(
                    dir_batch[j - 1], abs=1e-12
                )
            if j >= 3:
                assert concentration_summand(acc, float(xs[j])) == pytest.approx(
                    con_batch[j - 1], abs=1e-12
                )
            acc.push(float(xs[j]))

    def test_rotation_invariance_full_sequence(self):
        xs = vm_stream(23, 2000, kappa=1.0)
        for delta in (1.234, -0.77):
            rot = normalize_angle(xs + delta)
            np.testing.assert_allclose(
                direction_summands(rot)[2:], direction_summands(xs)[2:], atol=1e-10
            )
            np.testing.assert_allclose(
                concentration_summands(rot)[2:],
                concentration_summands(xs)[2:],
                atol=1e-10,
            )

    def test_reflection_antisymmetry(self):
        xs = vm_stream(29, 2000)
        refl = normalize_angle(-xs)
        np.testing.assert_allclose(
            direction_summands(refl)[2:], -direction_summands(xs)[2:], atol=1e-10
        )
        np.testing.assert_allclose(
            concentration_summands(refl)[2:],
            concentration_summands(xs)[2:],
            atol=1e-10,
        )


class TestCusumUpdate:
    def test_zero_summands_pin_barriers(self):
        d_plus = d_minus = 0.0
        for _ in range(1000):
            d_plus, d_minus = cusum_update(d_plus, d_minus, 0.0, 0.25)
        assert d_plus == 0.0 and d_minus == 0.0

    def test_constant_drift_signals_on_ninth_step(self):
        # net increment 1.25 - 0.25 = 1.0 per step; first step with
        # D+ >= 8.59 is step 9
        d_plus = d_minus = 0.0
        steps = 0
        while d_plus < 8.59:
            d_plus, d_minus = cusum_update(d_plus, d_minus, 1.25, 0.25)
            steps += 1
        assert steps == 9


class TestCusumState:
    def config(self, **kw):
        base = dict(mode="direction", zeta=0.25, h=8.59, m=10)
        base.update(kw)
        return CusumConfig(**base)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CusumConfig(mode="speed", zeta=0.1, h=1.0, m=5)
        with pytest.raises(ValueError):
            CusumConfig(mode="direction", zeta=-0.1, h=1.0, m=5)
        with pytest.raises(ValueError):
            CusumConfig(mode="direction", zeta=0.1, h=0.0, m=5)
        with pytest.raises(ValueError):
            CusumConfig(mode="direction", zeta=0.1, h=1.0, m=1)

    def test_warmup_phase(self):
        state = CusumState(self.config())
        xs = vm_stream(31, 10)
        for x in xs:
            assert state.step(x) == "warming"
        assert state.n_total == 10
        assert state.step(vm_stream(37, 1)[0]) in ("monitoring", "signaled")

    def test_in_control_keeps_barriers_bounded(self):
        state = CusumState(self.config(h=50.0))
        for x in vm_stream(41, 500):
            state.step(x)
            assert 0.0 <= state.d_plus < 50.0
            assert -50.0 < state.d_minus <= 0.0
        assert state.phase == "monitoring"

    def test_shift_triggers_up_signal_and_changepoint(self):
        rng = np.random.default_rng(43)
        pre = rng.vonmises(0.0, 3.0, 60)
        post = rng.vonmises(1.2, 3.0, 200)
        xs = np.concatenate([pre, post])
        state = CusumState(self.config(m=30, h=8.59))
        state.step_many(xs)
        assert state.phase == "signaled"
        ev = state.signal
        assert ev.side == "up"
        assert ev.signal_index > 60
        assert ev.changepoint < ev.signal_index
        assert 30 <= ev.changepoint <= 75
        # segment statistics describe the pre-change regime
        assert ev.segment_mean == pytest.approx(0.0, abs=0.35)

    def test_immediate_drift_changepoint_is_warmup_end(self):
        # after a clean warmup the very first monitored step starts the
        # excursion, so the last zero of D+ is the warmup end
        warm = np.linspace(-0.3, 0.3, 12)
        stream = np.concatenate([warm, np.full(40, 1.4)])
        state = CusumState(CusumConfig(mode="direction", zeta=0.0, h=3.0, m=12))
        state.step_many(stream)
        assert state.phase == "signaled"
        assert state.changepoint_estimate() == 12

    def test_step_after_signal_rejected(self):
        state = CusumState(CusumConfig(mode="direction", zeta=0.0, h=0.5, m=2))
        state.step_many([-0.4, 0.4, 1.5, 1.5, 1.5, 1.5])
        assert state.phase == "signaled"
        with pytest.raises(RuntimeError):
            state.step(0.1)

    def test_restart_unsignalled_rejected(self):
        state = CusumState(self.config())
        with pytest.raises(RuntimeError):
            state.restart()

    def test_restart_carries_global_indices(self):
        rng = np.random.default_rng(47)
        xs = np.concatenate([rng.vonmises(0.0, 3.0, 50), rng.vonmises(1.5, 3.0, 120)])
        state = CusumState(self.config(m=20, h=10.0))
        state.step_many(xs)
        assert state.phase == "signaled"
        tau = state.changepoint_estimate()
        nxt = state.restart()
        assert nxt.start_index == tau + 1
        assert nxt.phase == "warming"
        assert nxt.n_total == 0
        # replay from the changepoint: indices in the new state stay global
        nxt.step_many(xs[tau:])
        assert nxt.last_index == nxt.start_index + nxt.n_total - 1
        assert nxt.phase == "monitoring"
        assert nxt.last_index == len(xs)

    def test_ill_conditioned_warmup_extends(self):
        xs = np.concatenate([np.full(5, 0.7), vm_stream(53, 30, kappa=2.0)])
        state = CusumState(CusumConfig(mode="direction", zeta=0.0, h=8.0, m=3))
        state.step_many(xs)
        assert state.extended_warmup >= 2
        assert state.warmup_len > 3
        assert state.phase in ("monitoring", "signaled")

    def test_all_identical_never_leaves_warmup(self):
        state = CusumState(CusumConfig(mode="direction", zeta=0.0, h=8.0, m=3))
        state.step_many(np.full(50, 1.0))
        assert state.phase == "warming"
        assert state.extended_warmup == 47

    def test_concentration_mode_detects_spread_change(self):
        rng = np.random.default_rng(59)
        pre = rng.vonmises(0.0, 4.0, 80)
        post = rng.uniform(-math.pi, math.pi, 400)
        state = CusumState(CusumConfig(mode="concentration", zeta=0.0, h=15.0, m=50))
        state.step_many(np.concatenate([pre, post]))
        assert state.phase == "signaled"
        assert state.signal.side == "down"
        assert 60 <= state.signal.changepoint <= 110


class TestReferenceConstant:
    def test_two_point_example(self):
        xs = [-math.pi / 4, math.pi / 4]
        zeta = estimate_reference_constant(xs, math.pi / 6)
        assert zeta == pytest.approx((math.pi / 12) * 0.5, abs=1e-12)

    def test_vanishes_as_delta_shrinks(self):
        xs = vm_stream(61, 30)
        prev = estimate_reference_constant(xs, 1e-3)
        for d in (1e-4, 1e-5, 1e-6):
            cur = estimate_reference_constant(xs, d)
            assert abs(cur) < abs(prev)
            prev = cur
        assert abs(prev) < 1e-6

    def test_degenerate_sample_rejected(self):
        with pytest.raises(Exception):
            estimate_reference_constant([0.2, 0.2, 0.2], 0.5)

    def test_delta_domain(self):
        with pytest.raises(ValueError):
            estimate_reference_constant([-0.1, 0.4], 0.0)
        with pytest.raises(ValueError):
            estimate_reference_constant([-0.1, 0.4], 3.5)


class TestSolveDelta:
    def test_round_trip(self):
        xs = vm_stream(67, 50, kappa=2.0)
        delta0 = math.pi / 6
        zeta = estimate_reference_constant(xs, delta0)
        sol = solve_delta_for_zeta(xs, zeta)
        assert sol.bracketed
        assert sol.delta0 == pytest.approx(delta0, abs=1e-6)

    def test_symmetric_two_point_inverse(self):
        xs = [-math.pi / 4, math.pi / 4]
        sol = solve_delta_for_zeta(xs, (math.pi / 12) * 0.5)
        assert sol.bracketed
        assert sol.delta0 == pytest.approx(math.pi / 6, abs=1e-6)

    def test_unattainable_cap_flagged(self):
        xs = vm_stream(71, 50, kappa=2.0)
        sol = solve_delta_for_zeta(xs, 1e6)
        assert not sol.bracketed
        assert sol.delta0 == math.pi


class TestInControlMoments:
    def test_summand_mean_and_variance(self):
        xs = vm_stream(73, 120000, kappa=2.0)
        xi = direction_summands(xs)[100:]
        se = 1.0 / math.sqrt(xi.size)
        assert abs(xi.mean()) < 4 * se
        assert xi.var() == pytest.approx(1.0, rel=0.02)

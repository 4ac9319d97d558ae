import numpy as np
import pytest

from circusum.calibration import ArlEstimate, find_control_limit, normal_cusum_arl
from circusum.samplers import RngStream


class TestNormalCusumArl:
    def test_tiny_limit_gives_arl_one(self):
        est = normal_cusum_arl(0.0, 1e-12, 5000, RngStream(1, 0))
        assert est.mean == 1.0
        assert est.stderr == 0.0

    def test_monotone_in_h(self):
        means = [
            normal_cusum_arl(0.25, h, 4000, RngStream(2, 0)).mean
            for h in (1.0, 2.0, 4.0, 6.0, 8.0)
        ]
        assert all(a < b for a, b in zip(means, means[1:]))

    def test_monotone_in_zeta(self):
        means = [
            normal_cusum_arl(z, 5.0, 4000, RngStream(3, 0)).mean
            for z in (0.0, 0.25, 0.5)
        ]
        assert all(a < b for a, b in zip(means, means[1:]))

    def test_deterministic_under_fixed_seed(self):
        a = normal_cusum_arl(0.25, 6.0, 3000, RngStream(4, 9))
        b = normal_cusum_arl(0.25, 6.0, 3000, RngStream(4, 9))
        assert a == b

    def test_censoring_flagged(self):
        est = normal_cusum_arl(0.25, 8.0, 2000, RngStream(5, 0), horizon=50)
        assert est.censored > 0
        assert est.flagged

    def test_reference_limit_reproduces_nominal_arl(self):
        # two-sided chart at zeta=0.25 with h=8.59 runs near 500 in control
        est = normal_cusum_arl(0.25, 8.59, 100000, RngStream(42, 0))
        assert est.mean == pytest.approx(500.0, rel=0.03)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            normal_cusum_arl(-0.1, 5.0, 100, RngStream(1, 0))
        with pytest.raises(ValueError):
            normal_cusum_arl(0.1, 0.0, 100, RngStream(1, 0))
        with pytest.raises(ValueError):
            normal_cusum_arl(0.1, 5.0, 0, RngStream(1, 0))


class TestFindControlLimit:
    def test_round_trip(self):
        h = find_control_limit(0.25, 400.0, 20000, RngStream(11, 0))
        est = normal_cusum_arl(0.25, h, 20000, RngStream(12, 0))
        assert abs(est.mean - 400.0) < 2 * est.stderr + 0.01 * 400.0

    def test_zero_reference_value(self):
        h = find_control_limit(0.0, 250.0, 20000, RngStream(13, 0))
        est = normal_cusum_arl(0.0, h, 20000, RngStream(14, 0))
        assert abs(est.mean - 250.0) < 2 * est.stderr + 0.01 * 250.0

    def test_rejects_small_arl0(self):
        with pytest.raises(ValueError):
            find_control_limit(0.25, 10.0, 5000, RngStream(15, 0))


class TestArlEstimate:
    def test_aggregation(self):
        est = ArlEstimate.from_run_lengths([10, 20, 30, 40])
        assert est.mean == 25.0
        assert est.reps == 4
        assert est.stderr == pytest.approx(np.std([10, 20, 30, 40], ddof=1) / 2)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ArlEstimate.from_run_lengths([])

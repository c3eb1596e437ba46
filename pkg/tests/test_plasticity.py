import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncgsnn.data import NO_SPIKE
from ncgsnn.engine import ClassificationLayer, LayerResponse, integrate_sample
from ncgsnn.exceptions import NumericError, ParameterError
from ncgsnn.plasticity import (RuleConfig, apply_dropout, apply_stdp_update, compute_error_rstdp,
                               compute_error_s2stdp, compute_error_sstdp, desired_times,
                               mean_winner_time)
from ncgsnn.regulation import ThresholdState

TOL = 1e-12


def response(times, winners):
    times = np.asarray(times, float)
    n = times.size
    return LayerResponse(times, np.ones(n, bool), np.zeros(n), np.asarray(winners),
                         np.zeros(n, bool))


class TestMeanWinnerTime:
    def test_examples(self):
        assert mean_winner_time(response([0.2, 0.4, 0.6], [0, 1, 2])) == pytest.approx(0.4, abs=TOL)
        assert mean_winner_time(response([0.5] * 3, [0, 1, 2])) == 0.5

    def test_only_winners_count(self):
        # two groups of two: winners are neurons 0 and 3
        assert mean_winner_time(response([0.1, 0.9, 0.9, 0.3], [0, 3])) == pytest.approx(0.2)

    def test_single_neuron_groups_reduce_to_layer_mean(self, rng):
        t = rng.uniform(0, 1, 10)
        assert mean_winner_time(response(t, np.arange(10))) == pytest.approx(t.mean(), abs=TOL)


class TestErrors:
    def test_sstdp_examples(self):
        e = compute_error_sstdp(0.45, 0.5, 0.2, 10, True)
        assert desired_times(0.5, 0.2, 10)[0] == pytest.approx(0.32, abs=TOL)
        assert e.error == pytest.approx(0.13, abs=TOL) and e.eligible
        e = compute_error_sstdp(0.30, 0.5, 0.2, 10, True)
        assert e.error == 0 and not e.eligible
        e = compute_error_sstdp(0.40, 0.5, 0.2, 10, False)
        assert desired_times(0.5, 0.2, 10)[1] == pytest.approx(0.52, abs=TOL)
        assert e.error == pytest.approx(-0.12, abs=TOL) and e.eligible

    def test_sstdp_late_non_target_not_updated(self):
        e = compute_error_sstdp(0.9, 0.5, 0.2, 10, False)
        assert e.error == 0 and not e.eligible

    def test_s2stdp_examples(self):
        assert abs(compute_error_s2stdp(0.32, 0.5, 0.2, 10, True).error) <= TOL
        assert compute_error_s2stdp(0.45, 0.5, 0.2, 10, True).error == pytest.approx(0.13, abs=TOL)
        e = compute_error_s2stdp(0.40, 0.5, 0.2, 10, False)
        assert e.error == pytest.approx(-0.12, abs=TOL) and e.eligible
        assert compute_error_s2stdp(0.30, 0.5, 0.2, 10, True).eligible

    def test_rstdp(self):
        assert compute_error_rstdp(3, 3).error == 1.0
        assert compute_error_rstdp(3, 7).error == -1.0
        assert compute_error_rstdp(3, 7).eligible

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 1), st.integers(2, 100))
    def test_desired_spread_is_g(self, mean_time, _, g, c):
        target, other = desired_times(mean_time, g, c)
        assert other - target == pytest.approx(g, rel=1e-12, abs=1e-15)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 1), st.integers(2, 100), st.booleans())
    @settings(max_examples=300)
    def test_sstdp_agrees_with_s2stdp_when_gated_open(self, t, mean_time, g, c, is_target):
        a = compute_error_sstdp(t, mean_time, g, c, is_target)
        b = compute_error_s2stdp(t, mean_time, g, c, is_target)
        if a.eligible:
            assert a.error == b.error
        else:
            assert a.error == 0


class TestUpdate:
    cfg = RuleConfig("s2-stdp", a_plus=0.1, a_minus=-0.1, g=0.2)

    def test_example(self):
        out = apply_stdp_update([0.5, 0.2], [0.1, NO_SPIKE], 0.3, 0.2, self.cfg)
        np.testing.assert_allclose(out, [0.52, 0.18], atol=TOL)

    def test_zero_error(self):
        row = np.array([0.5, 0.2, 0.9])
        np.testing.assert_array_equal(apply_stdp_update(row, [0.1, 0.5, NO_SPIKE], 0.3, 0.0,
                                                        self.cfg), row)

    def test_clip(self):
        out = apply_stdp_update([0.999, 0.5], [0.1, 0.2], 0.3, 0.2, self.cfg)
        assert out[0] == 1.0

    def test_equal_time_is_causal(self):
        out = apply_stdp_update([0.5], [0.3], 0.3, 1.0, self.cfg)
        assert out[0] == pytest.approx(0.6)

    def test_non_finite_error(self):
        with pytest.raises(NumericError):
            apply_stdp_update([0.5], [0.1], 0.3, np.nan, self.cfg)
        with pytest.raises(NumericError):
            apply_stdp_update([0.5], [0.1], 0.3, np.inf, self.cfg)

    def test_block_matches_rows(self, rng):
        W = rng.uniform(0, 1, (30, 4))
        x = rng.uniform(0, 1, 30)
        t = rng.uniform(0, 1, 4)
        e = rng.uniform(-0.5, 0.5, 4)
        block = apply_stdp_update(W, x, t, e, self.cfg)
        for j in range(4):
            np.testing.assert_array_equal(block[:, j], apply_stdp_update(W[:, j], x, t[j], e[j],
                                                                         self.cfg))

    @given(st.integers(0, 2**32 - 1), st.floats(-1, 1))
    @settings(max_examples=200)
    def test_bounds_and_normalization(self, seed, e):
        rng = np.random.default_rng(seed)
        row = rng.uniform(0.2, 0.8, 50)
        x = rng.uniform(0, 1, 50)
        x[rng.random(50) < 0.3] = NO_SPIKE
        cfg = RuleConfig("s2-stdp", 0.01, -0.01, 0.2, normalize=True, norm_target=25.0)
        out = apply_stdp_update(row, x, rng.uniform(), e, cfg)
        assert out.min() >= 0 and out.max() <= 1
        if 0 < out.min() and out.max() < 1:
            assert out.sum() == pytest.approx(25.0, rel=1e-9)

    def test_positive_error_moves_target_earlier(self, rng):
        # replaying a sample after a positive-error update never delays the neuron
        cfg = RuleConfig("s2-stdp", 0.01, -0.01, 0.2)
        for _ in range(200):
            w = rng.uniform(0, 1, (40, 1))
            x = np.round(rng.uniform(0, 1, 40), 2)
            layer = ClassificationLayer(w, 1, 1, np.zeros(1, bool),
                                        ThresholdState.uniform(1, rng.uniform(2, 10)))
            r = integrate_sample(layer, x)
            if not r.fired[0]:
                continue
            e = compute_error_s2stdp(r.firing_times[0], 0.5, 0.2, 10, True)
            if e.error <= 0:
                continue
            layer.weights[:, 0] = apply_stdp_update(w[:, 0], x, r.firing_times[0], e.error, cfg)
            assert integrate_sample(layer, x).firing_times[0] <= r.firing_times[0]


class TestConfigAndDropout:
    @pytest.mark.parametrize("kwargs", [dict(a_plus=0), dict(a_minus=0.1), dict(g=0),
                                        dict(w_min=1, w_max=1), dict(dropout=1.0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            RuleConfig(**kwargs)

    def test_dropout(self, rng):
        assert apply_dropout(10, 0.0, rng).all()
        assert abs(apply_dropout(10**6, 0.5, rng).mean() - 0.5) < 0.002
        with pytest.raises(ParameterError):
            apply_dropout(10, 1.0, rng)

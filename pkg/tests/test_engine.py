import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncgsnn.data import NO_SPIKE, T_MAX, SpikeDataset
from ncgsnn.engine import (ClassificationLayer, LayerResponse, first_neuron, integrate_sample,
                           predict, select_thresholds)
from ncgsnn.exceptions import ConsistencyError, ParameterError
from ncgsnn.regulation import ThresholdState
from ncgsnn.training import predict_dataset

from oracles import DT, dense_simulate


def make_layer(weights, n_classes, m, theta=1.0, labeling=False, mode="cr2"):
    weights = np.asarray(weights, dtype=float)
    n = n_classes * m
    non_target = np.zeros(n, dtype=bool)
    if labeling:
        non_target[m - 1::m] = True
    return ClassificationLayer(weights, n_classes, m, non_target,
                               ThresholdState.uniform(n, theta, 0.1, 0.9, mode))


class TestIntegrate:
    def test_single_neuron_example(self):
        layer = make_layer([[0.5], [0.6]], 1, 1)
        r = integrate_sample(layer, np.array([0.2, 0.4]))
        assert r.fired[0] and r.firing_times[0] == 0.4
        assert r.potentials[0] == pytest.approx(1.1)

    def test_unreachable_threshold(self):
        layer = make_layer([[0.5], [0.6]], 1, 1, theta=10.0)
        r = integrate_sample(layer, np.array([0.2, 0.4]))
        assert not r.fired[0] and r.firing_times[0] == T_MAX

    def test_tie_goes_to_highest_potential(self):
        layer = make_layer([[1.3, 1.5]], 1, 2)
        r = integrate_sample(layer, np.array([0.3]))
        assert r.fired.all() and (r.firing_times == 0.3).all()
        assert r.winners[0] == 1

    def test_inhibited_neuron_stops_integrating(self):
        # neuron 0 crosses at 0.1, neuron 1 would cross at 0.2 but is inhibited
        layer = make_layer([[1.0, 0.5], [0.0, 0.6]], 1, 2)
        r = integrate_sample(layer, np.array([0.1, 0.2]))
        assert r.fired.tolist() == [True, False]
        assert r.inhibited.tolist() == [False, True]
        assert r.firing_times[1] == T_MAX and r.potentials[1] == pytest.approx(0.5)

    def test_no_inhibition_between_groups(self):
        layer = make_layer([[1.0, 0.5], [0.0, 0.6]], 2, 1)
        r = integrate_sample(layer, np.array([0.1, 0.2]))
        assert r.fired.all() and r.firing_times.tolist() == [0.1, 0.2]
        g = integrate_sample(layer, np.array([0.1, 0.2]), scope="global")
        assert g.fired.tolist() == [True, False]

    def test_same_timestamp_batched(self):
        # both inputs arrive together: the batch is applied before any check
        layer = make_layer([[0.6, 1.0], [0.6, -0.2]], 1, 2)
        r = integrate_sample(layer, np.array([0.5, 0.5]))
        assert r.fired.tolist() == [True, False]
        assert r.potentials.tolist() == pytest.approx([1.2, 0.8])

    def test_dropout_mask(self):
        layer = make_layer([[2.0, 2.0, 2.0]], 1, 3)
        r = integrate_sample(layer, np.array([0.1]), active=np.array([False, True, True]))
        assert not r.fired[0] and r.potentials[0] == 0.0
        assert r.winners[0] == 1

    def test_errors(self):
        layer = make_layer([[0.5], [0.6]], 1, 1)
        with pytest.raises(ConsistencyError):
            integrate_sample(layer, np.array([0.2]))
        with pytest.raises(ParameterError):
            integrate_sample(layer, np.array([0.2, 0.3]), thresholds=np.array([0.0]))
        with pytest.raises(ConsistencyError):
            integrate_sample(layer, np.array([0.2, 0.3]), thresholds=np.array([1.0, 1.0]))

    def test_matches_dense_oracle(self, rng):
        for _ in range(150):
            n_classes, m, d = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 40)
            n = n_classes * m
            W = rng.uniform(0, 1, (d, n))
            thr = rng.uniform(0.1, 0.6, n) * d * 0.5
            steps = rng.integers(0, 101, d) * 10
            steps[rng.random(d) < 0.2] = -1
            times = np.where(steps >= 0, steps * DT, NO_SPIKE)
            scope = ["intra-ncg", "global", "none"][rng.integers(3)]
            layer = make_layer(W, n_classes, m)
            r = integrate_sample(layer, times, scope, thr)
            t, f, p, inh, w = dense_simulate(W, steps, thr, n_classes, scope)
            assert np.all(np.abs(r.firing_times - t) <= DT)
            np.testing.assert_array_equal(r.fired, f)
            np.testing.assert_array_equal(r.inhibited, inh)
            np.testing.assert_array_equal(r.winners, w)
            np.testing.assert_allclose(r.potentials, p, rtol=1e-12, atol=1e-12)


@st.composite
def instances(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    n_classes, m, d = draw(st.integers(1, 4)), draw(st.integers(1, 5)), draw(st.integers(1, 30))
    n = n_classes * m
    W = rng.uniform(0, 1, (d, n))
    thr = rng.uniform(0.1, 0.7, n) * d * 0.5
    times = np.round(rng.uniform(0, 1, d), 2)
    times[rng.random(d) < 0.2] = NO_SPIKE
    scope = draw(st.sampled_from(["intra-ncg", "global", "none"]))
    return make_layer(W, n_classes, m), times, thr, scope


@given(instances())
@settings(max_examples=150, deadline=None)
def test_inhibition_soundness_and_single_winner(inst):
    layer, times, thr, scope = inst
    r = integrate_sample(layer, times, scope, thr)
    m = layer.neurons_per_class
    for c in range(layer.n_classes):
        grp = np.arange(c * m, (c + 1) * m)
        w = r.winners[c]
        assert w in grp
        assert np.all(r.firing_times[grp] >= r.firing_times[w])
        assert not (r.fired & r.inhibited).any()
    if scope == "intra-ncg":
        # every fired neuron of a group fired at the group's single resolution time
        for c in range(layer.n_classes):
            grp = np.arange(c * m, (c + 1) * m)
            assert np.unique(r.firing_times[grp][r.fired[grp]]).size <= 1


@given(instances(), st.integers(0, 100), st.floats(1.0, 3.0))
@settings(max_examples=150, deadline=None)
def test_raising_threshold_never_advances_firing(inst, pick, factor):
    layer, times, thr, scope = inst
    j = pick % layer.n_neurons
    before = integrate_sample(layer, times, scope, thr).firing_times[j]
    raised = thr.copy()
    raised[j] *= factor
    after = integrate_sample(layer, times, scope, raised).firing_times[j]
    assert after >= before


@given(instances(), st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_input_order_irrelevant(inst, seed):
    layer, times, thr, scope = inst
    perm = np.random.default_rng(seed).permutation(times.size)
    shuffled = make_layer(layer.weights[perm], layer.n_classes, layer.neurons_per_class)
    a = integrate_sample(layer, times, scope, thr)
    b = integrate_sample(shuffled, times[perm], scope, thr)
    near_tie = np.abs(a.potentials - thr) < 1e-9
    if near_tie.any():
        return
    np.testing.assert_array_equal(a.firing_times, b.firing_times)
    np.testing.assert_array_equal(a.winners, b.winners)


class TestPredict:
    def layer(self, n):
        return make_layer(np.zeros((1, n)), n, 1)

    def response(self, times, fired, pot):
        times = np.asarray(times, float)
        return LayerResponse(times, np.asarray(fired), np.asarray(pot, float),
                             np.arange(times.size), np.zeros(times.size, bool))

    def test_argmin(self):
        r = self.response([0.4, 0.2, 0.9], [True] * 3, [1, 1, 1])
        assert predict(r, self.layer(3)) == 1

    def test_tie_highest_potential(self):
        r = self.response([0.2, 0.2], [True, True], [1.3, 1.5])
        assert predict(r, self.layer(2)) == 1

    def test_nothing_fired(self):
        r = self.response([1.0, 1.0], [False, False], [0.1, 0.7])
        assert predict(r, self.layer(2)) == 1

    def test_fired_beats_silent_at_t_max(self):
        r = self.response([1.0, 1.0], [True, False], [1.0, 5.0])
        assert first_neuron(r) == 0

    def test_equal_potentials_lowest_index(self):
        r = self.response([0.3, 0.3, 0.3], [True] * 3, [2.0, 2.0, 2.0])
        assert first_neuron(r) == 0

    def test_independent_of_training_thresholds(self, rng):
        layer = make_layer(rng.uniform(0, 1, (20, 12)), 4, 3, theta=3.0)
        X = rng.uniform(0, 1, (200, 20))
        ds = SpikeDataset(X, np.zeros(200, int), 4)
        before = predict_dataset(layer, ds)
        layer.thresholds.theta_prime[:] = rng.uniform(3, 50, 12)
        np.testing.assert_array_equal(predict_dataset(layer, ds), before)

    def test_batch_predict_matches_single(self, rng):
        layer = make_layer(rng.uniform(0, 1, (20, 12)), 4, 3, theta=3.0)
        X = np.round(rng.uniform(0, 1, (300, 20)), 2)
        ds = SpikeDataset(X, np.zeros(300, int), 4)
        single = [predict(integrate_sample(layer, x), layer) for x in X]
        np.testing.assert_array_equal(predict_dataset(layer, ds), single)


class TestSelectThresholds:
    def test_test_phase(self):
        layer = make_layer(np.zeros((1, 50)), 10, 5, theta=2.0, labeling=True)
        layer.thresholds.theta_prime[:] = 7.0
        assert (select_thresholds(layer) == 2.0).all()

    def test_train_phase_targets_of_label(self):
        layer = make_layer(np.zeros((1, 50)), 10, 5, theta=2.0, labeling=True)
        layer.thresholds.theta_prime[:] = 7.0
        thr = select_thresholds(layer, 2, "train")
        assert np.flatnonzero(thr == 7.0).tolist() == [10, 11, 12, 13]
        assert (np.delete(thr, [10, 11, 12, 13]) == 2.0).sum() == 46

    def test_fresh_layer_train_equals_test(self):
        layer = make_layer(np.zeros((1, 50)), 10, 5, theta=2.0, labeling=True)
        np.testing.assert_array_equal(select_thresholds(layer, 3, "train"),
                                      select_thresholds(layer))

    def test_missing_label(self):
        layer = make_layer(np.zeros((1, 4)), 2, 2)
        with pytest.raises(ParameterError):
            select_thresholds(layer, None, "train")
        with pytest.raises(ParameterError):
            select_thresholds(layer, 0, "predict")


class TestLayer:
    def test_initialize(self):
        st_ = ThresholdState.uniform(50, 1.0)
        layer = ClassificationLayer.initialize(784, 10, 5, st_, labeling=True,
                                               rng=np.random.default_rng(0))
        assert layer.weights.shape == (784, 50)
        assert layer.weights.min() >= 0 and layer.weights.max() <= 1
        assert layer.non_target.reshape(10, 5).sum(1).tolist() == [1] * 10
        assert layer.class_map.tolist() == np.repeat(np.arange(10), 5).tolist()
        assert layer.target_group(1).tolist() == [5, 6, 7, 8]

    def test_labeling_needs_two_neurons(self):
        with pytest.raises(ParameterError):
            ClassificationLayer.initialize(4, 2, 1, ThresholdState.uniform(2, 1.0), labeling=True)

    def test_shape_mismatch(self):
        with pytest.raises(ConsistencyError):
            make_layer(np.zeros((3, 5)), 2, 2)

"""Event-driven simulation of a single-spike integrate-and-fire classification layer.

Neurons are laid out class-major: neuron ``j`` belongs to class (and NCG)
``j // M``. Within a sample the potential of every neuron is a step function
of time that only changes at input spike times, so the pass walks the
time-sorted input events, checks thresholds after each distinct timestamp and
stops as soon as every inhibition group has produced its first spike.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from . import _kernels as _k
from .data import T_MAX
from .exceptions import ConsistencyError, ParameterError
from .regulation import Regulation, ThresholdState


class Inhibition(str, Enum):
    INTRA_NCG = "intra-ncg"
    GLOBAL = "global"
    NONE = "none"


class SpikeEvents(NamedTuple):
    """Input spikes grouped by timestamp.

    ``order`` lists spiking inputs by ascending time, ``ends[k]`` is the index
    into ``order`` of the last input belonging to event ``k`` and ``times[k]``
    its timestamp.
    """

    order: np.ndarray
    ends: np.ndarray
    times: np.ndarray


def spike_events(times: np.ndarray) -> SpikeEvents:
    present = np.flatnonzero(np.isfinite(times))
    order = present[np.argsort(times[present], kind="stable")]
    sorted_times = times[order]
    if sorted_times.size == 0:
        empty = np.empty(0, dtype=np.int64)
        return SpikeEvents(order, empty, np.empty(0))
    last = np.flatnonzero(np.diff(sorted_times) != 0)
    ends = np.append(last, sorted_times.size - 1)
    return SpikeEvents(order, ends, sorted_times[ends])


@dataclass
class ClassificationLayer:
    """Weights ``(n_inputs, N)`` plus the class/group structure of the output neurons."""

    weights: np.ndarray
    n_classes: int
    neurons_per_class: int
    non_target: np.ndarray
    thresholds: ThresholdState
    w_min: float = 0.0
    w_max: float = 1.0

    def __post_init__(self):
        n = self.n_classes * self.neurons_per_class
        if self.weights.ndim != 2 or self.weights.shape[1] != n:
            raise ConsistencyError(
                f"weights shape {self.weights.shape} does not match {n} neurons"
            )
        per_group = self.non_target.reshape(self.n_classes, self.neurons_per_class).sum(1)
        if (per_group > 1).any():
            raise ConsistencyError("at most one non-target neuron per NCG")
        if self.thresholds.theta.shape != (n,):
            raise ConsistencyError("threshold state does not match layer size")

    @classmethod
    def initialize(cls, n_inputs: int, n_classes: int, neurons_per_class: int,
                   thresholds: ThresholdState, labeling: bool = False,
                   w_min: float = 0.0, w_max: float = 1.0, rng=None) -> "ClassificationLayer":
        if neurons_per_class < 1:
            raise ParameterError("need at least one neuron per class")
        if labeling and neurons_per_class < 2:
            raise ParameterError("neuron labeling requires at least 2 neurons per class")
        if not w_min < w_max:
            raise ParameterError(f"w_min ({w_min}) must be below w_max ({w_max})")
        rng = np.random.default_rng(rng)
        n = n_classes * neurons_per_class
        weights = rng.uniform(w_min, w_max, size=(n_inputs, n))
        non_target = np.zeros(n, dtype=bool)
        if labeling:
            # last neuron of every group
            non_target[neurons_per_class - 1::neurons_per_class] = True
        return cls(weights, n_classes, neurons_per_class, non_target, thresholds, w_min, w_max)

    @property
    def n_inputs(self) -> int:
        return self.weights.shape[0]

    @property
    def n_neurons(self) -> int:
        return self.weights.shape[1]

    @property
    def class_map(self) -> np.ndarray:
        return np.arange(self.n_neurons) // self.neurons_per_class

    group_map = class_map

    def group(self, c: int) -> np.ndarray:
        m = self.neurons_per_class
        return np.arange(c * m, (c + 1) * m)

    def target_group(self, c: int) -> np.ndarray:
        g = self.group(c)
        return g[~self.non_target[g]]

    def copy(self) -> "ClassificationLayer":
        return ClassificationLayer(self.weights.copy(), self.n_classes, self.neurons_per_class,
                                   self.non_target.copy(), self.thresholds.copy(),
                                   self.w_min, self.w_max)


@dataclass
class LayerResponse:
    firing_times: np.ndarray
    fired: np.ndarray
    potentials: np.ndarray
    winners: np.ndarray
    inhibited: np.ndarray


def select_thresholds(layer: ClassificationLayer, sample_label=None,
                      phase: str = "test") -> np.ndarray:
    """Effective per-neuron thresholds for one sample.

    Only target neurons of the sample's own NCG switch to their training
    threshold, and only during training.
    """
    state = layer.thresholds
    thresholds = state.theta.copy()
    if phase == "test":
        return thresholds
    if phase != "train":
        raise ParameterError(f"unknown phase {phase!r}")
    if sample_label is None:
        raise ParameterError("training-phase thresholds need the sample label")
    if state.mode is Regulation.TWO_COMPARTMENT:
        g = layer.target_group(int(sample_label))
        thresholds[g] = state.theta_prime[g]
    return thresholds


_SCOPE_CODES = {Inhibition.INTRA_NCG: _k.SCOPE_INTRA, Inhibition.GLOBAL: _k.SCOPE_GLOBAL,
                Inhibition.NONE: _k.SCOPE_NONE}


def integrate_sample(layer: ClassificationLayer, sample, scope=Inhibition.INTRA_NCG,
                     thresholds=None, active=None,
                     events: SpikeEvents | None = None) -> LayerResponse:
    """Run one sample through the layer.

    ``sample`` is a spike-time vector (``NO_SPIKE`` for silent inputs) or a
    :class:`~ncgsnn.data.SpikeVector`. ``active`` is an optional dropout mask;
    dropped neurons neither integrate nor fire. Inputs sharing a timestamp are
    integrated together before any threshold check. Once a neuron of an
    inhibition group crosses threshold, the group is resolved: every member at
    or above threshold at that instant fires, the rest are inhibited.
    """
    times = getattr(sample, "times", sample)
    weights = layer.weights
    n = weights.shape[1]
    if thresholds is None:
        thresholds = layer.thresholds.theta
    thresholds = np.ascontiguousarray(thresholds, dtype=np.float64)
    if thresholds.shape != (n,):
        raise ConsistencyError(f"expected {n} thresholds, got {thresholds.shape}")
    if np.any(thresholds <= 0):
        raise ParameterError("effective thresholds must be strictly positive")
    if events is None:
        if len(times) != weights.shape[0]:
            raise ConsistencyError(
                f"sample has {len(times)} inputs, layer expects {weights.shape[0]}"
            )
        events = spike_events(np.asarray(times, dtype=np.float64))
    active = np.ones(n, dtype=bool) if active is None else np.asarray(active, dtype=bool)

    firing_times = np.empty(n)
    fired = np.empty(n, dtype=bool)
    potentials = np.empty(n)
    inhibited = np.empty(n, dtype=bool)
    _k.integrate(weights, events.order, events.ends, events.times, thresholds, active,
                 layer.n_classes, _SCOPE_CODES[Inhibition(scope)], T_MAX,
                 firing_times, fired, potentials, inhibited, np.empty(n))
    winners = np.empty(layer.n_classes, dtype=np.int64)
    _k.group_winners(firing_times, fired, potentials, active, layer.n_classes, winners)
    return LayerResponse(firing_times, fired, potentials, winners, inhibited)


def first_neuron(response: LayerResponse, active=None) -> int:
    """Index of the first output neuron to fire.

    Ties go to a neuron that actually fired, then to the highest potential,
    then to the lowest index. Returns -1 only if every neuron is masked out.
    """
    n = response.firing_times.size
    active = np.ones(n, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    return int(_k.rank_first(response.firing_times, response.fired, response.potentials,
                             active, 0, n))


def predict(response: LayerResponse, layer: ClassificationLayer) -> int:
    return int(layer.class_map[first_neuron(response)])

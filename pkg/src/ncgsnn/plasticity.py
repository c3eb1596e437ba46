"""Supervised STDP: temporal errors for R-STDP, SSTDP and S2-STDP and the
error-modulated additive weight update shared by all three."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .engine import LayerResponse
from .exceptions import NumericError, ParameterError


class Rule(str, Enum):
    R_STDP = "r-stdp"
    SSTDP = "sstdp"
    S2_STDP = "s2-stdp"


@dataclass
class RuleConfig:
    rule: Rule = Rule.S2_STDP
    a_plus: float = 0.01
    a_minus: float = -0.01
    g: float = 0.2
    w_min: float = 0.0
    w_max: float = 1.0
    normalize: bool = False
    norm_target: float | None = None
    dropout: float = 0.0
    adaptive_lr: bool = False

    def __post_init__(self):
        self.rule = Rule(self.rule)
        if not self.a_plus > 0:
            raise ParameterError(f"a_plus must be > 0, got {self.a_plus}")
        if not self.a_minus < 0:
            raise ParameterError(f"a_minus must be < 0, got {self.a_minus}")
        if not self.g > 0:
            raise ParameterError(f"g must be > 0, got {self.g}")
        if not self.w_min < self.w_max:
            raise ParameterError(f"w_min ({self.w_min}) must be below w_max ({self.w_max})")
        if not 0 <= self.dropout < 1:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")


class NeuronError(NamedTuple):
    neuron: int
    error: float
    eligible: bool


def mean_winner_time(response: LayerResponse) -> float:
    """Mean firing time of the per-NCG winners (groups without a winner are skipped)."""
    winners = response.winners[response.winners >= 0]
    return float(response.firing_times[winners].mean())


def desired_times(mean_time: float, g: float, n_classes: int) -> tuple[float, float]:
    """``(target, non_target)`` desired firing timestamps around ``mean_time``."""
    return (mean_time - g * (n_classes - 1) / n_classes, mean_time + g / n_classes)


def compute_error_sstdp(t: float, mean_time: float, g: float, n_classes: int,
                        is_target: bool, neuron: int = -1) -> NeuronError:
    target, non_target = desired_times(mean_time, g, n_classes)
    if is_target:
        e = t - min(t, target)
    else:
        e = t - max(t, non_target)
    return NeuronError(neuron, e, e != 0)


def compute_error_s2stdp(t: float, mean_time: float, g: float, n_classes: int,
                         is_target: bool, neuron: int = -1) -> NeuronError:
    target, non_target = desired_times(mean_time, g, n_classes)
    e = t - (target if is_target else non_target)
    return NeuronError(neuron, e, True)


def compute_error_rstdp(winner_class: int, sample_label: int, neuron: int = -1) -> NeuronError:
    return NeuronError(neuron, 1.0 if winner_class == sample_label else -1.0, True)


def apply_stdp_update(weights, spike_times, t_post, error, config: RuleConfig,
                      a_plus: float | None = None, a_minus: float | None = None) -> np.ndarray:
    """Error-modulated additive STDP followed by clipping (and optional normalization).

    ``weights`` is one neuron's incoming weight row ``(n_inputs,)`` or a block
    ``(n_inputs, k)`` for ``k`` neurons, in which case ``t_post`` and ``error``
    have length ``k``. Inputs that spiked no later than the neuron are
    potentiated by ``error * a_plus``; the rest, silent inputs included, get
    ``error * a_minus``. Returns a new array.
    """
    a_plus = config.a_plus if a_plus is None else a_plus
    a_minus = config.a_minus if a_minus is None else a_minus
    weights = np.asarray(weights, dtype=np.float64)
    error = np.asarray(error, dtype=np.float64)
    if not np.isfinite(error).all():
        raise NumericError(f"non-finite STDP error {error}")
    spike_times = np.asarray(spike_times, dtype=np.float64)
    t_post = np.asarray(t_post, dtype=np.float64)
    if weights.ndim == 2:
        spike_times = spike_times[:, None]
    causal = spike_times <= t_post
    updated = weights + error * np.where(causal, a_plus, a_minus)
    np.clip(updated, config.w_min, config.w_max, out=updated)
    if config.normalize and config.norm_target is not None:
        total = updated.sum(axis=0)
        scale = np.divide(config.norm_target, total, out=np.ones_like(total), where=total > 0)
        updated *= scale
        np.clip(updated, config.w_min, config.w_max, out=updated)
    return updated


def apply_dropout(n_neurons: int, p: float, rng) -> np.ndarray:
    """Boolean mask of neurons kept for one training sample."""
    if not 0 <= p < 1:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0:
        return np.ones(n_neurons, dtype=bool)
    return rng.random(n_neurons) >= p

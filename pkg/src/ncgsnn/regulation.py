"""Two-compartment thresholds and intra-group competition regulation.

Every neuron carries a fixed test threshold ``theta`` used for decisions and a
training threshold ``theta_prime`` used only on samples of its own class. The
winner of a regulated group raises its training threshold, the other target
neurons lower theirs by the same total, and nothing goes below ``theta``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._kernels import loser_step
from .exceptions import ConsistencyError, ParameterError


class Regulation(str, Enum):
    OFF = "off"
    SINGLE = "cr1"  # one adaptive threshold, also used at inference
    TWO_COMPARTMENT = "cr2"


@dataclass
class ThresholdState:
    theta: np.ndarray
    theta_prime: np.ndarray
    eta_th: float = 0.0
    beta_th: float = 1.0
    mode: Regulation = Regulation.TWO_COMPARTMENT

    @classmethod
    def uniform(cls, n_neurons: int, theta: float, eta_th: float = 0.0,
                beta_th: float = 1.0, mode="cr2") -> "ThresholdState":
        if not theta > 0:
            raise ParameterError(f"threshold must be positive, got {theta}")
        if not 0 < beta_th <= 1:
            raise ParameterError(f"beta_th must be in (0, 1], got {beta_th}")
        if eta_th < 0:
            raise ParameterError(f"eta_th must be non-negative, got {eta_th}")
        theta = np.full(n_neurons, float(theta))
        return cls(theta, theta.copy(), float(eta_th), float(beta_th), Regulation(mode))

    def copy(self) -> "ThresholdState":
        return ThresholdState(self.theta.copy(), self.theta_prime.copy(),
                              self.eta_th, self.beta_th, self.mode)


def regulation_deltas(group, winner: int, eta_th: float) -> np.ndarray:
    """Pre-floor threshold changes for the target neurons in ``group``.

    Every loser drops by ``eta_th / M_t`` and the winner rises by the losers'
    total, so the deltas cancel over the group. The step is rounded to a few
    bits short of double precision to make that cancellation exact.
    """
    group = np.asarray(group)
    hits = np.flatnonzero(group == winner)
    if hits.size != 1:
        raise ConsistencyError(f"winner {winner} is not a member of group {group.tolist()}")
    m_t = group.size
    loser = loser_step(float(eta_th), m_t)
    deltas = np.full(m_t, -loser)
    deltas[hits[0]] = loser * (m_t - 1)
    return deltas


def regulate(state: ThresholdState, group, winner: int) -> np.ndarray:
    """Apply one regulation step to ``group`` (the target neurons of one NCG).

    Mutates ``state`` in place and returns the pre-floor deltas. With the
    single-threshold mode the deltas go straight into ``theta`` with no floor.
    """
    group = np.asarray(group)
    deltas = regulation_deltas(group, winner, state.eta_th)
    if state.mode is Regulation.TWO_COMPARTMENT:
        state.theta_prime[group] = np.maximum(
            state.theta[group], state.theta_prime[group] + deltas
        )
    elif state.mode is Regulation.SINGLE:
        # keep strictly positive so the layer stays well defined
        state.theta[group] = np.maximum(state.theta[group] + deltas, 1e-12)
        state.theta_prime[group] = state.theta[group]
    return deltas


def epoch_reset(state: ThresholdState) -> ThresholdState:
    """Epoch boundary: training thresholds back to ``theta``, anneal ``eta_th``."""
    if state.mode is not Regulation.SINGLE:
        state.theta_prime[:] = state.theta
    state.eta_th *= state.beta_th
    return state


def regulation_trigger(sample_label: int, group_class: int, winner_is_target: bool) -> bool:
    """Regulation only fires in the sample's own NCG and only for a target winner."""
    return group_class == sample_label and bool(winner_is_target)

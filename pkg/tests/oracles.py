"""Independent reference implementations used to check the compiled code paths.

``dense_simulate`` steps time on a fixed grid instead of walking events; the
reference training step is assembled from the public per-operation functions
rather than the fused kernel.
"""
from __future__ import annotations

import numpy as np

from ncgsnn.data import T_MAX
from ncgsnn.engine import integrate_sample, select_thresholds
from ncgsnn.plasticity import (apply_stdp_update, compute_error_rstdp, compute_error_s2stdp,
                               compute_error_sstdp, mean_winner_time)
from ncgsnn.regulation import Regulation, regulate, regulation_trigger

DT = 1e-3


def rank_key(j, times, fired, pot):
    return (times[j], not fired[j], -pot[j], j)


def dense_simulate(weights, steps, thresholds, n_classes, scope="intra-ncg", active=None,
                   dt=DT):
    """Time-stepped single-spike layer.

    ``steps[i]`` is the grid index of input ``i``'s spike (``-1`` for none); the
    spike time is ``steps[i] * dt``. At each grid step every arriving input is
    added, then every still-open inhibition group is checked.
    """
    n_inputs, n = weights.shape
    active = np.ones(n, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    n_groups = {"intra-ncg": n_classes, "global": 1, "none": n}[scope]
    size = n // n_groups
    group_of = np.arange(n) // size
    is_open = np.ones(n_groups, dtype=bool)
    V = np.zeros(n)
    times = np.full(n, T_MAX)
    fired = np.zeros(n, dtype=bool)
    inhibited = np.zeros(n, dtype=bool)
    pot = np.zeros(n)
    arrivals = [[] for _ in range(int(round(T_MAX / dt)) + 1)]
    for i in range(n_inputs):
        if steps[i] >= 0:
            arrivals[steps[i]].append(i)
    for s, inputs in enumerate(arrivals):
        for i in inputs:
            V += weights[i]
        crossing = active & (V >= thresholds)
        closing = is_open & np.bincount(group_of, weights=crossing, minlength=n_groups).astype(bool)
        members = closing[group_of] & active
        pot[members] = V[members]
        fired[members & crossing] = True
        times[members & crossing] = s * dt
        inhibited[members & ~crossing] = True
        is_open &= ~closing
        if not is_open.any():
            break
    left = is_open[group_of] & active
    pot[left] = V[left]
    m = n // n_classes
    winners = []
    for c in range(n_classes):
        cand = [j for j in range(c * m, (c + 1) * m) if active[j]]
        winners.append(min(cand, key=lambda j: rank_key(j, times, fired, pot)) if cand else -1)
    return times, fired, pot, inhibited, np.array(winners)


def reference_train_step(layer, times, label, rule, scope, active=None):
    """One training step from the public building blocks; mutates ``layer``.

    Returns ``(updated neurons, errors, regulated, first neuron)``.
    """
    thresholds = select_thresholds(layer, label, "train")
    resp = integrate_sample(layer, times, scope, thresholds, active)
    n = layer.n_neurons
    act = np.ones(n, dtype=bool) if active is None else active
    cands = [j for j in range(n) if act[j]]
    first = min(cands, key=lambda j: rank_key(j, resp.firing_times, resp.fired,
                                              resp.potentials)) if cands else -1
    updates = []
    if rule.rule.value == "r-stdp":
        if first >= 0:
            own = layer.class_map[first] == label and not layer.non_target[first]
            err = compute_error_rstdp(int(label) if own else -1, int(label), first)
            updates.append((first, err.error))
    else:
        mean_time = mean_winner_time(resp)
        for c, j in enumerate(resp.winners):
            if j < 0:
                continue
            is_target = c == label and not layer.non_target[j]
            fn = compute_error_s2stdp if rule.rule.value == "s2-stdp" else compute_error_sstdp
            err = fn(resp.firing_times[j], mean_time, rule.g, layer.n_classes, is_target, j)
            if err.eligible:
                updates.append((int(j), err.error))
    regulated = False
    for j, e in updates:
        layer.weights[:, j] = apply_stdp_update(layer.weights[:, j], times,
                                                resp.firing_times[j], e, rule)
        c = layer.class_map[j]
        if (layer.thresholds.mode is not Regulation.OFF
                and regulation_trigger(label, c, not layer.non_target[j])):
            regulate(layer.thresholds, layer.target_group(int(label)), j)
            regulated = True
    return [j for j, _ in updates], [e for _, e in updates], regulated, first

"""Compiled inner loops for the forward pass and the per-sample training step.

Weights are indexed ``W[input, neuron]``. Input spikes of a sample arrive as
``order`` (inputs sorted by time), ``ends`` (index of the last input of each
distinct timestamp) and ``ev_times`` (the distinct timestamps).
"""
import math

import numpy as np
from numba import njit

SCOPE_INTRA, SCOPE_GLOBAL, SCOPE_NONE = 0, 1, 2
MODE_OFF, MODE_CR1, MODE_CR2 = 0, 1, 2
RULE_RSTDP, RULE_SSTDP, RULE_S2STDP = 0, 1, 2


@njit(cache=True)
def integrate(W, order, ends, ev_times, thr, active, n_classes, scope, t_max,
              times, fired, pot, inhibited, V):
    n_neurons = W.shape[1]
    if scope == SCOPE_INTRA:
        n_groups = n_classes
    elif scope == SCOPE_GLOBAL:
        n_groups = 1
    else:
        n_groups = n_neurons
    size = n_neurons // n_groups
    closed = np.zeros(n_groups, dtype=np.bool_)
    n_open = n_groups
    for j in range(n_neurons):
        V[j] = 0.0
        fired[j] = False
        inhibited[j] = False
        times[j] = t_max
        pot[j] = 0.0

    s = 0
    for k in range(ends.shape[0]):
        while s <= ends[k]:
            i = order[s]
            for j in range(n_neurons):
                V[j] += W[i, j]
            s += 1
        for grp in range(n_groups):
            if closed[grp]:
                continue
            lo = grp * size
            hit = False
            for j in range(lo, lo + size):
                if active[j] and V[j] >= thr[j]:
                    hit = True
                    break
            if not hit:
                continue
            closed[grp] = True
            n_open -= 1
            for j in range(lo, lo + size):
                if not active[j]:
                    continue
                pot[j] = V[j]
                if V[j] >= thr[j]:
                    fired[j] = True
                    times[j] = ev_times[k]
                else:
                    inhibited[j] = True
        if n_open == 0:
            break

    for grp in range(n_groups):
        if closed[grp]:
            continue
        lo = grp * size
        for j in range(lo, lo + size):
            if active[j]:
                pot[j] = V[j]


@njit(cache=True)
def rank_first(times, fired, pot, active, lo, hi):
    """Earliest neuron in ``[lo, hi)``.

    Ties prefer fired, then higher potential, then lower index.
    """
    best = -1
    for j in range(lo, hi):
        if not active[j]:
            continue
        if best < 0:
            best = j
            continue
        if times[j] < times[best]:
            best = j
        elif times[j] == times[best]:
            if fired[j] and not fired[best]:
                best = j
            elif fired[j] == fired[best] and pot[j] > pot[best]:
                best = j
    return best


@njit(cache=True)
def group_winners(times, fired, pot, active, n_classes, winners):
    size = times.shape[0] // n_classes
    for c in range(n_classes):
        winners[c] = rank_first(times, fired, pot, active, c * size, (c + 1) * size)


STEP_BITS = 45


@njit(cache=True)
def loser_step(eta, m_t):
    """``eta / m_t`` rounded to ``STEP_BITS`` significant bits.

    Sums of up to 128 multiples of the result are exact in double precision,
    so the winner's increment cancels the losers' decrements exactly.
    """
    mant, expo = math.frexp(eta / m_t)
    return math.ldexp(np.round(mant * 2.0 ** STEP_BITS) / 2.0 ** STEP_BITS, expo)


@njit(cache=True)
def regulate(theta, theta_prime, mode, eta, non_target, label, size, winner, deltas):
    """Competition regulation on the target neurons of NCG ``label``; returns group size."""
    lo = label * size
    m_t = 0
    for j in range(lo, lo + size):
        if not non_target[j]:
            m_t += 1
    loser = loser_step(eta, m_t)
    n = 0
    for j in range(lo, lo + size):
        if non_target[j]:
            continue
        deltas[n] = loser * (m_t - 1) if j == winner else -loser
        n += 1
    n = 0
    for j in range(lo, lo + size):
        if non_target[j]:
            continue
        if mode == MODE_CR2:
            v = theta_prime[j] + deltas[n]
            theta_prime[j] = v if v > theta[j] else theta[j]
        elif mode == MODE_CR1:
            v = theta[j] + deltas[n]
            theta[j] = v if v > 1e-12 else 1e-12
            theta_prime[j] = theta[j]
        n += 1
    return m_t


@njit(cache=True)
def update_column(W, j, in_times, t_post, err, a_plus, a_minus, w_min, w_max,
                  normalize, norm_target):
    n_inputs = W.shape[0]
    for i in range(n_inputs):
        if in_times[i] <= t_post:
            w = W[i, j] + err * a_plus
        else:
            w = W[i, j] + err * a_minus
        W[i, j] = min(max(w, w_min), w_max)
    if normalize:
        total = 0.0
        for i in range(n_inputs):
            total += W[i, j]
        if total > 0:
            scale = norm_target / total
            for i in range(n_inputs):
                W[i, j] = min(max(W[i, j] * scale, w_min), w_max)


@njit(cache=True)
def train_sample(W, order, ends, ev_times, in_times, label, active,
                 theta, theta_prime, eta, mode, non_target, n_classes, scope,
                 rule, a_plus, a_minus, g, w_min, w_max, normalize, norm_target,
                 t_max, ledger, times, fired, pot, inhibited, V, thr, winners,
                 upd_idx, upd_err, deltas):
    """One online training step. Returns ``(n_updates, regulated, first_neuron)``."""
    n_neurons = W.shape[1]
    size = n_neurons // n_classes
    for j in range(n_neurons):
        thr[j] = theta[j]
    if mode == MODE_CR2:
        for j in range(label * size, (label + 1) * size):
            if not non_target[j]:
                thr[j] = theta_prime[j]

    integrate(W, order, ends, ev_times, thr, active, n_classes, scope, t_max,
              times, fired, pot, inhibited, V)
    group_winners(times, fired, pot, active, n_classes, winners)
    first = rank_first(times, fired, pot, active, 0, n_neurons)

    n_upd = 0
    if rule == RULE_RSTDP:
        if first >= 0:
            own = first // size == label and not non_target[first]
            upd_idx[0] = first
            upd_err[0] = 1.0 if own else -1.0
            n_upd = 1
    else:
        total = 0.0
        count = 0
        for c in range(n_classes):
            if winners[c] >= 0:
                total += times[winners[c]]
                count += 1
        mean_time = total / count
        target_t = mean_time - g * (n_classes - 1) / n_classes
        other_t = mean_time + g / n_classes
        for c in range(n_classes):
            j = winners[c]
            if j < 0:
                continue
            t = times[j]
            is_target = c == label and not non_target[j]
            if rule == RULE_S2STDP:
                e = t - (target_t if is_target else other_t)
                eligible = True
            else:
                if is_target:
                    e = t - min(t, target_t)
                else:
                    e = t - max(t, other_t)
                eligible = e != 0
            if eligible:
                upd_idx[n_upd] = j
                upd_err[n_upd] = e
                n_upd += 1

    regulated = False
    for u in range(n_upd):
        j = upd_idx[u]
        update_column(W, j, in_times, times[j], upd_err[u], a_plus, a_minus,
                      w_min, w_max, normalize, norm_target)
        if j // size == label:
            ledger[j, 0] += 1
            if mode != MODE_OFF and not non_target[j]:
                regulate(theta, theta_prime, mode, eta, non_target, label, size, j, deltas)
                regulated = True
        else:
            ledger[j, 1] += 1
    return n_upd, regulated, first


@njit(cache=True)
def train_epoch(W, order, order_ptr, ends, ends_ptr, ev_times, spike_times, labels, perm,
                masks, theta, theta_prime, eta, mode, non_target, n_classes, scope,
                rule, a_plus, a_minus, g, w_min, w_max, normalize, norm_target,
                t_max, ledger):
    """Run ``train_sample`` over ``perm``; returns the number of first-spike hits."""
    n_neurons = W.shape[1]
    times = np.empty(n_neurons)
    fired = np.empty(n_neurons, dtype=np.bool_)
    pot = np.empty(n_neurons)
    inhibited = np.empty(n_neurons, dtype=np.bool_)
    V = np.empty(n_neurons)
    thr = np.empty(n_neurons)
    winners = np.empty(n_classes, dtype=np.int64)
    upd_idx = np.empty(n_classes, dtype=np.int64)
    upd_err = np.empty(n_classes)
    deltas = np.empty(n_neurons)
    all_active = np.ones(n_neurons, dtype=np.bool_)
    size = n_neurons // n_classes
    hits = 0
    for step in range(perm.shape[0]):
        s = perm[step]
        active = masks[step] if masks.shape[0] > 0 else all_active
        label = labels[s]
        _, _, first = train_sample(
            W, order[order_ptr[s]:order_ptr[s + 1]], ends[ends_ptr[s]:ends_ptr[s + 1]],
            ev_times[ends_ptr[s]:ends_ptr[s + 1]], spike_times[s], label, active,
            theta, theta_prime, eta, mode, non_target, n_classes, scope,
            rule, a_plus, a_minus, g, w_min, w_max, normalize, norm_target,
            t_max, ledger, times, fired, pot, inhibited, V, thr, winners,
            upd_idx, upd_err, deltas)
        if first >= 0 and first // size == label:
            hits += 1
    return hits


@njit(cache=True)
def predict_all(W, order, order_ptr, ends, ends_ptr, ev_times, thr, n_classes, t_max, out):
    """First-spike class for every sample under fixed thresholds."""
    n_neurons = W.shape[1]
    times = np.empty(n_neurons)
    fired = np.empty(n_neurons, dtype=np.bool_)
    pot = np.empty(n_neurons)
    inhibited = np.empty(n_neurons, dtype=np.bool_)
    V = np.empty(n_neurons)
    active = np.ones(n_neurons, dtype=np.bool_)
    size = n_neurons // n_classes
    for s in range(out.shape[0]):
        # a single global group resolves at the first crossing, which is all a prediction needs
        integrate(W, order[order_ptr[s]:order_ptr[s + 1]], ends[ends_ptr[s]:ends_ptr[s + 1]],
                  ev_times[ends_ptr[s]:ends_ptr[s + 1]], thr, active, n_classes,
                  SCOPE_GLOBAL, t_max, times, fired, pot, inhibited, V)
        out[s] = rank_first(times, fired, pot, active, 0, n_neurons) // size

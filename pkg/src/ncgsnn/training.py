"""Online training of an NCG classification layer, early stopping, K-fold
evaluation and exhaustive hyperparameter search."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import ParameterGrid

from . import _kernels as _k
from .data import T_MAX, SpikeDataset, kfold_partition, split_validation
from .engine import (ClassificationLayer, Inhibition, LayerResponse, SpikeEvents,
                     select_thresholds, spike_events)
from .exceptions import ParameterError
from .plasticity import Rule, RuleConfig, apply_dropout
from .regulation import Regulation, ThresholdState, epoch_reset

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Every knob of one training run, flat so it doubles as a parameter grid space."""

    rule: str = "s2-stdp"
    neurons_per_class: int = 5
    labeling: bool = True
    regulation: str = "cr2"
    inhibition: str = "auto"
    theta: float | None = None
    threshold_scale: float = 0.8
    eta_th: float = 2.0
    beta_th: float = 0.9
    a_plus: float = 0.01
    a_minus: float = -0.01
    g: float = 0.2
    w_min: float = 0.0
    w_max: float = 1.0
    normalize: bool = True
    dropout: float = 0.0
    adaptive_lr: bool = False
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        self.rule = Rule(self.rule).value
        self.regulation = Regulation(self.regulation).value
        if self.inhibition != "auto":
            self.inhibition = Inhibition(self.inhibition).value
        if self.neurons_per_class < 1:
            raise ParameterError("neurons_per_class must be >= 1")
        if self.labeling and self.neurons_per_class < 2:
            raise ParameterError("labeling requires neurons_per_class >= 2")
        if self.patience < 1:
            raise ParameterError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ParameterError("max_epochs must be >= 1")
        if self.theta is not None and not self.theta > 0:
            raise ParameterError("theta must be positive")
        self.rule_config()

    def rule_config(self, norm_target: float | None = None) -> RuleConfig:
        return RuleConfig(self.rule, self.a_plus, self.a_minus, self.g, self.w_min, self.w_max,
                          self.normalize, norm_target, self.dropout, self.adaptive_lr)

    @property
    def scope(self) -> Inhibition:
        if self.inhibition == "auto":
            return Inhibition.GLOBAL if self.rule == Rule.R_STDP.value else Inhibition.INTRA_NCG
        return Inhibition(self.inhibition)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class UpdateLedger:
    """Weight-update counts per epoch and neuron, split into target and non-target updates."""

    def __init__(self, n_neurons: int):
        self.n_neurons = n_neurons
        self._epochs: list[np.ndarray] = []

    def new_epoch(self) -> np.ndarray:
        counts = np.zeros((self.n_neurons, 2), dtype=np.int64)
        self._epochs.append(counts)
        return counts

    @property
    def counts(self) -> np.ndarray:
        """Array of shape ``(epochs, N, 2)``; last axis is (target, non-target)."""
        if not self._epochs:
            return np.zeros((0, self.n_neurons, 2), dtype=np.int64)
        return np.stack(self._epochs)

    @property
    def target_updates(self) -> np.ndarray:
        return self.counts[..., 0]

    @property
    def non_target_updates(self) -> np.ndarray:
        return self.counts[..., 1]


@dataclass
class SampleOutcome:
    response: LayerResponse
    updated: list[int]
    errors: list[float]
    regulated: bool
    deltas: np.ndarray | None = None


@dataclass
class RunResult:
    best_epoch: int
    val_history: list[float]
    layer: ClassificationLayer
    ledger: UpdateLedger
    theta_prime_history: np.ndarray
    train_history: list[float] = field(default_factory=list)
    test_accuracy: float | None = None

    @property
    def n_epochs(self) -> int:
        return len(self.val_history)


def default_threshold(times: np.ndarray, config: TrainConfig) -> float:
    """Starting threshold: a fraction of the expected input weight sum.

    The expected sum counts the inputs that actually spike, each weighted by
    the mean initial weight.
    """
    spiking = np.isfinite(times).sum(axis=1).mean()
    expected = spiking * (config.w_min + config.w_max) / 2
    return max(float(config.threshold_scale * expected), 1e-6)


def build_layer(n_inputs: int, n_classes: int, config: TrainConfig, theta: float,
                rng) -> ClassificationLayer:
    n = n_classes * config.neurons_per_class
    state = ThresholdState.uniform(n, theta, config.eta_th, config.beta_th, config.regulation)
    if state.mode is Regulation.OFF:
        state.eta_th = 0.0
    return ClassificationLayer.initialize(
        n_inputs, n_classes, config.neurons_per_class, state, config.labeling,
        config.w_min, config.w_max, rng,
    )


_RULE_CODES = {Rule.R_STDP: _k.RULE_RSTDP, Rule.SSTDP: _k.RULE_SSTDP, Rule.S2_STDP: _k.RULE_S2STDP}
_MODE_CODES = {Regulation.OFF: _k.MODE_OFF, Regulation.SINGLE: _k.MODE_CR1,
               Regulation.TWO_COMPARTMENT: _k.MODE_CR2}
_SCOPE_CODES = {Inhibition.INTRA_NCG: _k.SCOPE_INTRA, Inhibition.GLOBAL: _k.SCOPE_GLOBAL,
                Inhibition.NONE: _k.SCOPE_NONE}


@dataclass(frozen=True)
class EventTable:
    """Time-sorted input events of a whole dataset in CSR layout (see :class:`SpikeEvents`)."""

    order: np.ndarray
    order_ptr: np.ndarray
    ends: np.ndarray
    ends_ptr: np.ndarray
    times: np.ndarray
    spike_times: np.ndarray

    def __len__(self):
        return self.order_ptr.size - 1

    def __getitem__(self, i) -> SpikeEvents:
        a, b = self.order_ptr[i], self.order_ptr[i + 1]
        c, d = self.ends_ptr[i], self.ends_ptr[i + 1]
        return SpikeEvents(self.order[a:b], self.ends[c:d], self.times[c:d])


def compile_events(dataset: SpikeDataset) -> EventTable:
    times = np.ascontiguousarray(dataset.times)
    n = times.shape[0]
    idx = np.argsort(times, axis=1, kind="stable")
    sorted_t = np.take_along_axis(times, idx, axis=1)
    finite = np.isfinite(sorted_t)
    nxt = np.full_like(sorted_t, np.inf)
    nxt[:, :-1] = sorted_t[:, 1:]
    is_end = finite & (sorted_t != nxt)
    rows, cols = np.nonzero(is_end)
    order_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(finite.sum(axis=1), out=order_ptr[1:])
    ends_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=ends_ptr[1:])
    return EventTable(idx[finite].astype(np.int64), order_ptr, cols.astype(np.int64), ends_ptr,
                      sorted_t[is_end], times)


def _rule_args(rule: RuleConfig, a_plus: float, a_minus: float):
    return (_RULE_CODES[rule.rule], a_plus, a_minus, rule.g, rule.w_min, rule.w_max,
            bool(rule.normalize and rule.norm_target is not None),
            float(rule.norm_target or 0.0))


def process_sample(layer: ClassificationLayer, times: np.ndarray, label: int, rule: RuleConfig,
                   scope: Inhibition, rng=None, ledger_epoch: np.ndarray | None = None,
                   events=None, lr_scale: tuple[float, float] = (1.0, 1.0)) -> SampleOutcome:
    """Train ``layer`` in place on a single sample.

    Thresholds are selected for training, an optional dropout mask is drawn,
    the sample is integrated, and winners are updated: one per NCG for the
    temporal rules, the single layer-wide first spiker for R-STDP. A target
    winner of the sample's own NCG that got an update then triggers
    competition regulation on that NCG.
    """
    n = layer.n_neurons
    times = np.asarray(times, dtype=np.float64)
    active = apply_dropout(n, rule.dropout, rng) if rule.dropout > 0 else np.ones(n, dtype=bool)
    if events is None:
        events = spike_events(times)
    if ledger_epoch is None:
        ledger_epoch = np.zeros((n, 2), dtype=np.int64)
    a_plus, a_minus = rule.a_plus, rule.a_minus
    if rule.rule is Rule.R_STDP and rule.adaptive_lr:
        a_plus, a_minus = a_plus * lr_scale[0], a_minus * lr_scale[1]
    state = layer.thresholds
    out = dict(times=np.empty(n), fired=np.empty(n, dtype=bool), pot=np.empty(n),
               inhibited=np.empty(n, dtype=bool))
    winners = np.empty(layer.n_classes, dtype=np.int64)
    upd_idx = np.empty(layer.n_classes, dtype=np.int64)
    upd_err = np.empty(layer.n_classes)
    deltas = np.empty(n)
    n_upd, regulated, _ = _k.train_sample(
        layer.weights, events.order, events.ends, events.times, times, int(label), active,
        state.theta, state.theta_prime, state.eta_th, _MODE_CODES[state.mode], layer.non_target,
        layer.n_classes, _SCOPE_CODES[scope], *_rule_args(rule, a_plus, a_minus), T_MAX,
        ledger_epoch, out["times"], out["fired"], out["pot"], out["inhibited"], np.empty(n),
        np.empty(n), winners, upd_idx, upd_err, deltas,
    )
    response = LayerResponse(out["times"], out["fired"], out["pot"], winners, out["inhibited"])
    m_t = len(layer.target_group(int(label)))
    return SampleOutcome(response, upd_idx[:n_upd].tolist(), upd_err[:n_upd].tolist(),
                         bool(regulated), deltas[:m_t].copy() if regulated else None)


def predict_dataset(layer: ClassificationLayer, dataset: SpikeDataset,
                    events: EventTable | None = None) -> np.ndarray:
    """First-spike predictions with test thresholds, no dropout and no state change."""
    if events is None:
        events = compile_events(dataset)
    out = np.empty(len(dataset), dtype=np.int64)
    thresholds = select_thresholds(layer, phase="test")
    _k.predict_all(layer.weights, events.order, events.order_ptr, events.ends, events.ends_ptr,
                   events.times, thresholds, layer.n_classes, T_MAX, out)
    return out


def evaluate(layer: ClassificationLayer, dataset: SpikeDataset, events=None) -> float:
    if len(dataset) == 0:
        return float("nan")
    return float(np.mean(predict_dataset(layer, dataset, events) == dataset.labels))


def fit(train: SpikeDataset, val: SpikeDataset | None, config: TrainConfig,
        layer: ClassificationLayer | None = None, train_events=None, val_events=None) -> RunResult:
    """Train until validation accuracy stalls for ``patience`` epochs.

    Without a validation set every epoch runs and the last one is kept. The
    returned layer is a snapshot taken at the best validation epoch (earliest
    on ties).
    """
    if len(train) == 0:
        raise ParameterError("empty training set")
    if val is not None and len(val) == 0:
        raise ParameterError("empty validation set")
    seeds = np.random.SeedSequence(config.seed)
    init_seed, shuffle_seed, dropout_seed = seeds.spawn(3)
    if layer is None:
        theta = config.theta if config.theta is not None else default_threshold(train.times, config)
        layer = build_layer(train.n_inputs, train.n_classes, config, theta,
                            np.random.default_rng(init_seed))
    norm_target = float(layer.weights.sum(axis=0).mean()) if config.normalize else None
    rule = config.rule_config(norm_target)
    scope = config.scope
    if train_events is None:
        train_events = compile_events(train)
    if val is not None and val_events is None:
        val_events = compile_events(val)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(dropout_seed)

    ledger = UpdateLedger(layer.n_neurons)
    val_history, train_history, theta_history = [], [], []
    best_acc, best_epoch, best_layer = -np.inf, -1, None
    lr_scale = (1.0, 1.0)
    state = layer.thresholds
    rule_args = _rule_args(rule, rule.a_plus, rule.a_minus)
    labels = np.ascontiguousarray(train.labels)
    n = layer.n_neurons
    for epoch in range(config.max_epochs):
        counts = ledger.new_epoch()
        perm = shuffle_rng.permutation(len(train))
        if rule.dropout > 0:
            masks = dropout_rng.random((len(train), n)) >= rule.dropout
        else:
            masks = np.ones((0, n), dtype=bool)
        if rule.rule is Rule.R_STDP and rule.adaptive_lr:
            rule_args = _rule_args(rule, rule.a_plus * lr_scale[0], rule.a_minus * lr_scale[1])
        hits = _k.train_epoch(
            layer.weights, train_events.order, train_events.order_ptr, train_events.ends,
            train_events.ends_ptr, train_events.times, train_events.spike_times, labels, perm,
            masks, state.theta, state.theta_prime, state.eta_th, _MODE_CODES[state.mode],
            layer.non_target, layer.n_classes, _SCOPE_CODES[scope], *rule_args, T_MAX, counts,
        )
        train_acc = hits / len(train)
        train_history.append(train_acc)
        lr_scale = (1.0 - train_acc, train_acc)
        theta_history.append(layer.thresholds.theta_prime.copy())
        epoch_reset(layer.thresholds)

        acc = evaluate(layer, val, val_events) if val is not None else train_acc
        val_history.append(acc)
        logger.info("epoch %d: train %.4f val %.4f", epoch, train_acc, acc)
        if acc > best_acc or val is None:
            best_acc, best_epoch, best_layer = acc, epoch, layer.copy()
        elif epoch - best_epoch >= config.patience:
            break
    return RunResult(best_epoch, val_history, best_layer, ledger,
                     np.asarray(theta_history), train_history)


@dataclass
class KFoldResult:
    runs: list[RunResult]
    test_accuracies: np.ndarray
    seeds: list[int]

    @property
    def mean(self) -> float:
        return float(self.test_accuracies.mean())

    @property
    def std(self) -> float:
        return float(self.test_accuracies.std())


def _run_fold(train, test, config, train_idx, val_idx, seed):
    fold_config = config.replace(seed=seed)
    result = fit(train.subset(train_idx), train.subset(val_idx), fold_config)
    result.test_accuracy = evaluate(result.layer, test)
    return result


def kfold_evaluate(train: SpikeDataset, test: SpikeDataset, config: TrainConfig,
                   n_folds: int = 10, n_jobs: int = 1) -> KFoldResult:
    """Train one model per held-out fold (each with its own seed) and score it on ``test``."""
    if n_folds < 2:
        raise ParameterError("K-fold evaluation needs at least 2 folds")
    plan = kfold_partition(train, n_folds, config.seed)
    seeds = [config.seed + k for k in range(n_folds)]
    runs = Parallel(n_jobs=n_jobs)(
        delayed(_run_fold)(train, test, config, *plan.split(k), seeds[k]) for k in range(n_folds)
    )
    return KFoldResult(list(runs), np.array([r.test_accuracy for r in runs]), seeds)


@dataclass
class GridResult:
    best: TrainConfig
    rows: list[tuple[dict, float]]

    def ranked(self) -> list[tuple[dict, float]]:
        order = sorted(range(len(self.rows)), key=lambda i: (-self.rows[i][1], i))
        return [self.rows[i] for i in order]


def _grid_cell(train, val, config, params):
    return fit(train, val, config.replace(**params)).val_history


def gridsearch(space: dict, train: SpikeDataset, config: TrainConfig,
               validation_fraction: float = 0.1, n_jobs: int = 1,
               val: SpikeDataset | None = None) -> GridResult:
    """Exhaustive search over ``space``; the first best cell (enumeration order) wins.

    Cells are scored by their best validation accuracy on ``val``, or on a
    stratified ``validation_fraction`` of ``train`` when no ``val`` is given.
    """
    if not space or any(len(v) == 0 for v in space.values()):
        raise ParameterError("empty hyperparameter grid")
    known = set(TrainConfig.__dataclass_fields__)
    unknown = set(space) - known
    if unknown:
        raise ParameterError(f"unknown hyperparameters: {sorted(unknown)}")
    if val is None:
        train, val = split_validation(train, validation_fraction, config.seed)
    cells = list(ParameterGrid(space))
    histories = Parallel(n_jobs=n_jobs)(
        delayed(_grid_cell)(train, val, config, p) for p in cells
    )
    rows = [(p, float(max(h))) for p, h in zip(cells, histories)]
    best_i = max(range(len(rows)), key=lambda i: (rows[i][1], -i))
    return GridResult(config.replace(**cells[best_i]), rows)

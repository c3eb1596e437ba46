"""scikit-learn compatible front end."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import T_MAX, SpikeDataset, stratified_validation_indices
from .engine import integrate_sample, select_thresholds
from .exceptions import ConsistencyError, RangeError
from .training import TrainConfig, compile_events, fit, predict_dataset


def _check_spike_times(X):
    present = X[np.isfinite(X)]
    if np.isnan(X).any() or np.isneginf(X).any():
        raise RangeError("spike times must be in [0, 1] or +inf (no spike)")
    if present.size and (present.min() < 0 or present.max() > T_MAX):
        raise RangeError("spike times must be in [0, 1] or +inf (no spike)")
    return X


class NCGClassifier(ClassifierMixin, BaseEstimator):
    """Single-spike classification layer with Neuronal Competition Groups.

    Inputs are spike-time matrices: one row per sample, entries in ``[0, 1]``
    and ``np.inf`` for inputs that never spike (see :class:`LatencyEncoder`).
    Every class gets a group of ``neurons_per_class`` neurons competing
    through lateral inhibition; the first output spike decides the class.

    Parameters
    ----------
    rule : {"s2-stdp", "sstdp", "r-stdp"}, default="s2-stdp"
        Supervised STDP rule.
    neurons_per_class : int, default=5
    labeling : bool, default=True
        Mark one neuron per group as non-target.
    regulation : {"cr2", "cr1", "off"}, default="cr2"
        Competition regulation: two-compartment thresholds, a single adaptive
        threshold, or none.
    inhibition : {"auto", "intra-ncg", "global", "none"}, default="auto"
        ``"auto"`` is global for R-STDP and intra-NCG otherwise.
    theta : float or None, default=None
        Test threshold. ``None`` derives it from the training data with
        ``threshold_scale``.
    threshold_scale : float, default=0.8
    eta_th, beta_th : float
        Threshold learning rate and its per-epoch annealing factor.
    a_plus, a_minus : float
        STDP learning rates (``a_plus > 0 > a_minus``).
    g : float, default=0.2
        Desired gap between target and non-target firing times.
    w_min, w_max : float
        Weight clipping range, also the uniform initialization range.
    normalize : bool, default=True
        Keep each neuron's weight sum at its initial mean.
    dropout : float, default=0.0
        Probability of silencing an output neuron for a training sample.
    adaptive_lr : bool, default=False
        R-STDP only: scale rewards by the miss rate and punishments by the hit
        rate of the previous epoch.
    max_epochs, patience : int
        Epoch budget and early-stopping patience.
    validation_fraction : float, default=0.1
        Stratified share of the training data used for early stopping when no
        explicit validation set is passed to :meth:`fit`.
    early_stopping : bool, default=True
    random_state : int, default=0

    Attributes
    ----------
    classes_ : ndarray of shape (n_classes,)
    layer_ : ClassificationLayer
        Snapshot at the best validation epoch.
    result_ : RunResult
        Histories, update ledger and training-threshold trajectories.
    n_features_in_ : int
    """

    def __init__(self, rule="s2-stdp", neurons_per_class=5, labeling=True, regulation="cr2",
                 inhibition="auto", theta=None, threshold_scale=0.8, eta_th=2.0, beta_th=0.9,
                 a_plus=0.01, a_minus=-0.01, g=0.2, w_min=0.0, w_max=1.0, normalize=True,
                 dropout=0.0, adaptive_lr=False, max_epochs=100, patience=10,
                 validation_fraction=0.1, early_stopping=True, random_state=0):
        self.rule = rule
        self.neurons_per_class = neurons_per_class
        self.labeling = labeling
        self.regulation = regulation
        self.inhibition = inhibition
        self.theta = theta
        self.threshold_scale = threshold_scale
        self.eta_th = eta_th
        self.beta_th = beta_th
        self.a_plus = a_plus
        self.a_minus = a_minus
        self.g = g
        self.w_min = w_min
        self.w_max = w_max
        self.normalize = normalize
        self.dropout = dropout
        self.adaptive_lr = adaptive_lr
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.early_stopping = early_stopping
        self.random_state = random_state

    def train_config(self) -> TrainConfig:
        params = self.get_params()
        for key in ("validation_fraction", "early_stopping", "random_state"):
            params.pop(key)
        return TrainConfig(seed=int(self.random_state), **params)

    def _validate(self, X):
        X = check_array(X, dtype=np.float64, ensure_all_finite=False)
        if X.shape[1] != self.n_features_in_:
            raise ConsistencyError(
                f"X has {X.shape[1]} features, the model was fitted with {self.n_features_in_}"
            )
        return _check_spike_times(X)

    def fit(self, X, y, X_val=None, y_val=None):
        """Train on spike times ``X`` with labels ``y``.

        A validation set drives early stopping: ``(X_val, y_val)`` when given,
        otherwise a stratified ``validation_fraction`` of ``X``.
        """
        config = self.train_config()
        X, y = check_X_y(X, y, dtype=np.float64, ensure_all_finite=False)
        _check_spike_times(X)
        check_classification_targets(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        n_classes = self.classes_.size
        self.n_features_in_ = X.shape[1]

        if X_val is not None:
            X_val = self._validate(X_val)
            val_idx = np.searchsorted(self.classes_, np.asarray(y_val))
            train = SpikeDataset(X, y_idx, n_classes)
            val = SpikeDataset(X_val, val_idx, n_classes)
        elif self.early_stopping:
            tr, va = stratified_validation_indices(y_idx, self.validation_fraction, config.seed)
            train = SpikeDataset(X[tr], y_idx[tr], n_classes)
            val = SpikeDataset(X[va], y_idx[va], n_classes)
        else:
            train, val = SpikeDataset(X, y_idx, n_classes), None

        self.result_ = fit(train, val, config)
        self.layer_ = self.result_.layer
        self.best_epoch_ = self.result_.best_epoch
        self.n_epochs_ = self.result_.n_epochs
        return self

    def predict(self, X):
        check_is_fitted(self, "layer_")
        X = self._validate(X)
        dataset = SpikeDataset(X, np.zeros(X.shape[0], dtype=np.int64), len(self.classes_))
        return self.classes_[predict_dataset(self.layer_, dataset, compile_events(dataset))]

    def firing_times(self, X):
        """Output firing times (``(n_samples, N)``) under test thresholds, intra-NCG inhibition."""
        check_is_fitted(self, "layer_")
        X = self._validate(X)
        thresholds = select_thresholds(self.layer_, phase="test")
        return np.stack([integrate_sample(self.layer_, x, thresholds=thresholds).firing_times
                         for x in X])

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.allow_nan = False
        return tags

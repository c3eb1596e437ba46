"""Datasets, first-spike latency encoding and stratified partitioning.

Spike timestamps live in the normalized window ``[0, T_MAX]``. An input that
never spikes is stored as ``NO_SPIKE`` (``+inf``), which keeps comparisons such
as ``t_i <= t_j`` well defined without masks.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConsistencyError, FormatError, ParameterError, RangeError

T_MAX = 1.0
NO_SPIKE = np.inf

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

NCGF_MAGIC = b"NCGF"
NCGF_VERSION = 1
_NCGF_HEADER = struct.Struct("<4sIBQII")


class SpikeVector(NamedTuple):
    times: np.ndarray
    label: int


@dataclass(frozen=True)
class SpikeDataset:
    """Immutable container of spike-time vectors and their labels.

    ``times`` has shape ``(n_samples, n_inputs)``; absent spikes are ``NO_SPIKE``.
    """

    times: np.ndarray
    labels: np.ndarray
    n_classes: int
    no_spike_flag: bool = field(default=False, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if times.ndim != 2:
            raise ConsistencyError(f"times must be 2-D, got shape {times.shape}")
        if labels.shape != (times.shape[0],):
            raise ConsistencyError(
                f"{labels.shape[0]} labels for {times.shape[0]} samples"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise RangeError(f"labels must lie in [0, {self.n_classes})")
        present = times[np.isfinite(times)]
        if present.size and (present.min() < 0.0 or present.max() > T_MAX):
            raise RangeError(f"spike times must lie in [0, {T_MAX}]")
        if np.isnan(times).any() or np.isneginf(times).any():
            raise RangeError("spike times must be finite or NO_SPIKE")
        times.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.times.shape[0]

    def __getitem__(self, i) -> SpikeVector:
        return SpikeVector(self.times[i], int(self.labels[i]))

    @property
    def n_inputs(self) -> int:
        return self.times.shape[1]

    def subset(self, indices) -> "SpikeDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return SpikeDataset(
            self.times[indices], self.labels[indices], self.n_classes, self.no_spike_flag
        )


# ---------------------------------------------------------------- IDX files

def _open_maybe_gzip(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    with _open_maybe_gzip(path) as f:
        raw = f.read()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    found, *dims = struct.unpack(">" + "I" * (1 + ndim), raw[:header])
    if found != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    expected = int(np.prod(dims))
    if len(raw) - header != expected:
        raise FormatError(
            f"{path}: payload has {len(raw) - header} bytes, header declares {expected}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read an IDX image/label file pair (optionally gzipped).

    Returns ``(X, y)`` with ``X`` of shape ``(n, rows * cols)`` holding the raw
    byte intensities and ``y`` the integer labels, both in file order.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    return images.reshape(images.shape[0], -1), labels.astype(np.int64)


def load_mnist(directory, split: str = "train") -> tuple[np.ndarray, np.ndarray]:
    """Load the standard MNIST file pair for ``split`` ('train' or 't10k')."""
    directory = Path(directory)
    prefix = {"train": "train", "test": "t10k", "t10k": "t10k"}[split]
    paths = []
    for kind in ("images-idx3-ubyte", "labels-idx1-ubyte"):
        plain = directory / f"{prefix}-{kind}"
        gz = plain.with_name(plain.name + ".gz")
        if plain.exists():
            paths.append(plain)
        elif gz.exists():
            paths.append(gz)
        else:
            raise FileNotFoundError(f"missing {plain} (or .gz)")
    return load_idx(*paths)


# ---------------------------------------------------------------- encoding

def encode_latency(values, v_max: float) -> np.ndarray:
    """First-spike latency code: ``t = 1 - v / v_max``; zero intensity never spikes."""
    if not v_max > 0:
        raise ParameterError(f"v_max must be positive, got {v_max}")
    values = np.asarray(values, dtype=np.float64)
    if values.size and (values.min() < 0 or values.max() > v_max):
        raise RangeError(f"values must lie in [0, {v_max}]")
    times = T_MAX * (1.0 - values / v_max)
    times[values == 0] = NO_SPIKE
    return times


def encode_dataset(X, y, v_max: float, n_classes: int | None = None) -> SpikeDataset:
    y = np.asarray(y, dtype=np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1 if y.size else 0
    return SpikeDataset(encode_latency(X, v_max), y, n_classes, no_spike_flag=True)


class LatencyEncoder(TransformerMixin, BaseEstimator):
    """Transform non-negative intensities into first-spike latencies.

    Parameters
    ----------
    v_max : float or "auto", default=255.0
        Intensity mapped to ``t = 0``. With ``"auto"`` the largest value seen
        during ``fit`` is used.
    """

    def __init__(self, v_max=255.0):
        self.v_max = v_max

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        if self.v_max == "auto":
            self.v_max_ = float(X.max()) if X.max() > 0 else 1.0
        else:
            self.v_max_ = float(self.v_max)
        return self

    def transform(self, X):
        check_is_fitted(self, "v_max_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ConsistencyError(
                f"X has {X.shape[1]} features, encoder was fitted with {self.n_features_in_}"
            )
        return encode_latency(X, self.v_max_)


# ---------------------------------------------------------------- NCGF files

def write_features(dataset: SpikeDataset, path, no_spike_flag: bool | None = None) -> None:
    """Write ``dataset`` in the little-endian NCGF container."""
    times = dataset.times
    absent = ~np.isfinite(times)
    if no_spike_flag is None:
        no_spike_flag = bool(dataset.no_spike_flag or absent.any())
    if absent.any() and not no_spike_flag:
        raise ConsistencyError("dataset has absent spikes but no_spike_flag is off")
    values = np.where(absent, T_MAX, times).astype("<f4")
    header = _NCGF_HEADER.pack(
        NCGF_MAGIC, NCGF_VERSION, int(no_spike_flag),
        len(dataset), dataset.n_inputs, dataset.n_classes,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(dataset.labels.astype("<u4").tobytes())
        f.write(values.tobytes())


def load_features(path) -> SpikeDataset:
    """Read an NCGF feature file produced by an external extractor."""
    raw = Path(path).read_bytes()
    if len(raw) < _NCGF_HEADER.size:
        raise FormatError(f"{path}: truncated NCGF header")
    magic, version, flag, n, d, c = _NCGF_HEADER.unpack_from(raw)
    if magic != NCGF_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != NCGF_VERSION:
        raise FormatError(f"{path}: unsupported NCGF version {version}")
    expected = _NCGF_HEADER.size + 4 * n + 4 * n * d
    if len(raw) != expected:
        raise ConsistencyError(
            f"{path}: {len(raw)} bytes on disk, header implies {expected}"
        )
    offset = _NCGF_HEADER.size
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=offset).astype(np.int64)
    values = np.frombuffer(raw, dtype="<f4", count=n * d, offset=offset + 4 * n)
    times = values.astype(np.float64).reshape(n, d)
    in_range = np.isfinite(values).all() and values.min() >= 0 and values.max() <= T_MAX
    if values.size and not in_range:
        raise FormatError(f"{path}: feature values outside [0, 1]")
    if flag:
        times[times == T_MAX] = NO_SPIKE
    return SpikeDataset(times, labels, c, no_spike_flag=bool(flag))


# ---------------------------------------------------------------- partitioning

@dataclass(frozen=True)
class FoldPlan:
    n_folds: int
    assignments: np.ndarray
    seed: int

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(train_idx, val_idx)`` with fold ``fold`` held out."""
        if not 0 <= fold < self.n_folds:
            raise ParameterError(f"fold {fold} out of range [0, {self.n_folds})")
        held = self.assignments == fold
        return np.flatnonzero(~held), np.flatnonzero(held)


def _labels_of(data) -> np.ndarray:
    return np.asarray(data.labels if isinstance(data, SpikeDataset) else data)


def stratified_validation_indices(labels, fraction: float, seed: int):
    if not 0 < fraction < 1:
        raise ParameterError(f"validation fraction must be in (0, 1), got {fraction}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    val = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        k = int(np.floor(fraction * members.size + 0.5))
        val.append(rng.permutation(members)[:k])
    val = np.sort(np.concatenate(val)) if val else np.empty(0, dtype=np.int64)
    train = np.setdiff1d(np.arange(labels.size), val, assume_unique=True)
    return train, val


def split_validation(dataset: SpikeDataset, fraction: float, seed: int):
    """Carve a stratified validation set, ``round(fraction * n_c)`` per class."""
    train, val = stratified_validation_indices(dataset.labels, fraction, seed)
    return dataset.subset(train), dataset.subset(val)


def kfold_partition(data, n_folds: int, seed: int) -> FoldPlan:
    """Stratified fold assignment.

    Each class is dealt round-robin over the folds after a seeded shuffle; the
    dealing position carries over between classes so that fold sizes also stay
    within one sample of each other overall.
    """
    labels = _labels_of(data)
    if n_folds < 2:
        raise ParameterError(f"need at least 2 folds, got {n_folds}")
    classes, counts = np.unique(labels, return_counts=True)
    if counts.size and counts.min() < n_folds:
        raise ParameterError(
            f"class {classes[counts.argmin()]} has {counts.min()} samples, "
            f"fewer than {n_folds} folds"
        )
    rng = np.random.default_rng(seed)
    assignments = np.empty(labels.size, dtype=np.int64)
    start = 0
    for c in classes:
        members = rng.permutation(np.flatnonzero(labels == c))
        assignments[members] = (start + np.arange(members.size)) % n_folds
        start = (start + members.size) % n_folds
    return FoldPlan(n_folds, assignments, seed)


def make_prototype_mixture(n_per_class: int = 200, n_classes: int = 3,
                           prototypes_per_class: int = 3, n_inputs: int = 64,
                           active_fraction: float = 0.25, shared_fraction: float = 0.0,
                           noise: float = 0.05, seed: int = 0) -> tuple[SpikeDataset, np.ndarray]:
    """Latency-encoded classes that are each a mixture of Gaussian clusters.

    Every prototype lights ``active_fraction`` of the inputs at intensities
    drawn from ``[0.5, 1]``. A share ``shared_fraction`` of those inputs is a
    core common to all prototypes of the class; the rest is prototype
    specific. Cores of different classes never overlap, and prototype-specific
    inputs are drawn from outside every core. Samples add Gaussian noise of
    width ``noise`` on the lit inputs and are clipped into ``[0, 1]``. Returns
    the dataset and the prototype index of each sample.
    """
    rng = np.random.default_rng(seed)
    k = max(1, int(round(active_fraction * n_inputs)))
    k_core = int(round(shared_fraction * k))
    if n_classes * k_core + (k - k_core) > n_inputs:
        raise ParameterError("class cores do not fit into n_inputs; lower shared_fraction")
    protos = np.zeros((n_classes * prototypes_per_class, n_inputs))
    shuffled = rng.permutation(n_inputs)
    rest = np.sort(shuffled[n_classes * k_core:])
    for c in range(n_classes):
        core = shuffled[c * k_core:(c + 1) * k_core]
        core_values = rng.uniform(0.5, 1.0, size=k_core)
        for q in range(prototypes_per_class):
            p = c * prototypes_per_class + q
            own = rng.choice(rest, size=k - k_core, replace=False)
            protos[p, core] = core_values
            protos[p, own] = rng.uniform(0.5, 1.0, size=k - k_core)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    which = labels * prototypes_per_class + rng.integers(0, prototypes_per_class, labels.size)
    values = np.clip(protos[which] + rng.normal(0.0, noise, (labels.size, n_inputs)), 0.0, 1.0)
    values[protos[which] == 0] = 0.0
    order = rng.permutation(labels.size)
    return encode_dataset(values[order], labels[order], 1.0, n_classes), which[order]

"""Glue between experiment configs, datasets and the training harness."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DataConfig, ExperimentConfig
from .data import SpikeDataset, encode_dataset, load_features, load_mnist, split_validation
from .exceptions import ConsistencyError, ParameterError
from .training import KFoldResult, RunResult, evaluate, fit, gridsearch, kfold_evaluate


@dataclass
class ExperimentData:
    train: SpikeDataset
    val: SpikeDataset | None
    test: SpikeDataset | None


def _head(dataset: SpikeDataset, start: int, size: int | None) -> SpikeDataset:
    stop = len(dataset) if size is None else start + size
    if stop > len(dataset):
        raise ParameterError(f"requested samples [{start}, {stop}) but only {len(dataset)} exist")
    return dataset.subset(np.arange(start, stop))


def load_sources(cfg: DataConfig) -> tuple[SpikeDataset, SpikeDataset | None]:
    """Full training pool and optional test set, encoded to spike times."""
    if cfg.mnist_dir is not None:
        X, y = load_mnist(cfg.mnist_dir, "train")
        Xt, yt = load_mnist(cfg.mnist_dir, "test")
        return (encode_dataset(X, y, cfg.v_max, 10), encode_dataset(Xt, yt, cfg.v_max, 10))
    if cfg.features is not None:
        pool = load_features(cfg.features)
        test = load_features(cfg.test_features) if cfg.test_features is not None else None
        if test is not None and (test.n_inputs, test.n_classes) != (pool.n_inputs,
                                                                     pool.n_classes):
            raise ConsistencyError("test features do not match training features")
        return pool, test
    raise ParameterError("config has no data source: set data.mnist_dir or data.features")


def prepare_data(config: ExperimentConfig, holdout: bool = True) -> ExperimentData:
    """Training, validation and test sets as described by ``config.data``.

    With ``holdout=False`` the validation set is left to the caller (K-fold
    and gridsearch carve their own).
    """
    cfg = config.data
    pool, test = load_sources(cfg)
    train = _head(pool, 0, cfg.train_size)
    val = None
    if cfg.val_size is not None:
        val = _head(pool, len(train), cfg.val_size)
    elif holdout:
        train, val = split_validation(train, cfg.validation_fraction, config.seed)
    if test is not None:
        test = _head(test, 0, cfg.test_size)
    return ExperimentData(train, val, test)


def run_train(config: ExperimentConfig, data: ExperimentData | None = None) -> RunResult:
    data = data or prepare_data(config)
    result = fit(data.train, data.val, config.train_config())
    if data.test is not None:
        result.test_accuracy = evaluate(result.layer, data.test)
    return result


def run_kfold(config: ExperimentConfig, n_folds: int, n_jobs: int = 1,
              data: ExperimentData | None = None) -> KFoldResult:
    data = data or prepare_data(config, holdout=False)
    test = data.test
    if test is None:
        raise ParameterError("K-fold evaluation needs a test set")
    return kfold_evaluate(data.train, test, config.train_config(), n_folds, n_jobs)


def run_gridsearch(config: ExperimentConfig, space: dict, n_jobs: int = 1,
                   data: ExperimentData | None = None):
    data = data or prepare_data(config)
    return gridsearch(space, data.train, config.train_config(),
                      config.data.validation_fraction, n_jobs, val=data.val)

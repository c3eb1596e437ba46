"""Report bundles: CSV tables, a locked config and a model snapshot per run directory.

Every file is written whole and only depends on the run's inputs, so a rerun
with the same config and seed reproduces the tables byte for byte. Wall-clock
timestamps only appear in ``summary.txt``.
"""
from __future__ import annotations

import csv
import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .engine import ClassificationLayer
from .exceptions import FormatError
from .regulation import Regulation, ThresholdState
from .training import RunResult

ACCURACY_COLUMNS = ["fold", "seed", "best_epoch", "n_epochs", "best_val_accuracy", "test_accuracy"]
LEDGER_COLUMNS = ["fold", "epoch", "neuron", "class", "label", "target_updates",
                  "non_target_updates"]
THRESHOLD_COLUMNS = ["fold", "epoch", "class", "theta_prime_min", "theta_prime_max",
                     "theta_prime_mean"]
HISTORY_COLUMNS = ["fold", "epoch", "train_accuracy", "val_accuracy"]


def format_number(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not np.isfinite(x):
        raise FormatError(f"refusing to write non-finite value {x}")
    return repr(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue())


def _read_csv(path: Path, header: list[str] | None = None) -> list[dict]:
    if not path.is_file():
        raise FormatError(f"bundle is missing {path.name}")
    text = path.read_text()
    if not text.strip():
        raise FormatError(f"{path.name} is empty")
    reader = csv.DictReader(io.StringIO(text))
    if header is not None and reader.fieldnames != header:
        raise FormatError(f"{path.name}: expected columns {header}, got {reader.fieldnames}")
    return list(reader)


# ---------------------------------------------------------------- model snapshot

def save_model(layer: ClassificationLayer, path) -> None:
    """Write the layer as an ``.npz`` archive with fixed zip metadata (reproducible bytes)."""
    state = layer.thresholds
    arrays = {
        "weights": layer.weights, "theta": state.theta, "theta_prime": state.theta_prime,
        "non_target": layer.non_target,
        "shape": np.array([layer.n_classes, layer.neurons_per_class], dtype=np.int64),
        "params": np.array([layer.w_min, layer.w_max, state.eta_th, state.beta_th]),
        "mode": np.array(state.mode.value),
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, value in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(value), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)),
                        buf.getvalue(), compress_type=zipfile.ZIP_DEFLATED)


def load_model(path) -> ClassificationLayer:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no model snapshot at {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            n_classes, m = (int(v) for v in z["shape"])
            w_min, w_max, eta, beta = (float(v) for v in z["params"])
            state = ThresholdState(z["theta"].astype(np.float64),
                                   z["theta_prime"].astype(np.float64),
                                   eta, beta, Regulation(str(z["mode"])))
            return ClassificationLayer(z["weights"].astype(np.float64), n_classes, m,
                                       z["non_target"].astype(bool), state, w_min, w_max)
    except (KeyError, ValueError, zipfile.BadZipFile, OSError) as exc:
        raise FormatError(f"{path} is not a model snapshot: {exc}") from exc


def weight_rows(layer: ClassificationLayer):
    header = ["neuron", "class", "group", "label"] + [f"w{i}" for i in range(layer.n_inputs)]
    rows = []
    for j in range(layer.n_neurons):
        c = int(layer.class_map[j])
        label = "non-target" if layer.non_target[j] else "target"
        rows.append([j, c, c, label] + [format_number(w) for w in layer.weights[:, j]])
    return header, rows


def export_weights(layer: ClassificationLayer, path) -> None:
    header, rows = weight_rows(layer)
    write_csv(Path(path), header, rows)


# ---------------------------------------------------------------- bundle writer

@dataclass
class RunRecord:
    fold: int
    seed: int
    result: RunResult


def _theta_rows(fold: int, result: RunResult):
    layer = result.layer
    for epoch, theta_prime in enumerate(result.theta_prime_history):
        for c in range(layer.n_classes):
            values = theta_prime[layer.target_group(c)]
            yield [fold, epoch, c, format_number(values.min()), format_number(values.max()),
                   format_number(values.mean())]


def _ledger_rows(fold: int, result: RunResult):
    layer = result.layer
    counts = result.ledger.counts
    classes = layer.class_map
    for epoch in range(counts.shape[0]):
        for j in range(layer.n_neurons):
            label = "non-target" if layer.non_target[j] else "target"
            yield [fold, epoch, j, int(classes[j]), label,
                   int(counts[epoch, j, 0]), int(counts[epoch, j, 1])]


def format_accuracy(mean: float, std: float) -> str:
    """Percentages with two decimals, e.g. ``98.92 ± 0.07``."""
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


def write_bundle(out_dir, config: ExperimentConfig, records: list[RunRecord], command: str,
                 started: str, finished: str) -> Path:
    """Write every table of a train or K-fold run into ``out_dir``.

    The model snapshot and weight export come from the run with the best
    validation accuracy (earliest fold on ties).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not records:
        raise FormatError("nothing to report: no runs")

    write_lock(out, config)
    val = np.array([max(r.result.val_history) for r in records])
    tests = [r.result.test_accuracy for r in records]
    rows = [[r.fold, r.seed, r.result.best_epoch, r.result.n_epochs, format_number(v),
             format_number(t)] for r, v, t in zip(records, val, tests)]
    has_test = all(t is not None for t in tests)
    test_arr = np.array(tests, dtype=float) if has_test else None
    for name, stat in (("mean", np.mean), ("std", np.std)):
        test_cell = format_number(stat(test_arr)) if has_test else ""
        rows.append([name, "", "", "", format_number(stat(val)), test_cell])
    write_csv(out / "accuracy.csv", ACCURACY_COLUMNS, rows)

    write_csv(out / "history.csv", HISTORY_COLUMNS,
               [[r.fold, e, format_number(tr), format_number(va)] for r in records
                for e, (tr, va) in enumerate(zip(r.result.train_history, r.result.val_history))])
    write_csv(out / "ledger.csv", LEDGER_COLUMNS,
               [row for r in records for row in _ledger_rows(r.fold, r.result)])
    write_csv(out / "thresholds.csv", THRESHOLD_COLUMNS,
               [row for r in records for row in _theta_rows(r.fold, r.result)])

    chosen = records[int(np.argmax(val))]
    save_model(chosen.result.layer, out / "model.npz")
    export_weights(chosen.result.layer, out / "weights.csv")

    lines = [
        f"command: {command}",
        f"config_hash: {config.config_hash()}",
        f"seed: {config.seed}",
        f"started: {started}",
        f"finished: {finished}",
        f"runs: {len(records)}",
        f"validation accuracy: {format_accuracy(val.mean(), val.std())}",
    ]
    if has_test:
        lines.append(f"test accuracy: {format_accuracy(test_arr.mean(), test_arr.std())}")
    for r, v, t in zip(records, val, tests):
        test_txt = "" if t is None else f" test {100 * t:.2f}"
        lines.append(f"  fold {r.fold} (seed {r.seed}): best epoch {r.result.best_epoch}"
                     f" of {r.result.n_epochs}, val {100 * v:.2f}{test_txt}")
    lines.append(f"model snapshot: fold {chosen.fold}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return out


def write_lock(out: Path, config: ExperimentConfig) -> None:
    doc = {"config": config.to_dict(), "config_hash": config.config_hash()}
    (Path(out) / "config.lock").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_lock(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"bundle is missing {path.name}")
    try:
        doc = json.loads(path.read_text())
        config = ExperimentConfig.model_validate(doc["config"])
        recorded = doc["config_hash"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path.name} is corrupt: {exc}") from exc
    if config.config_hash() != recorded:
        raise FormatError(f"{path.name}: config hash does not match the embedded config")
    return config


# ---------------------------------------------------------------- bundle reader / analysis

def normalized_entropy(counts) -> float:
    """Shannon entropy of the count distribution divided by its maximum ``log(n)``.

    All-zero counts give 0; a single bin gives 1 (nothing to be unbalanced).
    """
    counts = np.asarray(counts, dtype=float)
    if counts.size == 1:
        return 1.0
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum() / np.log(counts.size))


@dataclass
class Bundle:
    config: ExperimentConfig
    accuracy: list[dict]
    ledger: np.ndarray  # (runs, epochs, N, 2) with zero padding for shorter runs
    folds: list[int]
    n_epochs: list[int]
    non_target: np.ndarray
    n_classes: int


def read_bundle(path) -> Bundle:
    path = Path(path)
    if not path.is_dir():
        raise FormatError(f"{path} is not a report bundle directory")
    config = read_lock(path / "config.lock")
    accuracy = _read_csv(path / "accuracy.csv", ACCURACY_COLUMNS)
    ledger_rows = _read_csv(path / "ledger.csv", LEDGER_COLUMNS)
    try:
        table = np.array([[int(r["fold"]), int(r["epoch"]), int(r["neuron"]), int(r["class"]),
                           r["label"] == "non-target", int(r["target_updates"]),
                           int(r["non_target_updates"])] for r in ledger_rows], dtype=np.int64)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"ledger.csv is corrupt: {exc}") from exc
    if table.size == 0:
        raise FormatError("ledger.csv has no rows")
    folds = sorted(set(table[:, 0].tolist()))
    n = int(table[:, 2].max()) + 1
    m = config.model.neurons_per_class
    if n % m or not np.array_equal(table[:, 3], table[:, 2] // m):
        raise FormatError("ledger.csv neuron/class columns disagree with the locked config")
    n_epochs = [int(table[table[:, 0] == f, 1].max()) + 1 for f in folds]
    for f, e in zip(folds, n_epochs):
        if (table[:, 0] == f).sum() != e * n:
            raise FormatError(f"ledger.csv: fold {f} does not have epochs x neurons rows")
    ledger = np.zeros((len(folds), max(n_epochs), n, 2), dtype=np.int64)
    fold_pos = {f: i for i, f in enumerate(folds)}
    for fold, epoch, j, _, _, tgt, non in table:
        ledger[fold_pos[fold], epoch, j] = (tgt, non)
    non_target = np.zeros(n, dtype=bool)
    non_target[table[:, 2]] = table[:, 4].astype(bool)
    return Bundle(config, accuracy, ledger, folds, n_epochs, non_target, n // m)


def update_shares(bundle: Bundle):
    """Rows ``(fold, epoch, class, neuron, target_updates, share)``.

    Shares are taken over each class's target neurons.
    """
    m = bundle.config.model.neurons_per_class
    rows = []
    for fi, fold in enumerate(bundle.folds):
        for epoch in range(bundle.n_epochs[fi]):
            for c in range(bundle.n_classes):
                group = [j for j in range(c * m, (c + 1) * m) if not bundle.non_target[j]]
                counts = bundle.ledger[fi, epoch, group, 0]
                total = counts.sum()
                for j, k in zip(group, counts):
                    rows.append((fold, epoch, c, j, int(k), k / total if total else 0.0))
    return rows


def entropy_table(bundle: Bundle):
    """Rows ``(fold, epoch, class, normalized_entropy)`` of target-update shares."""
    m = bundle.config.model.neurons_per_class
    rows = []
    for fi, fold in enumerate(bundle.folds):
        for epoch in range(bundle.n_epochs[fi]):
            for c in range(bundle.n_classes):
                group = [j for j in range(c * m, (c + 1) * m) if not bundle.non_target[j]]
                rows.append((fold, epoch, c,
                             normalized_entropy(bundle.ledger[fi, epoch, group, 0])))
    return rows


def write_report(bundle_dir, out_dir=None) -> str:
    """Write ``update_shares.csv`` and ``entropy.csv`` and return a text summary."""
    bundle = read_bundle(bundle_dir)
    out = Path(out_dir if out_dir is not None else bundle_dir)
    out.mkdir(parents=True, exist_ok=True)
    shares = update_shares(bundle)
    entropies = entropy_table(bundle)
    write_csv(out / "update_shares.csv",
               ["fold", "epoch", "class", "neuron", "target_updates", "share"],
               [[f, e, c, j, k, format_number(s)] for f, e, c, j, k, s in shares])
    write_csv(out / "entropy.csv", ["fold", "epoch", "class", "normalized_entropy"],
               [[f, e, c, format_number(h)] for f, e, c, h in entropies])

    lines = [f"config_hash: {bundle.config.config_hash()}"]
    agg = {r["fold"]: r for r in bundle.accuracy}
    for key in ("mean", "std"):
        if key in agg:
            r = agg[key]
            lines.append(f"{key}: val {r['best_val_accuracy']} test {r['test_accuracy'] or '-'}")
    lines.append("final-epoch target-update shares and normalized entropy:")
    final = {(f, c): h for f, e, c, h in entropies
             if e == bundle.n_epochs[bundle.folds.index(f)] - 1}
    for (f, c), h in sorted(final.items()):
        last = bundle.n_epochs[bundle.folds.index(f)] - 1
        share_txt = " ".join(f"{s:.2f}" for ff, e, cc, _, _, s in shares
                             if ff == f and cc == c and e == last)
        lines.append(f"  fold {f} class {c}: shares [{share_txt}] entropy {h:.3f}")
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    return text

"""Backward-elimination feature selection with permutation importance.

The importance scorer is pluggable; the default is a cheap logistic probe
over flattened feature encodings (one-hot categoricals, raw embeddings).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import FeatureKind, FeatureSchema, Snapshot
from .metrics import auroc

__all__ = [
    "StopRule",
    "EliminationTrace",
    "featurize",
    "logistic_probe_auroc",
    "permutation_importance",
    "backward_eliminate",
]


@dataclass
class StopRule:
    tolerance: float = 0.002  # allowed validation-AUROC drop vs the full set
    min_features: int = 1


@dataclass
class EliminationTrace:
    baseline_metric: float = float("nan")
    rounds: list = field(default_factory=list)  # (round, feature, importance, metric)

    def removed_features(self) -> list:
        return [r[1] for r in self.rounds]


def featurize(snapshots: list[Snapshot], schema: FeatureSchema):
    """Flatten snapshots into (X, column ranges per feature name).

    numeric -> one standardized column (missing as 0 plus a missing flag);
    categorical -> one-hot; multi-categorical -> multi-hot; embedding -> raw
    vector; multi-embedding -> mean of asset vectors.
    """
    cols = []
    ranges = {}
    pos = 0
    n = len(snapshots)
    for f in schema:
        if f.kind == FeatureKind.NUMERIC:
            v = np.array(
                [0.0 if s.values.get(f.name) is None else s.values[f.name] for s in snapshots]
            )
            miss = np.array([1.0 if s.values.get(f.name) is None else 0.0 for s in snapshots])
            block = np.stack([v, miss], axis=1)
        elif f.kind == FeatureKind.CATEGORICAL:
            block = np.zeros((n, f.vocab_size))
            for i, s in enumerate(snapshots):
                v = s.values.get(f.name)
                if v is not None:
                    block[i, v] = 1.0
        elif f.kind == FeatureKind.MULTI_CATEGORICAL:
            block = np.zeros((n, f.vocab_size))
            for i, s in enumerate(snapshots):
                for v in s.values.get(f.name) or ():
                    block[i, v] = 1.0
        elif f.kind == FeatureKind.EMBEDDING:
            block = np.zeros((n, f.dim))
            for i, s in enumerate(snapshots):
                v = s.values.get(f.name)
                if v is not None:
                    block[i] = v
        else:
            block = np.zeros((n, f.dim))
            for i, s in enumerate(snapshots):
                assets = s.values.get(f.name) or []
                if assets:
                    block[i] = np.mean([a.vector for a in assets], axis=0)
        cols.append(block)
        ranges[f.name] = (pos, pos + block.shape[1])
        pos += block.shape[1]
    x = np.concatenate(cols, axis=1) if cols else np.zeros((n, 0))
    return x, ranges


def _fit_logistic(x: np.ndarray, y: np.ndarray, steps: int = 300, lr: float = 0.5):
    """Plain full-batch gradient descent on standardized inputs; returns a
    scoring closure. Deterministic, no regularization beyond standardization."""
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd < 1e-12] = 1.0
    xs = (x - mu) / sd
    w = np.zeros(xs.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(steps):
        z = xs @ w + b
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -30, 30)))
        g = p - y
        w -= lr * (xs.T @ g / n + 1e-4 * w)
        b -= lr * g.mean()

    def score(x_new):
        return ((x_new - mu) / sd) @ w + b

    return score


def logistic_probe_auroc(x_train, y_train, x_val, y_val) -> float:
    """Default model_fit_fn: train a logistic probe, return validation AUROC."""
    score = _fit_logistic(x_train, y_train)
    return auroc(score(x_val), y_val)


def permutation_importance(
    model_fit_fn,
    x_train,
    y_train,
    x_val,
    y_val,
    col_range,
    repeats: int = 5,
    rng: np.random.Generator | None = None,
    baseline: float | None = None,
) -> float:
    """AUROC(original) minus mean AUROC with the feature's validation columns
    permuted, over `repeats` draws."""
    rng = rng or np.random.default_rng(0)
    if baseline is None:
        baseline = model_fit_fn(x_train, y_train, x_val, y_val)
    lo, hi = col_range
    drops = []
    for _ in range(repeats):
        perm = rng.permutation(len(x_val))
        x_perm = x_val.copy()
        x_perm[:, lo:hi] = x_val[perm, lo:hi]
        drops.append(baseline - model_fit_fn(x_train, y_train, x_perm, y_val))
    return float(np.mean(drops))


def backward_eliminate(
    snapshots: list[Snapshot],
    schema: FeatureSchema,
    task: str,
    stop_rule: StopRule | None = None,
    model_fit_fn=logistic_probe_auroc,
    repeats: int = 5,
    seed: int = 0,
    val_frac: float = 0.3,
):
    """Iteratively drop the lowest-importance feature until the validation
    metric would fall more than stop_rule.tolerance below the full-schema
    baseline, or min_features is reached.

    Returns (reduced FeatureSchema, EliminationTrace).
    """
    stop_rule = stop_rule or StopRule()
    if len(schema) < 2:
        raise ValueError("need at least 2 features to eliminate")
    rng = np.random.default_rng(seed)
    y = np.array([s.labels[task] for s in snapshots], dtype=np.float64)
    n = len(snapshots)
    order = rng.permutation(n)
    n_val = max(1, int(n * val_frac))
    val_idx, train_idx = order[:n_val], order[n_val:]

    remaining = [f.name for f in schema]
    trace = EliminationTrace()

    def metric_for(feature_names):
        sub = FeatureSchema([schema.get(nm) for nm in feature_names], schema.tasks)
        x, ranges = featurize(snapshots, sub)
        return (
            model_fit_fn(x[train_idx], y[train_idx], x[val_idx], y[val_idx]),
            x,
            ranges,
        )

    baseline, x, ranges = metric_for(remaining)
    trace.baseline_metric = baseline
    current = baseline
    rnd = 0
    while len(remaining) > stop_rule.min_features:
        importances = {}
        for name in remaining:
            importances[name] = permutation_importance(
                model_fit_fn,
                x[train_idx],
                y[train_idx],
                x[val_idx],
                y[val_idx],
                ranges[name],
                repeats=repeats,
                rng=rng,
                baseline=current,
            )
        weakest = min(remaining, key=lambda nm: (importances[nm], nm))
        candidate = [nm for nm in remaining if nm != weakest]
        new_metric, new_x, new_ranges = metric_for(candidate)
        if new_metric < trace.baseline_metric - stop_rule.tolerance:
            break
        rnd += 1
        trace.rounds.append((rnd, weakest, importances[weakest], new_metric))
        remaining = candidate
        current, x, ranges = new_metric, new_x, new_ranges

    reduced = FeatureSchema([schema.get(nm) for nm in remaining], schema.tasks)
    return reduced, trace

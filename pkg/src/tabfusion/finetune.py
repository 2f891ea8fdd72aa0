"""Supervised stage: SNGP output heads (random-feature Gaussian process with
Laplace covariance), focal loss, multi-task fine-tuning, calibrated inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import Linear, training_mode
from .optim import AdamW, CosineWarmupSchedule
from .tensor import Tensor, log_softmax, matmul, softmax

__all__ = ["TaskSpec", "SngpHead", "focal_loss", "finetune_loop", "FinetuneConfig"]


@dataclass
class TaskSpec:
    name: str
    classes: int = 2
    gamma: float = 2.0  # focal focusing parameter
    class_weights: list | None = None

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("a task needs at least 2 classes")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")


class SngpHead:
    """Random-Fourier-feature GP head with Laplace precision accumulation.

    Features Phi = sqrt(2/d_rf) * cos(x Omega^T + b) with Omega ~ N(0, 1/l^2)
    and phases b ~ U[0, 2pi), both frozen at init. Only the output weights
    beta train. After fitting, predictive variance Phi Lambda^-1 Phi^T feeds
    a mean-field logit adjustment logit / sqrt(1 + kappa * var).
    """

    def __init__(
        self,
        in_dim: int,
        classes: int,
        rng: np.random.Generator,
        d_rf: int = 1024,
        length_scale: float = 2.0,
        ridge: float = 1.0,
        kappa: float = math.pi / 8.0,
    ):
        self.in_dim = in_dim
        self.classes = classes
        self.d_rf = d_rf
        self.length_scale = length_scale
        self.ridge = ridge
        self.kappa = kappa
        self.omega = (rng.standard_normal((d_rf, in_dim)) / length_scale).astype(np.float32)
        self.phase = rng.uniform(0.0, 2.0 * math.pi, size=d_rf).astype(np.float32)
        self.beta = Linear(d_rf, classes, rng, bias=False)
        self.precision: np.ndarray | None = None  # Lambda, set by fit_covariance
        self._chol: np.ndarray | None = None

    def parameters(self) -> dict:
        return {f"beta.{k}": v for k, v in self.beta.parameters().items()}

    def buffers(self) -> dict:
        out = {"omega": self.omega, "phase": self.phase}
        if self.precision is not None:
            out["precision"] = self.precision
        return out

    def load_buffers(self, buffers: dict) -> None:
        self.omega = buffers["omega"]
        self.phase = buffers["phase"]
        if "precision" in buffers:
            self.precision = buffers["precision"].astype(np.float64)
            self._chol = np.linalg.cholesky(self.precision)

    def features(self, pooled: Tensor) -> Tensor:
        """Phi = sqrt(2/d_rf) cos(pooled Omega^T + b); differentiable in pooled."""
        proj = matmul(pooled, Tensor(self.omega.astype(pooled.dtype)).transpose(1, 0))
        return (proj + Tensor(self.phase.astype(pooled.dtype))).cos() * math.sqrt(2.0 / self.d_rf)

    def logits(self, pooled: Tensor) -> Tensor:
        return self.beta(self.features(pooled))

    def reset_covariance(self) -> None:
        self.precision = self.ridge * np.eye(self.d_rf)
        self._chol = None

    def fit_covariance(self, phi: np.ndarray, probs: np.ndarray) -> np.ndarray:
        """Laplace precision Lambda = ridge*I + sum_i p_i(1-p_i) phi_i phi_i^T.

        For binary tasks p_i is the positive-class probability; multiclass
        uses the max-prob heuristic. Order-independent (a plain sum).
        """
        phi = np.asarray(phi, dtype=np.float64)
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim == 2:
            p = probs[:, 1] if probs.shape[1] == 2 else probs.max(axis=1)
        else:
            p = probs
        w = p * (1.0 - p)
        lam = self.ridge * np.eye(self.d_rf) + (phi * w[:, None]).T @ phi
        self.precision = lam
        self._chol = np.linalg.cholesky(lam)
        return lam

    def variance(self, phi: np.ndarray) -> np.ndarray:
        """Predictive variance Phi Lambda^-1 Phi^T diagonal, via the cached
        Cholesky factor (Lambda is never inverted explicitly)."""
        if self.precision is None:
            raise RuntimeError("covariance not fitted")
        if self._chol is None:
            self._chol = np.linalg.cholesky(self.precision)
        y = np.linalg.solve(self._chol, np.asarray(phi, dtype=np.float64).T)
        return np.einsum("ij,ij->j", y, y)

    def predict(self, pooled: Tensor) -> dict:
        """Calibrated class probabilities plus predictive variance.

        Falls back to uncalibrated softmax (calibrated=False) when the
        covariance has not been fitted.
        """
        phi_t = self.features(pooled)
        logits = self.beta(phi_t).data.astype(np.float64)
        if self.precision is None:
            return {
                "probs": _softmax_np(logits),
                "variance": np.full(logits.shape[0], np.nan),
                "calibrated": False,
            }
        var = self.variance(phi_t.data)
        adjusted = logits / np.sqrt(1.0 + self.kappa * var)[:, None]
        return {"probs": _softmax_np(adjusted), "variance": var, "calibrated": True}


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def focal_loss(probs: Tensor, labels, gamma: float, class_weights=None) -> Tensor:
    """Mean over the batch of -(1-p)^gamma * log(p) at the true class.

    gamma=0 reduces exactly to cross-entropy. probs are clamped at 1e-12.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    b, c = probs.shape
    onehot = np.zeros((b, c), dtype=np.float32)
    for i, y in enumerate(labels):
        onehot[i, int(y)] = 1.0
    p_true = (probs * Tensor(onehot)).sum(axis=-1)
    p_safe = p_true.clip_min(1e-12)
    per_example = -((1.0 - p_true) ** float(gamma)) * p_safe.log() if gamma > 0 else -p_safe.log()
    if class_weights is not None:
        w = np.array([class_weights[int(y)] for y in labels], dtype=np.float32)
        per_example = per_example * Tensor(w)
    return per_example.mean()


@dataclass
class FinetuneConfig:
    steps: int = 500
    batch_size: int = 64
    schedule: CosineWarmupSchedule = field(
        default_factory=lambda: CosineWarmupSchedule(warmup_target_multiplier=2.0)
    )
    weight_decay: float = 0.0
    d_rf: int = 1024
    length_scale: float = 2.0
    ridge: float = 1.0
    linear_probe: bool = False  # freeze everything but the heads
    eval_every: int = 50
    patience: int = 10  # early-stopping patience in eval intervals, on val AUPRC
    seed: int = 0


def finetune_loop(model, snapshots, tasks: list[TaskSpec], cfg: FinetuneConfig, val_indices=None):
    """Joint supervised training of trunk + SNGP heads on the focal-loss sum.

    ISA is bypassed throughout (mode='finetune'). Ends with a covariance
    pass over the training set for every head. Returns the loss curve.
    """
    from .metrics import auprc

    rng = np.random.default_rng(cfg.seed)
    for t in tasks:
        labeled = [s for s in snapshots if s.labels.get(t.name) is not None]
        if not labeled:
            raise ValueError(f"no labeled examples for task '{t.name}'")
    if not model.heads:
        head_rng = np.random.default_rng(cfg.seed + 1)
        for t in tasks:
            model.heads[t.name] = SngpHead(
                model.d, t.classes, head_rng, d_rf=cfg.d_rf,
                length_scale=cfg.length_scale, ridge=cfg.ridge,
            )

    params = {}
    for t in tasks:
        params.update({f"head.{t.name}.{k}": v for k, v in model.heads[t.name].parameters().items()})
    if not cfg.linear_probe:
        params.update(model.backbone_parameters())
    opt = AdamW(params, weight_decay=cfg.weight_decay)

    val_set = [snapshots[i] for i in val_indices] if val_indices is not None else None
    train_set = (
        [s for i, s in enumerate(snapshots) if i not in set(np.asarray(val_indices).tolist())]
        if val_indices is not None
        else list(snapshots)
    )

    curve = []
    best_metric = -np.inf
    best_state = None
    stale = 0
    for step in range(cfg.steps):
        idx = rng.choice(len(train_set), size=min(cfg.batch_size, len(train_set)), replace=False)
        batch = [train_set[i] for i in idx]
        record = {"step": step}
        with training_mode():
            x, mask = model.encoder.assemble_tokens(batch)
            _, pooled = model.trunk(x, mask, mode="finetune")
            total = None
            for t in tasks:
                labeled = [i for i, s in enumerate(batch) if s.labels.get(t.name) is not None]
                if not labeled:
                    continue
                probs = softmax(model.heads[t.name].logits(pooled[labeled]), axis=-1)
                labels = [batch[i].labels[t.name] for i in labeled]
                loss = focal_loss(probs, labels, t.gamma, t.class_weights)
                record[f"loss.{t.name}"] = loss.item()
                total = loss if total is None else total + loss
            if total is None:
                continue
            record["total"] = total.item()
            opt.zero_grad()
            total.backward()
        opt.step(lr=cfg.schedule.lr_at(step))
        curve.append(record)

        if val_set and (step + 1) % cfg.eval_every == 0:
            scores = predict_scores(model, val_set, tasks[0].name, calibrated=False)
            labels = np.array([s.labels[tasks[0].name] for s in val_set])
            metric = auprc(scores, labels)
            record[f"val_auprc.{tasks[0].name}"] = metric
            if metric > best_metric + 1e-12:
                best_metric = metric
                best_state = {k: p.data.copy() for k, p in params.items()}
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break

    if best_state is not None:
        for k, p in params.items():
            p.data[...] = best_state[k]

    fit_heads_covariance(model, train_set, tasks)
    return curve


def fit_heads_covariance(model, snapshots, tasks, batch_size: int = 256) -> None:
    """Final pass accumulating the Laplace precision for every task head."""
    for t in tasks:
        labeled = [s for s in snapshots if s.labels.get(t.name) is not None]
        phis = []
        probs = []
        for lo in range(0, len(labeled), batch_size):
            batch = labeled[lo : lo + batch_size]
            x, mask = model.encoder.assemble_tokens(batch)
            _, pooled = model.trunk(x, mask, mode="finetune")
            phi = model.heads[t.name].features(pooled)
            phis.append(phi.data)
            probs.append(_softmax_np(model.heads[t.name].beta(phi).data))
        model.heads[t.name].fit_covariance(np.concatenate(phis), np.concatenate(probs))


def predict_scores(model, snapshots, task: str, calibrated: bool = True, batch_size: int = 256):
    """Positive-class (class 1) probabilities for a binary task."""
    out = []
    for lo in range(0, len(snapshots), batch_size):
        batch = snapshots[lo : lo + batch_size]
        x, mask = model.encoder.assemble_tokens(batch)
        _, pooled = model.trunk(x, mask, mode="inference")
        head = model.heads[task]
        if calibrated and head.precision is not None:
            out.append(head.predict(pooled)["probs"][:, 1])
        else:
            out.append(_softmax_np(head.logits(pooled).data)[:, 1])
    return np.concatenate(out)

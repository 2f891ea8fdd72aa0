"""Self-supervised pre-training: CutMix/MixUp augmentation, per-feature-type
reconstruction decoders and losses, InfoNCE contrastive loss, and the loop.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .data import FeatureKind, FeatureSchema, Snapshot, select_top_k_assets
from .nn import Linear, training_mode
from .optim import AdamW, CosineWarmupSchedule
from .tensor import Tensor, log_softmax, matmul, reduce_mean, reduce_sum, softmax

__all__ = [
    "AugmentConfig",
    "LossWeights",
    "ReconstructionHeads",
    "cutmix",
    "mixup",
    "reconstruction_loss",
    "info_nce",
    "pretrain_total_loss",
    "pretrain_loop",
]


@dataclass
class AugmentConfig:
    cutmix_swap_prob: float = 0.2  # probability a feature is taken from the partner
    mixup_alpha: float = 0.8  # weight on the anchor in the latent interpolation
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.cutmix_swap_prob <= 1.0:
            raise ValueError("cutmix_swap_prob must be in [0, 1]")
        if not 0.0 <= self.mixup_alpha <= 1.0:
            raise ValueError("mixup_alpha must be in [0, 1]")


@dataclass
class LossWeights:
    num: float = 1.0
    ce: float = 1.0
    mcat: float = 1.0
    con: float = 1.0
    emb: float = 1.0
    memb: float = 1.0
    tau: float = 0.1

    def __post_init__(self):
        parts = (self.num, self.ce, self.mcat, self.con, self.emb, self.memb)
        if any(a < 0 for a in parts):
            raise ValueError("loss weights must be non-negative")
        if all(a == 0 for a in parts):
            raise ValueError("at least one loss weight must be positive")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")


def cutmix(x_i: Snapshot, x_j: Snapshot, swap_prob: float, rng: np.random.Generator) -> Snapshot:
    """Per-feature input-space mix: each feature comes from the partner x_j
    with probability swap_prob, else from the anchor x_i."""
    if set(x_i.values) != set(x_j.values):
        raise ValueError("cutmix requires snapshots sharing one schema")
    values = {}
    for name in x_i.values:
        take_partner = rng.random() < swap_prob
        values[name] = copy.deepcopy(x_j.values[name] if take_partner else x_i.values[name])
    return Snapshot(values, dict(x_i.labels))


def mixup(h_i: Tensor, h_j: Tensor, alpha: float) -> Tensor:
    """Latent-space convex combination alpha*h_i + (1-alpha)*h_j."""
    return h_i * float(alpha) + h_j * (1.0 - float(alpha))


class ReconstructionHeads:
    """Per-feature-type decoders from token outputs back to feature space.

    Decoders are shared across features of the same type and output size:
    numerics share one d->1 head, categoricals share a d->vocab head per
    vocabulary size, embedding features a d->dim head per input dim.
    """

    def __init__(self, schema: FeatureSchema, d: int, rng: np.random.Generator):
        self.schema = schema
        self.decoders: dict[tuple, Linear] = {}
        for f in schema:
            key = self._key(f)
            if key not in self.decoders:
                self.decoders[key] = Linear(d, key[1], rng)

    @staticmethod
    def _key(f) -> tuple:
        if f.kind == FeatureKind.NUMERIC:
            return ("num", 1)
        if f.kind == FeatureKind.CATEGORICAL:
            return ("ce", f.vocab_size)
        if f.kind == FeatureKind.MULTI_CATEGORICAL:
            return ("mcat", f.vocab_size)
        if f.kind == FeatureKind.EMBEDDING:
            return ("emb", f.dim)
        return ("memb", f.dim)

    def decoder_for(self, f) -> Linear:
        return self.decoders[self._key(f)]

    def parameters(self) -> dict:
        out = {}
        for (kind, size), lin in self.decoders.items():
            for k, v in lin.parameters().items():
                out[f"recon.{kind}{size}.{k}"] = v
        return out


def reconstruction_loss(
    tokens: Tensor,
    originals: list[Snapshot],
    schema: FeatureSchema,
    heads: ReconstructionHeads,
    asset_criterion: str = "recency",
    asset_seed: int = 0,
) -> dict:
    """Per-type losses decoding the (augmented-view) tokens back to the
    original inputs. Missing features are excluded from their loss terms.

    Returns {"num", "ce", "mcat", "emb", "memb"} -> scalar Tensor.
    """
    b = len(originals)
    acc: dict[str, list] = {"num": [], "ce": [], "mcat": [], "emb": [], "memb": []}

    for f, start, count in schema.token_slots():
        dec = heads.decoder_for(f)
        tok = tokens[:, start, :] if count == 1 else None
        if f.kind == FeatureKind.NUMERIC:
            target = np.array(
                [0.0 if s.values.get(f.name) is None else s.values[f.name] for s in originals],
                dtype=np.float32,
            )
            observed = np.array(
                [0.0 if s.values.get(f.name) is None else 1.0 for s in originals], dtype=np.float32
            )
            if observed.sum() == 0:
                continue
            pred = dec(tok).reshape(b)
            err = (pred - Tensor(target)) * Tensor(observed)
            acc["num"].append((err * err).sum() * (1.0 / observed.sum()))
        elif f.kind == FeatureKind.CATEGORICAL:
            idx = [s.values.get(f.name) for s in originals]
            observed = np.array([0.0 if v is None else 1.0 for v in idx], dtype=np.float32)
            if observed.sum() == 0:
                continue
            onehot = np.zeros((b, f.vocab_size), dtype=np.float32)
            for i, v in enumerate(idx):
                if v is not None:
                    onehot[i, v] = 1.0
            logp = log_softmax(dec(tok), axis=-1)
            ce = -(logp * Tensor(onehot)).sum(axis=-1)
            acc["ce"].append((ce * Tensor(observed)).sum() * (1.0 / observed.sum()))
        elif f.kind == FeatureKind.MULTI_CATEGORICAL:
            indicator = np.zeros((b, f.vocab_size), dtype=np.float32)
            for i, s in enumerate(originals):
                for v in s.values.get(f.name) or ():
                    indicator[i, v] = 1.0
            logits = dec(tok)
            # sum over classes of per-class binary cross-entropy
            p = _sigmoid(logits)
            y = Tensor(indicator)
            bce = -(y * p.clip_min(1e-12).log() + (1.0 - y) * (1.0 - p).clip_min(1e-12).log())
            acc["mcat"].append(bce.sum(axis=-1).mean())
        elif f.kind == FeatureKind.EMBEDDING:
            target = np.zeros((b, f.dim), dtype=np.float32)
            observed = np.zeros(b, dtype=np.float32)
            for i, s in enumerate(originals):
                v = s.values.get(f.name)
                if v is not None:
                    target[i] = v
                    observed[i] = 1.0
            if observed.sum() == 0:
                continue
            err = (dec(tok) - Tensor(target)) * Tensor(observed.reshape(b, 1))
            acc["emb"].append((err * err).sum() * (1.0 / (observed.sum() * f.dim)))
        else:  # multi-embedding
            target = np.zeros((b, count, f.dim), dtype=np.float32)
            present = np.zeros((b, count), dtype=np.float32)
            for i, s in enumerate(originals):
                assets = select_top_k_assets(
                    s.values.get(f.name) or [], count, criterion=asset_criterion, seed=asset_seed
                )
                for j, a in enumerate(assets):
                    target[i, j] = a.vector
                    present[i, j] = 1.0
            if present.sum() == 0:
                continue
            toks = tokens[:, start : start + count, :]
            err = (dec(toks) - Tensor(target)) * Tensor(present.reshape(b, count, 1))
            acc["memb"].append((err * err).sum() * (1.0 / (present.sum() * f.dim)))

    zero = Tensor(np.zeros((), dtype=tokens.dtype))
    out = {}
    for kind, parts in acc.items():
        if not parts:
            out[kind] = zero
            continue
        total = parts[0]
        for p in parts[1:]:
            total = total + p
        out[kind] = total * (1.0 / len(parts))
    return out


def _sigmoid(x: Tensor) -> Tensor:
    return ((-x).exp() + 1.0) ** -1.0


def info_nce(z: Tensor, z_pos: Tensor, tau: float) -> Tensor:
    """Contrastive loss with cosine similarity and in-batch negatives.

    Anchor b's positive is z_pos[b]; the denominator sums the positive and
    the other B-1 augmented rows. Averaged over anchors.
    """
    b = z.shape[0]
    if b < 2:
        raise ValueError("info_nce needs a batch of at least 2 (no negatives otherwise)")
    zn = _l2_normalize(z)
    pn = _l2_normalize(z_pos)
    logits = matmul(zn, pn.transpose(1, 0)) * (1.0 / tau)  # [B, B] cosine / tau
    logp = log_softmax(logits, axis=-1)
    eye = Tensor(np.eye(b, dtype=np.float32))
    return -(logp * eye).sum() * (1.0 / b)


def _l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    norm = (reduce_sum(x * x, axis=-1, keepdims=True) + eps) ** 0.5
    return x * norm ** -1.0


def pretrain_total_loss(parts: dict, weights: LossWeights) -> Tensor:
    """Weighted sum of the five reconstruction terms plus the contrastive term."""
    return (
        parts["num"] * weights.num
        + parts["ce"] * weights.ce
        + parts["mcat"] * weights.mcat
        + parts["con"] * weights.con
        + parts["emb"] * weights.emb
        + parts["memb"] * weights.memb
    )


@dataclass
class PretrainConfig:
    steps: int = 200
    batch_size: int = 32
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    schedule: CosineWarmupSchedule = field(default_factory=CosineWarmupSchedule)
    weight_decay: float = 0.0
    seed: int = 0
    log_every: int = 10


def pretrain_loop(model, snapshots: list[Snapshot], cfg: PretrainConfig, log_path=None):
    """Run the self-supervised stage; mutates model parameters in place.

    Per step: sample a batch and a partner permutation; CutMix in input
    space; encode both views; MixUp the augmented view's tokens; forward
    both through the trunk with ISA on; reconstruction losses against the
    original inputs plus InfoNCE between the two pooled embeddings; AdamW.

    Returns the loss curve: a list of per-step records.
    """
    rng = np.random.default_rng(cfg.seed)
    aug_rng = np.random.default_rng(cfg.augment.seed)
    params = model.parameters()
    opt = AdamW(params, weight_decay=cfg.weight_decay)
    curve = []
    fh = open(log_path, "a") if log_path else None
    try:
        for step in range(cfg.steps):
            idx = rng.choice(len(snapshots), size=min(cfg.batch_size, len(snapshots)), replace=False)
            batch = [snapshots[i] for i in idx]
            partner = rng.permutation(len(batch))
            augmented = [
                cutmix(batch[i], batch[partner[i]], cfg.augment.cutmix_swap_prob, aug_rng)
                for i in range(len(batch))
            ]

            with training_mode():
                x_orig, mask = model.encoder.assemble_tokens(batch)
                x_aug, mask_aug = model.encoder.assemble_tokens(augmented)
                # MixUp in latent space, pairing each anchor with the same partner
                x_aug = mixup(x_aug, x_aug[partner.tolist()], cfg.augment.mixup_alpha)

                tokens_aug, pooled_aug = model.trunk(x_aug, mask_aug, mode="pretrain")
                _, pooled_orig = model.trunk(x_orig, mask, mode="pretrain")

                parts = reconstruction_loss(
                    tokens_aug,
                    batch,
                    model.encoder.schema,
                    model.recon,
                    asset_criterion=model.encoder.asset_criterion,
                    asset_seed=model.encoder.asset_seed,
                )
                parts["con"] = info_nce(pooled_orig, pooled_aug, cfg.weights.tau)
                total = pretrain_total_loss(parts, cfg.weights)
                if not np.isfinite(total.item()):
                    raise RuntimeError(f"non-finite pretrain loss at step {step}")

                opt.zero_grad()
                total.backward()
            lr = cfg.schedule.lr_at(step)
            opt.step(lr=lr)

            record = {"step": step, "lr": lr, "total": total.item()}
            record.update({k: v.item() for k, v in parts.items()})
            curve.append(record)
            if fh and step % cfg.log_every == 0:
                fh.write(
                    " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in record.items())
                    + "\n"
                )
    finally:
        if fh:
            fh.close()
    return curve

"""Dual-attention transformer trunk: row self-attention over tokens plus
projection-based inter-sample attention (ISA) over the batch axis.

ISA flattens each example's N*d token block, projects it to d', attends
across examples, and projects back, cutting the inter-sample attention cost
from O(B^2*N*d) to O(B^2*d'). The whole ISA block sits behind a residual
connection and is skipped entirely at fine-tune/inference time so each
prediction depends only on its own example.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import Linear, Mlp, SpectralLinear
from .tensor import Tensor, ShapeError, concat, layer_norm, matmul, softmax

__all__ = ["TrunkConfig", "attention", "IsaBlock", "TrunkLayer", "Trunk"]

MODES = ("pretrain", "finetune", "inference")


@dataclass
class TrunkConfig:
    d: int = 32
    n_tokens: int = 8
    n_layers: int = 6
    heads: int = 8
    ffn_dim: int = 512
    d_prime: int = 128  # ISA projected dim, default 4*d
    isa_enabled: bool = True
    spectral_norm: bool = True

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if self.d_prime < 1:
            raise ValueError("d_prime must be >= 1")


def attention(x: Tensor, w_q: Linear, w_k: Linear, w_v: Linear, heads: int = 1, key_mask=None) -> Tensor:
    """Scaled dot-product attention over the second-to-last axis of [.., T, d].

    Multi-head split/merge when heads > 1; masked keys get -inf pre-softmax.
    """
    if x.ndim != 3:
        raise ShapeError("attention", x.shape)
    b, t, d = x.shape
    dh = d // heads
    q, k, v = w_q(x), w_k(x), w_v(x)
    if heads > 1:
        # [B, T, d] -> [B, H, T, dh]
        q = q.reshape(b, t, heads, dh).transpose(0, 2, 1, 3)
        k = k.reshape(b, t, heads, dh).transpose(0, 2, 1, 3)
        v = v.reshape(b, t, heads, dh).transpose(0, 2, 1, 3)
    logits = matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) * (1.0 / math.sqrt(dh))
    if key_mask is not None:
        bias = (np.asarray(key_mask, dtype=np.float32) - 1.0) * 1e9  # [B, T]
        bias = bias[:, None, None, :] if heads > 1 else bias[:, None, :]
        logits = logits + Tensor(bias)
    attn = softmax(logits, axis=-1)
    out = matmul(attn, v)
    if heads > 1:
        out = out.transpose(0, 2, 1, 3).reshape(b, t, d)
    return out


class IsaBlock:
    """Projection-based inter-sample attention at reduced dimension d'."""

    def __init__(self, cfg: TrunkConfig, rng: np.random.Generator):
        nd = cfg.n_tokens * cfg.d
        dp = cfg.d_prime
        cls = SpectralLinear if cfg.spectral_norm else Linear
        self.project = cls(nd, dp, rng)
        self.restore = cls(dp, nd, rng)
        self.w_q = cls(dp, dp, rng, bias=False)
        self.w_k = cls(dp, dp, rng, bias=False)
        self.w_v = cls(dp, dp, rng, bias=False)
        self.ffn = Mlp(dp, dp, dp, rng, spectral=cfg.spectral_norm)
        self.cfg = cfg

    def parameters(self) -> dict:
        out = {}
        for name, mod in (
            ("project", self.project),
            ("restore", self.restore),
            ("w_q", self.w_q),
            ("w_k", self.w_k),
            ("w_v", self.w_v),
        ):
            for k, v in mod.parameters().items():
                out[f"{name}.{k}"] = v
        for k, v in self.ffn.parameters().items():
            out[f"ffn.{k}"] = v
        return out

    def named_modules(self) -> dict:
        return {
            "project": self.project,
            "restore": self.restore,
            "w_q": self.w_q,
            "w_k": self.w_k,
            "w_v": self.w_v,
            "ffn": self.ffn,
        }

    def __call__(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        flat = x.reshape(1, b, n * d)  # batch axis becomes the attention axis
        proj = self.project(flat)  # [1, B, d']
        proj = layer_norm(proj)
        attn = attention(proj, self.w_q, self.w_k, self.w_v, heads=1)
        restored = self.restore(self.ffn(attn))  # [1, B, N*d]
        return restored.reshape(b, n, d)


class TrunkLayer:
    """Pre-norm transformer layer: row attention + FFN, then residual ISA."""

    def __init__(self, cfg: TrunkConfig, rng: np.random.Generator):
        cls = SpectralLinear if cfg.spectral_norm else Linear
        self.w_q = cls(cfg.d, cfg.d, rng, bias=False)
        self.w_k = cls(cfg.d, cfg.d, rng, bias=False)
        self.w_v = cls(cfg.d, cfg.d, rng, bias=False)
        self.ffn = Mlp(cfg.d, cfg.ffn_dim, cfg.d, rng, spectral=cfg.spectral_norm)
        self.isa = IsaBlock(cfg, rng) if cfg.isa_enabled else None
        self.cfg = cfg

    def parameters(self) -> dict:
        out = {}
        for name, mod in (("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v), ("ffn", self.ffn)):
            for k, v in mod.parameters().items():
                out[f"{name}.{k}"] = v
        if self.isa is not None:
            for k, v in self.isa.parameters().items():
                out[f"isa.{k}"] = v
        return out

    def named_modules(self) -> dict:
        out = {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v, "ffn": self.ffn}
        if self.isa is not None:
            for k, v in self.isa.named_modules().items():
                out[f"isa.{k}"] = v
        return out

    def __call__(self, x: Tensor, mask, use_isa: bool) -> Tensor:
        x = x + attention(layer_norm(x), self.w_q, self.w_k, self.w_v, self.cfg.heads, key_mask=mask)
        x = x + self.ffn(layer_norm(x))
        if use_isa and self.isa is not None:
            x = x + self.isa(x)
        return x


class Trunk:
    def __init__(self, cfg: TrunkConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.layers = [TrunkLayer(cfg, rng) for _ in range(cfg.n_layers)]

    def parameters(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.parameters().items():
                out[f"trunk.layer{i}.{k}"] = v
        return out

    def named_modules(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.named_modules().items():
                out[f"trunk.layer{i}.{k}"] = v
        return out

    def __call__(self, x: Tensor, mask=None, mode: str = "inference"):
        """Run the stack; returns (tokens [B, N, d], pooled [B, d]).

        ISA blocks execute only in pretrain mode; in finetune/inference they
        are identity (residual contribution removed), so outputs for one
        example never depend on the rest of the batch.
        """
        if mode not in MODES:
            raise ValueError(f"unknown mode '{mode}'")
        b, n, d = x.shape
        if mask is None:
            mask = np.ones((b, n), dtype=np.float32)
        use_isa = mode == "pretrain"
        for layer in self.layers:
            x = layer(x, mask, use_isa)
        pooled = masked_mean(x, mask)
        return x, pooled


def masked_mean(tokens: Tensor, mask) -> Tensor:
    m = np.asarray(mask, dtype=np.float32)
    weights = m / np.maximum(m.sum(axis=1, keepdims=True), 1e-12)
    return (tokens * Tensor(weights[:, :, None])).sum(axis=1)

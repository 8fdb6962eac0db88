"""The spherical transformer classifier.

Patch embedding ``s0 = xE + E_pos``, ``L`` encoder layers of multi-head
self-attention and a feed-forward block, each behind a residual connection,
then layer norm, mean over the sequence and a linear classifier. No class
token unless ``use_cls_token`` is set for the ablation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class ModelConfig:
    num_patches: int
    patch_dim: int
    dim: int = 24
    layers: int = 8
    heads: int = 8
    ffn_hidden: int = 96
    dropout: float = 0.1
    num_classes: int = 10
    use_pos_embedding: bool = True
    use_cls_token: bool = False
    activation: str = "gelu"  # or "relu"
    ln_variant: str = "pre"  # "pre": LN inside the residual branch; "post": LN after the sum
    clf_order: str = "ln_mean"  # "ln_mean" or "mean_ln"
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"model dim {self.dim} not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.activation not in ("gelu", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.ln_variant not in ("pre", "post"):
            raise ValueError(f"unknown ln_variant {self.ln_variant!r}")
        if self.clf_order not in ("ln_mean", "mean_ln"):
            raise ValueError(f"unknown clf_order {self.clf_order!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def param_shapes(cfg: ModelConfig) -> dict:
    D, F = cfg.dim, cfg.ffn_hidden
    seq = cfg.num_patches + (1 if cfg.use_cls_token else 0)
    shapes = {"embed.E": (cfg.patch_dim, D)}
    if cfg.use_pos_embedding:
        shapes["embed.pos"] = (seq, D)
    if cfg.use_cls_token:
        shapes["embed.cls"] = (1, D)
    for i in range(cfg.layers):
        p = f"layers.{i}."
        for ln in ("ln1", "ln2"):
            shapes[p + ln + ".gain"] = (D,)
            shapes[p + ln + ".bias"] = (D,)
        for w in ("q", "k", "v", "o"):
            shapes[p + f"attn.W{w}"] = (D, D)
            shapes[p + f"attn.b{w}"] = (D,)
        shapes[p + "ffn.W1"] = (D, F)
        shapes[p + "ffn.b1"] = (F,)
        shapes[p + "ffn.W2"] = (F, D)
        shapes[p + "ffn.b2"] = (D,)
    shapes["norm.gain"] = (D,)
    shapes["norm.bias"] = (D,)
    shapes["head.W"] = (D, cfg.num_classes)
    shapes["head.b"] = (cfg.num_classes,)
    return shapes


def count_params(cfg: ModelConfig) -> int:
    """Closed form; equals the sum over :func:`param_shapes`."""
    D, F, C = cfg.dim, cfg.ffn_hidden, cfg.num_classes
    seq = cfg.num_patches + (1 if cfg.use_cls_token else 0)
    per_layer = 4 * (D * D + D) + (D * F + F) + (F * D + D) + 4 * D
    total = cfg.patch_dim * D + cfg.layers * per_layer + 2 * D + D * C + C
    if cfg.use_pos_embedding:
        total += seq * D
    if cfg.use_cls_token:
        total += D
    return total


def solve_ffn_hidden(cfg: ModelConfig, budget: int) -> int:
    """Feed-forward width whose closed-form parameter count lands closest to ``budget``."""
    base = count_params(_replace(cfg, ffn_hidden=0))
    per_unit = cfg.layers * (2 * cfg.dim + 1)
    return max(1, round((budget - base) / per_unit))


def _replace(cfg: ModelConfig, **kw) -> ModelConfig:
    d = cfg.to_dict()
    d.update(kw)
    return ModelConfig(**d)


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal truncated at two standard deviations, rescaled to standard deviation ``std``."""
    z = rng.standard_normal(shape)
    while np.any(bad := np.abs(z) > 2.0):
        z[bad] = rng.standard_normal(int(bad.sum()))
    return z * (std / _TRUNC2_STD)


# std of a standard normal truncated to [-2, 2]
_TRUNC2_STD = math.sqrt(1.0 - 4.0 * math.exp(-2.0) / math.sqrt(2.0 * math.pi) / math.erf(math.sqrt(2.0)))


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32,
                pos_std: float = 0.0) -> dict:
    """Truncated-normal weights, zero biases, unit LN gains.

    The positional embedding starts at zero unless ``pos_std`` is given.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "gain":
            val = np.ones(shape)
        elif leaf.startswith("b") or leaf == "bias":
            val = np.zeros(shape)
        elif leaf == "pos":
            val = truncated_normal(rng, shape, pos_std) if pos_std else np.zeros(shape)
        else:
            val = truncated_normal(rng, shape)
        params[name] = Tensor(val.astype(dtype), requires_grad=True, name=name)
    return params


def params_from_arrays(arrays: dict, dtype=np.float32) -> dict:
    return {k: Tensor(np.asarray(v, dtype=dtype), requires_grad=True, name=k)
            for k, v in arrays.items()}


def params_to_arrays(params: dict) -> dict:
    return {k: t.data for k, t in params.items()}


# ----------------------------------------------------------------------------


def embed(x, params: dict, cfg: ModelConfig) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if x.shape[-2:] != (cfg.num_patches, cfg.patch_dim):
        raise ad.ShapeError(
            f"input shape {x.shape} does not end in ({cfg.num_patches}, {cfg.patch_dim})")
    s = x @ params["embed.E"]
    if cfg.use_cls_token:
        lead = s.shape[:-2]
        cls = Tensor(np.zeros((*lead, 1, cfg.dim), dtype=s.dtype)) + params["embed.cls"]
        s = ad.concat([cls, s], axis=-2)
    if cfg.use_pos_embedding:
        s = s + params["embed.pos"]
    return s


def attention(u: Tensor, params: dict, prefix: str, heads: int) -> Tensor:
    """Multi-head scaled dot-product self-attention with output projection."""
    q = ad.split_heads(u @ params[prefix + "Wq"] + params[prefix + "bq"], heads)
    k = ad.split_heads(u @ params[prefix + "Wk"] + params[prefix + "bk"], heads)
    v = ad.split_heads(u @ params[prefix + "Wv"] + params[prefix + "bv"], heads)
    scores = ad.scale(q @ ad.transpose(k), 1.0 / math.sqrt(q.shape[-1]))
    ctx = ad.merge_heads(ad.softmax(scores) @ v)
    return ctx @ params[prefix + "Wo"] + params[prefix + "bo"]


def feed_forward(u: Tensor, params: dict, prefix: str, activation: str) -> Tensor:
    act = ad.gelu if activation == "gelu" else ad.relu
    h = act(u @ params[prefix + "W1"] + params[prefix + "b1"])
    return h @ params[prefix + "W2"] + params[prefix + "b2"]


def encoder_layer(s: Tensor, params: dict, cfg: ModelConfig, i: int, train: bool = False,
                  rng: Optional[np.random.Generator] = None) -> Tensor:
    p = f"layers.{i}."

    def ln(t, which):
        return ad.layer_norm(t, params[p + which + ".gain"], params[p + which + ".bias"],
                             cfg.ln_eps)

    drop = cfg.dropout
    if cfg.ln_variant == "pre":
        s1 = attention(ln(ad.dropout(s, drop, rng, train), "ln1"), params, p + "attn.",
                       cfg.heads) + s
        return feed_forward(ln(ad.dropout(s1, drop, rng, train), "ln2"), params, p + "ffn.",
                            cfg.activation) + s1
    s1 = ln(attention(ad.dropout(s, drop, rng, train), params, p + "attn.", cfg.heads) + s,
            "ln1")
    return ln(feed_forward(ad.dropout(s1, drop, rng, train), params, p + "ffn.",
                           cfg.activation) + s1, "ln2")


def encode(x, params: dict, cfg: ModelConfig, train: bool = False,
           rng: Optional[np.random.Generator] = None, layers: Optional[int] = None) -> Tensor:
    """Embedding followed by the encoder stack; ``layers`` truncates the stack."""
    s = embed(x, params, cfg)
    for i in range(cfg.layers if layers is None else layers):
        s = encoder_layer(s, params, cfg, i, train, rng)
    return s


def classify(s: Tensor, params: dict, cfg: ModelConfig) -> Tensor:
    def ln(t):
        return ad.layer_norm(t, params["norm.gain"], params["norm.bias"], cfg.ln_eps)

    if cfg.use_cls_token:
        pooled = ln(ad.getitem(s, (..., 0, slice(None))))
    elif cfg.clf_order == "ln_mean":
        pooled = ad.mean(ln(s), axis=-2)
    else:
        pooled = ln(ad.mean(s, axis=-2))
    if pooled.ndim == 1:
        row = ad.reshape(pooled, (1, cfg.dim)) @ params["head.W"] + params["head.b"]
        return ad.getitem(row, 0)
    return pooled @ params["head.W"] + params["head.b"]


def forward(x, params: dict, cfg: ModelConfig, train: bool = False,
            rng: Optional[np.random.Generator] = None) -> Tensor:
    """Logits of shape ``(num_classes,)`` or ``(B, num_classes)``."""
    return classify(encode(x, params, cfg, train, rng), params, cfg)


def loss(logits: Tensor, labels) -> Tensor:
    return ad.cross_entropy_with_logits(logits, labels)

"""Mini-batch training and evaluation of the classifier on dataset caches."""

from __future__ import annotations

import io
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .data.cache import DatasetCache
from .model import ModelConfig, forward, init_params, loss

log = logging.getLogger(__name__)

# attention scores held per forward chunk; bounds activation memory at large N
ATTENTION_BUDGET = 1 << 24


@dataclass
class TrainSettings:
    epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    dtype: str = "float32"
    eval_batch_size: int = 500
    attention_budget: int = ATTENTION_BUDGET


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    lr: float
    seconds: float


@dataclass
class TrainResult:
    config: ModelConfig
    params: dict
    history: list = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.history[-1].test_acc if self.history else float("nan")

    def history_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,train_loss,train_acc,test_loss,test_acc,lr\n")
        for r in self.history:
            buf.write(f"{r.epoch},{r.train_loss:.6f},{r.train_acc:.6f},"
                      f"{r.test_loss:.6f},{r.test_acc:.6f},{r.lr:.8g}\n")
        return buf.getvalue()


def chunk_size(cfg: ModelConfig, budget: int = ATTENTION_BUDGET) -> int:
    """Examples per forward pass so that ``heads * n * n`` scores stay within ``budget``."""
    n = cfg.num_patches + int(cfg.use_cls_token)
    return max(1, budget // (cfg.heads * n * n))


def model_config_for(cache: DatasetCache, **overrides) -> ModelConfig:
    N, width = cache.shape
    return ModelConfig(num_patches=N, patch_dim=width, **overrides)


def evaluate(params: dict, cfg: ModelConfig, cache: DatasetCache,
             batch_size: int = 500, dtype=np.float32,
             attention_budget: int = ATTENTION_BUDGET) -> tuple[float, float]:
    """Mean cross-entropy and top-1 accuracy over the whole cache."""
    batch_size = min(batch_size, chunk_size(cfg, attention_budget))
    total_loss, correct = 0.0, 0
    n = len(cache)
    with ad.no_grad():
        for start in range(0, n, batch_size):
            x = cache.values[start:start + batch_size].astype(dtype, copy=False)
            y = cache.labels[start:start + batch_size]
            logits = forward(x, params, cfg, train=False)
            total_loss += loss(logits, y).item() * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
    return total_loss / n, correct / n


def train(cfg: ModelConfig, train_set: DatasetCache, test_set: Optional[DatasetCache],
          settings: TrainSettings,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Adam with a per-step cosine schedule; fully determined by ``settings.seed``."""
    dtype = np.dtype(settings.dtype)
    params = init_params(cfg, settings.seed, dtype=dtype)
    state = ad.AdamState()
    shuffle_rng = np.random.default_rng([settings.seed, 1])
    drop_rng = np.random.default_rng([settings.seed, 2])
    n = len(train_set)
    steps_per_epoch = -(-n // settings.batch_size)
    total = steps_per_epoch * settings.epochs
    result = TrainResult(cfg, params)
    step = 0
    chunk = chunk_size(cfg, settings.attention_budget)
    for epoch in range(1, settings.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        run_loss, run_correct = 0.0, 0
        lr = settings.lr
        for start in range(0, n, settings.batch_size):
            idx = np.sort(order[start:start + settings.batch_size])
            for p in params.values():
                p.zero_grad()
            # micro-batches weighted by size accumulate the full-batch mean gradient
            for c in range(0, len(idx), chunk):
                sub = idx[c:c + chunk]
                x = train_set.values[sub].astype(dtype, copy=False)
                y = train_set.labels[sub]
                logits = forward(x, params, cfg, train=True, rng=drop_rng)
                part = loss(logits, y)
                (part if len(sub) == len(idx) else part * (len(sub) / len(idx))).backward()
                run_loss += part.item() * len(sub)
                run_correct += int((logits.data.argmax(axis=1) == y).sum())
            lr = ad.cosine_lr(step, total, settings.lr)
            ad.adam_step(params, state, lr)
            step += 1
        test_loss, test_acc = (evaluate(params, cfg, test_set, settings.eval_batch_size, dtype,
                                        settings.attention_budget)
                               if test_set is not None else (float("nan"), float("nan")))
        rec = EpochRecord(epoch, run_loss / n, run_correct / n, test_loss, test_acc, lr,
                          time.perf_counter() - t0)
        result.history.append(rec)
        log.info("epoch %d loss %.4f acc %.4f test_acc %.4f (%.1fs)", epoch, rec.train_loss,
                 rec.train_acc, rec.test_acc, rec.seconds)
        if on_epoch is not None:
            on_epoch(rec)
    return result

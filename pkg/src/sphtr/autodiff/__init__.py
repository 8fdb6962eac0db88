from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import AdamState, TrainingError, adam_step, cosine_lr
from .tensor import (ShapeError, Tensor, add, backward, concat, cross_entropy_with_logits,
                     dropout, gelu, getitem, layer_norm, matmul, mean, merge_heads, mul,
                     no_grad, relu, reshape, scale, softmax, split_heads, sum, tape,
                     transpose)

__all__ = [
    "AdamState", "CheckpointError", "ShapeError", "Tensor", "TrainingError", "adam_step",
    "add", "backward", "concat", "cosine_lr", "cross_entropy_with_logits", "dropout",
    "gelu", "getitem", "layer_norm", "load_checkpoint", "matmul", "mean", "merge_heads",
    "mul", "no_grad", "relu", "reshape", "save_checkpoint", "scale", "softmax",
    "split_heads", "sum", "tape", "transpose",
]

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Protocol

import numpy as np

from .errors import shape_mismatch, step_out_of_range

if TYPE_CHECKING:
    from numpy.typing import NDArray

    type Matrix = NDArray[np.float64]


class LrSchedule(Protocol):
    @property
    def total_steps(self) -> int: ...
    @property
    def warmup_frac(self) -> float: ...
    @property
    def lr_start(self) -> float: ...
    @property
    def lr_peak(self) -> float: ...
    @property
    def lr_end(self) -> float: ...


def warmup_steps(cfg: LrSchedule) -> int:
    return math.ceil(cfg.warmup_frac * cfg.total_steps)


def lr_at(step: int, cfg: LrSchedule) -> float:
    """Linear warm-up from ``lr_start`` to ``lr_peak``, then cosine decay to ``lr_end``."""
    total = cfg.total_steps
    if not 0 <= step <= total:
        raise step_out_of_range(step, total)
    warmup = warmup_steps(cfg)
    if step < warmup:
        return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * step / warmup
    span = total - warmup
    if span == 0:
        return cfg.lr_end
    progress = (step - warmup) / span
    return cfg.lr_end + 0.5 * (cfg.lr_peak - cfg.lr_end) * (1.0 + math.cos(math.pi * progress))


@dataclass(frozen=True, slots=True)
class AdamWParams:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.1


@dataclass(frozen=True, slots=True)
class Moments:
    """First and second moment estimates for one parameter matrix."""

    first: "Matrix"
    second: "Matrix"
    count: int = 0

    @classmethod
    def zeros_like(cls, param: "Matrix") -> "Moments":
        return cls(first=np.zeros_like(param), second=np.zeros_like(param))


def adamw_step(
    param: "Matrix",
    grad: "Matrix",
    moments: Moments,
    lr: float,
    hp: AdamWParams,
) -> "tuple[Matrix, Moments]":
    """One AdamW update with decoupled weight decay and bias correction."""
    if grad.shape != param.shape:
        raise shape_mismatch("Gradient", param.shape, grad.shape)
    if moments.first.shape != param.shape:
        raise shape_mismatch("Optimizer moments", param.shape, moments.first.shape)

    count = moments.count + 1
    first = hp.beta1 * moments.first + (1.0 - hp.beta1) * grad
    second = hp.beta2 * moments.second + (1.0 - hp.beta2) * grad * grad
    first_hat = first / (1.0 - hp.beta1**count)
    second_hat = second / (1.0 - hp.beta2**count)
    decayed = param * (1.0 - lr * hp.weight_decay)
    updated = decayed - lr * first_hat / (np.sqrt(second_hat) + hp.eps)
    return updated, Moments(first=first, second=second, count=count)

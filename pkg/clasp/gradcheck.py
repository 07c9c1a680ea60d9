"""Central finite-difference checks for every analytic gradient."""

import logging
from dataclasses import dataclass, field
from itertools import product
from typing import TYPE_CHECKING

import numpy as np

from .encoders import ToyImageEncoder, ToyTextEncoder
from .errors import gradient_check_failed
from .losses import (
    EmbeddingBatch,
    LossOutput,
    clic_total,
    clip_loss,
    multi_positive_clip_loss,
    negclip_batch_loss,
    single_neg_loss,
    uni_modal_loss,
)

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from numpy.typing import NDArray

    type Matrix = NDArray[np.float64]
    type LossCase = Callable[[Sequence[Matrix], float], LossOutput]

logger = logging.getLogger(__name__)

STEP = 1e-5
THRESHOLD = 1e-6
DIMS = (4, 8, 16)
BATCH_SIZES = (1, 2, 5)

_TOY_WORDS = ("red", "blue", "ball", "cube", "the", "and", "a", "is")


def central_difference(
    f: "Callable[[Matrix], float]", x: "Matrix", h: float = STEP
) -> "Matrix":
    """Numerical gradient of scalar ``f`` at ``x``, one entry at a time."""
    grad = np.zeros_like(x)
    probe = x.copy()
    for index in np.ndindex(x.shape):
        original = probe[index]
        probe[index] = original + h
        upper = f(probe)
        probe[index] = original - h
        lower = f(probe)
        probe[index] = original
        grad[index] = (upper - lower) / (2 * h)
    return grad


def relative_error(analytic: "Matrix", numeric: "Matrix") -> float:
    scale = max(float(np.linalg.norm(analytic) + np.linalg.norm(numeric)), 1e-8)
    return float(np.linalg.norm(analytic - numeric)) / scale


def check_gradients(
    fn: "Callable[[Sequence[Matrix]], LossOutput]",
    args: "Sequence[Matrix]",
    h: float = STEP,
) -> float:
    """Worst relative error over every argument of ``fn``."""
    analytic = fn(args).grads
    worst = 0.0
    for position, arg in enumerate(args):

        def value(x: "Matrix", position: int = position) -> float:
            probe = list(args)
            probe[position] = x
            return fn(probe).value

        numeric = central_difference(value, arg, h)
        worst = max(worst, relative_error(analytic[position], numeric))
    return worst


def _unit_rows(rng: np.random.Generator, m: int, d: int) -> "Matrix":
    rows = rng.normal(size=(m, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


LOSS_CASES: "dict[str, tuple[int, LossCase]]" = {
    "clip": (2, lambda a, tau: clip_loss(a[0], a[1], tau, validate=False)),
    "multi_positive_clip": (
        5,
        lambda a, tau: multi_positive_clip_loss(a[0], a[1:], tau, validate=False),
    ),
    "negclip_batch": (
        3,
        lambda a, tau: negclip_batch_loss(a[0], a[1], a[2], tau, validate=False),
    ),
    "negclip_batch_symmetric": (
        3,
        lambda a, tau: negclip_batch_loss(
            a[0], a[1], a[2], tau, text_to_image=True, validate=False
        ),
    ),
    "single_neg": (
        3,
        lambda a, tau: single_neg_loss(a[0], [a[1]], a[2], tau, validate=False),
    ),
    "single_neg_multi": (
        6,
        lambda a, tau: single_neg_loss(a[0], a[1:5], a[5], tau, validate=False),
    ),
    "uni_modal": (2, lambda a, tau: uni_modal_loss(a[0], a[1], validate=False)),
    "clic_total": (
        6,
        lambda a, tau: clic_total(
            EmbeddingBatch(a[0], tuple(a[1:5]), a[5], tau, validate=False)
        ),
    ),
}


def _encoder_error(rng: np.random.Generator, m: int, d: int, h: float) -> float:
    """Check the full clic_total gradient through both normalized linear encoders."""
    n_texts = 5 * m
    texts = [
        " ".join(rng.choice(_TOY_WORDS, size=int(rng.integers(2, 6))))
        for _ in range(n_texts)
    ]
    text = ToyTextEncoder.initialize(texts, d, rng)
    image = ToyImageEncoder.initialize(6, d, rng)
    features = rng.normal(size=(m, 12))
    tau = float(rng.uniform(0.5, 3.0))

    def fn(args: "Sequence[Matrix]") -> LossOutput:
        text_enc = ToyTextEncoder(text.vocab, args[0])
        image_enc = ToyImageEncoder(args[1])
        text_cache = text_enc.forward(texts)
        image_cache = image_enc.forward(features)
        blocks = np.split(text_cache.output, 5)
        out = clic_total(EmbeddingBatch(image_cache.output, tuple(blocks[:4]), blocks[4], tau))
        grads = (
            text_enc.backward(text_cache, np.concatenate(out.grads[1:])),
            image_enc.backward(image_cache, out.grads[0]),
        )
        return LossOutput(value=out.value, grads=grads)

    return check_gradients(fn, [text.weights, image.weights], h)


@dataclass(slots=True)
class GradcheckReport:
    worst: dict[str, float] = field(default_factory=dict)
    instances: dict[str, int] = field(default_factory=dict)
    threshold: float = THRESHOLD

    def record(self, name: str, error: float) -> None:
        self.worst[name] = max(self.worst.get(name, 0.0), error)
        self.instances[name] = self.instances.get(name, 0) + 1

    @property
    def failures(self) -> dict[str, float]:
        return {n: e for n, e in self.worst.items() if not e < self.threshold}

    @property
    def passed(self) -> bool:
        return not self.failures

    def raise_on_failure(self) -> None:
        for name, error in sorted(self.failures.items()):
            raise gradient_check_failed(name, error, self.threshold)

    def render(self) -> str:
        width = max(map(len, self.worst), default=0)
        lines = [
            f"{name.ljust(width)}  n={self.instances[name]:<4d} worst={error:.2e}  "
            f"{'ok' if error < self.threshold else 'FAIL'}"
            for name, error in sorted(self.worst.items())
        ]
        return "\n".join(lines) + "\n"


def run_suite(
    seed: int = 0,
    *,
    repeats: int = 12,
    dims: "Sequence[int]" = DIMS,
    batch_sizes: "Sequence[int]" = BATCH_SIZES,
    losses: "Sequence[str] | None" = None,
    include_encoders: bool = True,
    h: float = STEP,
) -> GradcheckReport:
    """Check every loss on ``repeats`` random instances per ``(d, m)`` combination.

    The encoder chain is checked once per combination.
    """
    rng = np.random.default_rng(seed)
    report = GradcheckReport()
    names = list(LOSS_CASES) if losses is None else list(losses)
    for d, m in product(dims, batch_sizes):
        for _ in range(repeats):
            tau = float(rng.uniform(0.5, 3.0))
            for name in names:
                n_args, case = LOSS_CASES[name]
                args = [_unit_rows(rng, m, d) for _ in range(n_args)]
                report.record(
                    name, check_gradients(lambda a, c=case, t=tau: c(a, t), args, h)
                )
        if include_encoders:
            report.record("encoders_end_to_end", _encoder_error(rng, m, d, h))
    logger.info("Gradient suite: %s", "passed" if report.passed else "FAILED")
    return report

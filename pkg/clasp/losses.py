"""Contrastive, hard-negative and uni-modal losses with analytic gradients.

Every loss takes row-normalized embedding matrices and returns a `LossOutput`
whose gradients are with respect to those matrices, in argument order. Inner
products are scaled by a fixed temperature ``tau``.
"""

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import non_finite, not_normalized, shape_mismatch

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    type Matrix = NDArray[np.float64]

UNIT_TOLERANCE = 1e-9
SINGULAR_DISTANCE = 1e-12


@dataclass(frozen=True, slots=True)
class LossWeights:
    lambda_cont: float = 0.5
    lambda_sneg: float = 0.5
    lambda_uni: float = 1.0

    def __post_init__(self) -> None:
        weights = (self.lambda_cont, self.lambda_sneg, self.lambda_uni)
        if any(weight < 0 for weight in weights):
            raise ValueError("Loss weights must be non-negative.")
        if not any(weight > 0 for weight in weights):
            raise ValueError("At least one loss weight must be positive.")


@dataclass(frozen=True, slots=True)
class LossOutput:
    value: float
    grads: "tuple[Matrix, ...]"
    parts: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not np.isfinite(self.value):
            raise non_finite("Loss value")
        for grad in self.grads:
            if not np.all(np.isfinite(grad)):
                raise non_finite("Loss gradient")


@dataclass(frozen=True, slots=True)
class EmbeddingBatch:
    """Image rows plus one matrix per positive caption and an optional negative."""

    image: "Matrix"
    positives: "tuple[Matrix, ...]"
    negative: "Matrix | None" = None
    temperature: float = 1.0
    validate: bool = field(default=True, repr=False, compare=False)
    """Whether rows must be unit-norm; finite-difference probes switch this off."""

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("Temperature must be positive.")
        if not self.positives:
            raise ValueError("An embedding batch needs at least one positive matrix.")
        texts = [(f"positive {k + 1}", pos) for k, pos in enumerate(self.positives)]
        if self.negative is not None:
            texts.append(("negative", self.negative))
        _validate(self.validate, self.image, texts)

    @property
    def batch_size(self) -> int:
        return int(self.image.shape[0])


def _check_shape(what: str, matrix: "Matrix", shape: "tuple[int, ...] | None") -> None:
    if matrix.ndim != 2 or matrix.shape[0] < 1:  # noqa: PLR2004
        raise shape_mismatch(what, shape or (-1, -1), matrix.shape)
    if shape is not None and matrix.shape != shape:
        raise shape_mismatch(what, shape, matrix.shape)


def _check_rows(what: str, matrix: "Matrix", shape: "tuple[int, ...] | None") -> None:
    _check_shape(what, matrix, shape)
    if not np.all(np.isfinite(matrix)):
        raise non_finite(what)
    deviation = float(np.max(np.abs(np.linalg.norm(matrix, axis=1) - 1.0)))
    if deviation > UNIT_TOLERANCE:
        raise not_normalized(what, deviation)


def _validate(
    validate: bool, image: "Matrix", texts: "Sequence[tuple[str, Matrix]]"
) -> None:
    check = _check_rows if validate else _check_shape
    check("image", image, None)
    for what, text in texts:
        check(what, text, image.shape)


def _log_softmax(logits: "Matrix") -> "Matrix":
    """Row-wise log-softmax with the row maximum subtracted first."""
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def clip_loss(
    img: "Matrix", txt: "Matrix", tau: float = 1.0, *, validate: bool = True
) -> LossOutput:
    """Symmetric image-text cross-entropy averaged over both directions."""
    _validate(validate, img, [("text", txt)])
    m = img.shape[0]
    logits = tau * (img @ txt.T)
    log_rows = _log_softmax(logits)
    log_cols = _log_softmax(logits.T)
    value = -(float(np.trace(log_rows)) + float(np.trace(log_cols))) / (2 * m)

    eye = np.eye(m)
    coeff = (np.exp(log_rows) - eye) + (np.exp(log_cols).T - eye)
    coeff /= 2 * m
    grad_img = tau * (coeff @ txt)
    grad_txt = tau * (coeff.T @ img)
    return LossOutput(value=value, grads=(grad_img, grad_txt), parts={"cont": value})


def multi_positive_clip_loss(
    img: "Matrix",
    positives: "Sequence[Matrix]",
    tau: float = 1.0,
    *,
    validate: bool = True,
) -> LossOutput:
    """Mean of `clip_loss` over each positive caption matrix."""
    if not positives:
        raise ValueError("At least one positive matrix is required.")
    n_pos = len(positives)
    outputs = [clip_loss(img, txt, tau, validate=validate) for txt in positives]
    value = sum(out.value for out in outputs) / n_pos
    grad_img = sum((out.grads[0] for out in outputs), np.zeros_like(img)) / n_pos
    grads = (grad_img, *(out.grads[1] / n_pos for out in outputs))
    return LossOutput(value=value, grads=grads, parts={"cont": value})


def negclip_batch_loss(
    img: "Matrix",
    txt: "Matrix",
    txt_neg: "Matrix",
    tau: float = 1.0,
    *,
    text_to_image: bool = False,
    validate: bool = True,
) -> LossOutput:
    """Image-to-text cross-entropy over the batch captions and all hard negatives.

    The sum is scaled by ``1/(2m)``. With ``text_to_image`` the plain
    text-to-image term is added under the same coefficient.
    """
    _validate(validate, img, [("text", txt), ("negative", txt_neg)])
    m = img.shape[0]
    logits = tau * np.concatenate((img @ txt.T, img @ txt_neg.T), axis=1)
    log_rows = _log_softmax(logits)
    total = -float(np.trace(log_rows[:, :m]))

    coeff = np.exp(log_rows)
    coeff[:, :m] -= np.eye(m)
    coeff_pos = coeff[:, :m]
    coeff_neg = coeff[:, m:]
    if text_to_image:
        log_cols = _log_softmax(logits[:, :m].T)
        total -= float(np.trace(log_cols))
        coeff_pos = coeff_pos + (np.exp(log_cols).T - np.eye(m))

    scale = 1.0 / (2 * m)
    value = total * scale
    coeff_pos = coeff_pos * scale
    coeff_neg = coeff_neg * scale
    grad_img = tau * (coeff_pos @ txt + coeff_neg @ txt_neg)
    grad_txt = tau * (coeff_pos.T @ img)
    grad_neg = tau * (coeff_neg.T @ img)
    return LossOutput(
        value=value, grads=(grad_img, grad_txt, grad_neg), parts={"cont": value}
    )


def _single_neg_one(
    img: "Matrix", pos: "Matrix", neg_sims: "NDArray[np.float64]", tau: float
) -> "tuple[float, NDArray[np.float64]]":
    margin = neg_sims - tau * np.einsum("ij,ij->i", img, pos)
    terms = np.logaddexp(0.0, margin)
    weight = np.exp(-np.logaddexp(0.0, -margin))  # sigmoid(margin)
    return float(np.sum(terms)) / img.shape[0], weight


def single_neg_loss(
    img: "Matrix",
    txt_pos: "Sequence[Matrix]",
    txt_neg: "Matrix",
    tau: float = 1.0,
    *,
    validate: bool = True,
) -> LossOutput:
    """Two-way softmax of each positive against the example's own hard negative.

    With one positive this is the single-negative loss; with several, each
    positive contributes its own term and the result is their mean.
    """
    if not txt_pos:
        raise ValueError("At least one positive matrix is required.")
    _validate(
        validate,
        img,
        [*((f"positive {k + 1}", pos) for k, pos in enumerate(txt_pos)), ("negative", txt_neg)],
    )
    m = img.shape[0]
    n_pos = len(txt_pos)
    neg_sims = tau * np.einsum("ij,ij->i", img, txt_neg)

    values: list[float] = []
    grad_img = np.zeros_like(img)
    grad_neg = np.zeros_like(txt_neg)
    grad_pos: list[Matrix] = []
    scale = tau / (n_pos * m)
    for pos in txt_pos:
        value, weight = _single_neg_one(img, pos, neg_sims, tau)
        values.append(value)
        coeff = (scale * weight)[:, np.newaxis]
        grad_img += coeff * (txt_neg - pos)
        grad_neg += coeff * img
        grad_pos.append(-coeff * img)
    value = sum(values) / n_pos
    return LossOutput(
        value=value, grads=(grad_img, *grad_pos, grad_neg), parts={"sneg": value}
    )


def uni_modal_loss(
    p1: "Matrix", p2: "Matrix", *, validate: bool = True
) -> LossOutput:
    """Mean Euclidean distance between a caption and its reordered paraphrase."""
    _validate(validate, p1, [("second positive", p2)])
    m = p1.shape[0]
    diff = p1 - p2
    dist = np.linalg.norm(diff, axis=1)
    value = float(np.sum(dist)) / m
    safe = np.where(dist < SINGULAR_DISTANCE, np.inf, dist)
    grad_p1 = diff / (safe[:, np.newaxis] * m)
    return LossOutput(value=value, grads=(grad_p1, -grad_p1), parts={"uni": value})


def clic_total(
    batch: EmbeddingBatch,
    weights: LossWeights | None = None,
) -> LossOutput:
    """Weighted sum of the multi-positive, hard-negative and uni-modal terms.

    Gradients are returned for the image, each positive and, when present, the
    negative. A term whose weight is zero is skipped.
    """
    weights = weights or LossWeights()
    positives = batch.positives
    n_pos = len(positives)
    if n_pos < 2 and weights.lambda_uni > 0:  # noqa: PLR2004
        raise ValueError("The uni-modal term needs at least two positives.")
    if batch.negative is None and weights.lambda_sneg > 0:
        raise ValueError("The hard-negative term needs a negative matrix.")

    # Rows were checked when the batch was built.
    tau = batch.temperature
    grad_img = np.zeros_like(batch.image)
    grad_pos = [np.zeros_like(pos) for pos in positives]
    grad_neg = None if batch.negative is None else np.zeros_like(batch.negative)
    parts = {"cont": 0.0, "sneg": 0.0, "uni": 0.0}
    value = 0.0

    if weights.lambda_cont > 0:
        cont = multi_positive_clip_loss(batch.image, positives, tau, validate=False)
        parts["cont"] = cont.value
        value += weights.lambda_cont * cont.value
        grad_img += weights.lambda_cont * cont.grads[0]
        for k in range(n_pos):
            grad_pos[k] += weights.lambda_cont * cont.grads[1 + k]

    if weights.lambda_sneg > 0:
        assert batch.negative is not None and grad_neg is not None
        sneg = single_neg_loss(
            batch.image, positives, batch.negative, tau, validate=False
        )
        parts["sneg"] = sneg.value
        value += weights.lambda_sneg * sneg.value
        grad_img += weights.lambda_sneg * sneg.grads[0]
        for k in range(n_pos):
            grad_pos[k] += weights.lambda_sneg * sneg.grads[1 + k]
        grad_neg += weights.lambda_sneg * sneg.grads[-1]

    if weights.lambda_uni > 0:
        uni = uni_modal_loss(positives[0], positives[1], validate=False)
        parts["uni"] = uni.value
        value += weights.lambda_uni * uni.value
        grad_pos[0] += weights.lambda_uni * uni.grads[0]
        grad_pos[1] += weights.lambda_uni * uni.grads[1]

    grads = (grad_img, *grad_pos) if grad_neg is None else (grad_img, *grad_pos, grad_neg)
    return LossOutput(value=value, grads=grads, parts=parts)

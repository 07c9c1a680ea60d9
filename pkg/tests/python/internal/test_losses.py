"""Value tests for the contrastive, hard-negative and uni-modal losses."""

import math

import numpy as np
import pytest

from clasp.errors import NonFiniteError, NotNormalized, ShapeMismatch
from clasp.losses import (
    EmbeddingBatch,
    LossOutput,
    LossWeights,
    clic_total,
    clip_loss,
    multi_positive_clip_loss,
    negclip_batch_loss,
    single_neg_loss,
    uni_modal_loss,
)

E1, E2, E3 = np.eye(3)


def _rows(*vectors):
    return np.array(vectors, dtype=np.float64)


def _reference_total(img, positives, neg, tau, weights):
    """Straight-from-formula loops, independent of the vectorised code."""
    m, n_pos = img.shape[0], len(positives)

    def dot(a, b):
        return sum(x * y for x, y in zip(a, b, strict=True))

    cont = 0.0
    for pos in positives:
        for i in range(m):
            row = [tau * dot(img[i], pos[j]) for j in range(m)]
            col = [tau * dot(img[j], pos[i]) for j in range(m)]
            cont -= row[i] - math.log(sum(math.exp(v) for v in row))
            cont -= col[i] - math.log(sum(math.exp(v) for v in col))
    cont /= 2 * m * n_pos

    sneg = 0.0
    for pos in positives:
        for i in range(m):
            p, n = tau * dot(img[i], pos[i]), tau * dot(img[i], neg[i])
            sneg += math.log(1 + math.exp(n - p))
    sneg /= m * n_pos

    uni = sum(
        math.sqrt(sum((a - b) ** 2 for a, b in zip(positives[0][i], positives[1][i], strict=True)))
        for i in range(m)
    ) / m
    return weights.lambda_cont * cont + weights.lambda_sneg * sneg + weights.lambda_uni * uni


def test_clip_loss_is_zero_for_a_single_pair(rng, unit_rows):
    """Ensures a one-element softmax has zero loss and zero gradient."""
    out = clip_loss(unit_rows(rng, 1, 4), unit_rows(rng, 1, 4))
    assert out.value == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(out.grads[0], 0.0)


def test_clip_loss_matches_hand_evaluation():
    """Ensures two orthonormal matched pairs give log(1 + e^-1)."""
    basis = _rows((1, 0), (0, 1))
    out = clip_loss(basis, basis, 1.0)
    assert out.value == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
    assert out.value == pytest.approx(0.313262, abs=1e-6)
    assert out.parts == {"cont": out.value}


def test_clip_loss_is_symmetric_in_its_arguments(rng, unit_rows):
    """Ensures swapping the towers leaves the symmetric loss unchanged."""
    img, txt = unit_rows(rng, 5, 8), unit_rows(rng, 5, 8)
    assert clip_loss(img, txt, 2.0).value == pytest.approx(clip_loss(txt, img, 2.0).value)


def test_losses_validate_their_inputs(rng, unit_rows):
    """Ensures non-unit rows and mismatched shapes are rejected."""
    img = unit_rows(rng, 2, 4)
    with pytest.raises(NotNormalized):
        clip_loss(img, 2 * img)
    with pytest.raises(ShapeMismatch):
        clip_loss(img, unit_rows(rng, 3, 4))
    with pytest.raises(ShapeMismatch):
        clip_loss(np.ones(4), np.ones(4), validate=False)
    with pytest.raises(NonFiniteError):
        clip_loss(img, np.full((2, 4), np.nan))


def test_negclip_balanced_single_row_is_half_log_two():
    """Ensures equal positive and negative similarity gives half of log 2."""
    out = negclip_batch_loss(_rows(E1), _rows(E2), _rows(E3), 1.0)
    assert out.value == pytest.approx(0.5 * math.log(2), abs=1e-12)
    assert out.value == pytest.approx(0.346574, abs=1e-6)


def test_negclip_with_orthogonal_negatives_approaches_the_image_to_text_half():
    """Ensures far-off negatives leave only the image-to-text cross-entropy."""
    basis = _rows(E1, E2)
    far = _rows(E3, E3)
    tau = 50.0
    logits = tau * basis @ basis.T
    direct = -sum(
        logits[i, i] - math.log(sum(math.exp(v) for v in logits[i])) for i in range(2)
    ) / 4
    out = negclip_batch_loss(basis, basis, far, tau)
    assert out.value == pytest.approx(direct, abs=1e-12)


def test_negclip_symmetric_variant_adds_the_text_to_image_term(rng, unit_rows):
    """Ensures the symmetric variant adds a non-negative text-to-image term."""
    img, txt, neg = (unit_rows(rng, 4, 6) for _ in range(3))
    plain = negclip_batch_loss(img, txt, neg)
    both = negclip_batch_loss(img, txt, neg, text_to_image=True)
    assert both.value > plain.value
    assert len(both.grads) == 3


def test_single_neg_loss_balanced_and_separated():
    """Ensures equal similarities give log 2 and a +1/-1 split gives log(1 + e^-2)."""
    balanced = single_neg_loss(_rows(E1), [_rows(E2)], _rows(E3), 1.0)
    assert balanced.value == pytest.approx(math.log(2), abs=1e-12)
    separated = single_neg_loss(_rows(E1), [_rows(E1)], _rows(-E1), 1.0)
    assert separated.value == pytest.approx(math.log(1 + math.exp(-2)), abs=1e-12)
    assert separated.value == pytest.approx(0.126928, abs=1e-6)


def test_single_neg_loss_over_many_positives_is_their_mean(rng, unit_rows):
    """Ensures L positives give the mean of L single-positive losses."""
    img, neg = unit_rows(rng, 3, 5), unit_rows(rng, 3, 5)
    positives = [unit_rows(rng, 3, 5) for _ in range(4)]
    combined = single_neg_loss(img, positives, neg, 1.5)
    singles = [single_neg_loss(img, [pos], neg, 1.5) for pos in positives]
    assert combined.value == pytest.approx(np.mean([s.value for s in singles]), abs=1e-12)
    mean_img_grad = np.mean([s.grads[0] for s in singles], axis=0)
    assert np.allclose(combined.grads[0], mean_img_grad, atol=1e-12)
    with pytest.raises(ValueError, match="positive"):
        single_neg_loss(img, [], neg)


def test_uni_modal_loss_distance_and_singular_gradient():
    """Ensures identical rows give zero loss and gradient, orthonormal rows give sqrt 2."""
    same = uni_modal_loss(_rows(E1), _rows(E1))
    assert same.value == 0.0
    assert np.all(same.grads[0] == 0.0)
    apart = uni_modal_loss(_rows(E1), _rows(E2))
    assert apart.value == pytest.approx(math.sqrt(2), abs=1e-12)


def test_clic_total_reduces_to_clip_with_identical_positives(rng, unit_rows):
    """Ensures contrastive-only weights on identical positives equal clip_loss."""
    img, txt = unit_rows(rng, 4, 6), unit_rows(rng, 4, 6)
    batch = EmbeddingBatch(img, (txt, txt, txt, txt), temperature=2.0)
    total = clic_total(batch, LossWeights(1.0, 0.0, 0.0))
    assert total.value == pytest.approx(clip_loss(img, txt, 2.0).value, abs=1e-12)
    assert len(total.grads) == 5


def test_clic_total_reduces_to_uni_modal(rng, unit_rows):
    """Ensures uni-only weights equal the uni-modal loss of the first two positives."""
    img = unit_rows(rng, 3, 4)
    p1, p2 = unit_rows(rng, 3, 4), unit_rows(rng, 3, 4)
    total = clic_total(EmbeddingBatch(img, (p1, p2)), LossWeights(0.0, 0.0, 1.0))
    assert total.value == pytest.approx(uni_modal_loss(p1, p2).value, abs=1e-12)
    assert total.parts["cont"] == total.parts["sneg"] == 0.0


def test_clic_total_matches_a_loop_reference():
    """Ensures default weights agree with a direct loop evaluation on a fixed batch."""
    rng = np.random.default_rng(2024)

    def unit(m, d):
        rows = rng.normal(size=(m, d))
        return rows / np.linalg.norm(rows, axis=1, keepdims=True)

    img = unit(3, 4)
    positives = tuple(unit(3, 4) for _ in range(4))
    neg = unit(3, 4)
    total = clic_total(EmbeddingBatch(img, positives, neg, temperature=1.7))
    expected = _reference_total(img, positives, neg, 1.7, LossWeights())
    assert total.value == pytest.approx(expected, abs=1e-10)
    assert set(total.parts) == {"cont", "sneg", "uni"}


def test_clic_total_needs_its_inputs(rng, unit_rows):
    """Ensures enabled terms require the matrices they consume."""
    img, txt = unit_rows(rng, 2, 3), unit_rows(rng, 2, 3)
    with pytest.raises(ValueError, match="two positives"):
        clic_total(EmbeddingBatch(img, (txt,), txt))
    with pytest.raises(ValueError, match="negative"):
        clic_total(EmbeddingBatch(img, (txt, txt)))
    out = clic_total(EmbeddingBatch(img, (txt,)), LossWeights(1.0, 0.0, 0.0))
    assert len(out.grads) == 2


def test_embedding_batch_and_weights_validate():
    """Ensures batches and weights reject impossible settings."""
    img = _rows(E1)
    with pytest.raises(ValueError, match="Temperature"):
        EmbeddingBatch(img, (img,), temperature=0.0)
    with pytest.raises(ValueError, match="at least one positive"):
        EmbeddingBatch(img, ())
    with pytest.raises(NotNormalized):
        EmbeddingBatch(img, (2 * img,))
    with pytest.raises(ValueError, match="non-negative"):
        LossWeights(-1.0, 1.0, 1.0)
    with pytest.raises(ValueError, match="positive"):
        LossWeights(0.0, 0.0, 0.0)


def test_loss_output_rejects_non_finite_values():
    """Ensures NaN values or gradients abort as numeric errors."""
    with pytest.raises(NonFiniteError):
        LossOutput(value=float("nan"), grads=())
    with pytest.raises(NonFiniteError):
        LossOutput(value=0.0, grads=(np.array([np.inf]),))


def test_multi_positive_needs_a_positive(rng, unit_rows):
    """Ensures the multi-positive and single-negative losses refuse an empty list."""
    img = unit_rows(rng, 2, 3)
    with pytest.raises(ValueError, match="positive"):
        multi_positive_clip_loss(img, [])
    with pytest.raises(ValueError, match="positive"):
        single_neg_loss(img, [], unit_rows(rng, 2, 3))


def test_clic_total_is_equivariant_under_batch_permutation(rng, unit_rows):
    """Ensures permuting the batch rows permutes the gradients and keeps the value."""
    m, d = 5, 6
    batch = EmbeddingBatch(
        unit_rows(rng, m, d),
        tuple(unit_rows(rng, m, d) for _ in range(3)),
        unit_rows(rng, m, d),
        temperature=4.0,
    )
    order = rng.permutation(m)
    shuffled = EmbeddingBatch(
        batch.image[order],
        tuple(pos[order] for pos in batch.positives),
        batch.negative[order],
        temperature=4.0,
    )
    out, out_shuffled = clic_total(batch), clic_total(shuffled)
    assert out_shuffled.value == pytest.approx(out.value, rel=1e-12)
    for grad, grad_shuffled in zip(out.grads, out_shuffled.grads, strict=True):
        np.testing.assert_allclose(grad_shuffled, grad[order], rtol=1e-10, atol=1e-14)


def test_single_neg_loss_grows_with_negative_similarity():
    """Ensures moving the negative toward the image never lowers the loss."""
    img = _rows(E1)
    pos = _rows(E2 * 0.6 + E1 * 0.8)
    values = []
    for sim in np.linspace(-0.9, 0.9, 7):
        neg = _rows(E1 * sim + E3 * math.sqrt(1 - sim * sim))
        values.append(single_neg_loss(img, [pos], neg).value)
    assert all(a < b for a, b in zip(values, values[1:], strict=False))

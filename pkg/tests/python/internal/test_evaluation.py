"""Scorer, recall and report tests for clasp.evaluation."""

import json
import math

import numpy as np
import pytest

from clasp.encoders import EncoderPair, ToyImageEncoder, ToyTextEncoder
from clasp.errors import EmptySuite, KOutOfRange, NotNormalized, ShapeMismatch
from clasp.evaluation import (
    CategoryScore,
    EvalQuadruple,
    EvalSuite,
    Report,
    RetrievalSet,
    WinoGroundItem,
    _averages,
    evaluate_suite,
    recall_at_k,
    score_quadruples,
    sugarcrepe_itt,
    sugarcrepepp_itt,
    sugarcrepepp_tot,
    winoground_scores,
)
from clasp.toyworld import oracle_encoders, world_texts


def _axis(k: int, d: int = 6) -> np.ndarray:
    vector = np.zeros(d)
    vector[k] = 1.0
    return vector


def _toward_image(sim: float, axis: int) -> np.ndarray:
    """A unit vector with similarity ``sim`` to axis 0, its remainder on ``axis``."""
    return sim * _axis(0) + math.sqrt(1 - sim * sim) * _axis(axis)


def _quad(p1: float, p2: float, n: float) -> EvalQuadruple:
    return EvalQuadruple(
        _axis(0), _toward_image(p1, 1), _toward_image(p2, 2), _toward_image(n, 3)
    )


def _from_gram(gram: list[list[float]]) -> np.ndarray:
    return np.linalg.cholesky(np.array(gram))


@pytest.mark.parametrize(
    ("p1", "n", "expected"), [(0.8, 0.5, True), (0.5, 0.5, False), (0.4, 0.6, False)]
)
def test_sugarcrepe_itt(p1, n, expected):
    """Ensures the positive must beat the negative strictly."""
    assert sugarcrepe_itt(_quad(p1, 0.0, n)) is expected


@pytest.mark.parametrize(
    ("sims", "expected"),
    [((0.8, 0.7, 0.5), True), ((0.8, 0.4, 0.5), False), ((0.4, 0.7, 0.5), False)],
)
def test_sugarcrepepp_itt(sims, expected):
    """Ensures both positives must beat the negative."""
    assert sugarcrepepp_itt(_quad(*sims)) is expected


def test_sugarcrepepp_tot_rules():
    """Ensures the positives must be closer to each other than either is to the negative."""
    image = _axis(0, 3)
    e1, _, e3 = np.eye(3)
    assert sugarcrepepp_tot(EvalQuadruple(image, e1, e1, e3))
    assert not sugarcrepepp_tot(EvalQuadruple(image, e1, e3, e3))
    p1, p2, n = _from_gram([[1, 0.5, 0.2], [0.5, 1, 0.6], [0.2, 0.6, 1]])
    assert not sugarcrepepp_tot(EvalQuadruple(image, p1, p2, n))


def test_winoground_verdicts():
    """Ensures matched, identical and swapped pairs give the documented verdicts."""
    e1, e2 = _axis(0), _axis(1)
    assert tuple(winoground_scores(WinoGroundItem(e1, e2, e1, e2))) == (True, True, True)
    assert tuple(winoground_scores(WinoGroundItem(e1, e1, e1, e1))) == (False, False, False)
    assert tuple(winoground_scores(WinoGroundItem(e2, e1, e1, e2))) == (False, False, False)


def test_scorer_inputs_must_be_unit_vectors():
    """Ensures non-normalized embeddings are rejected."""
    with pytest.raises(NotNormalized):
        EvalQuadruple(2 * _axis(0), _axis(1), _axis(2), _axis(3))


def test_random_embeddings_score_at_chance():
    """Ensures i.i.d. random embeddings pass ITT half the time and ITT++ a third."""
    rng = np.random.default_rng(0)
    vectors = rng.normal(size=(10_000, 4, 64))
    vectors /= np.linalg.norm(vectors, axis=2, keepdims=True)
    quads = [("random", EvalQuadruple(*rows)) for rows in vectors]
    score = score_quadruples(quads)["random"]
    assert score.itt == pytest.approx(0.5, abs=0.03)
    assert score.itt_pp == pytest.approx(1 / 3, abs=0.03)


def test_recall_at_k_examples():
    """Ensures diagonal gold scores 1, reversed gold scores 0 and ties favour low columns."""
    sim = np.eye(4)
    assert recall_at_k(sim, [0, 1, 2, 3], 1) == 1.0
    assert recall_at_k(sim, [3, 2, 1, 0], 1) == 0.0
    assert recall_at_k(sim, [3, 2, 1, 0], 4) == 1.0
    flat = np.zeros((2, 3))
    assert recall_at_k(flat, [0, 1], 1) == 0.5
    assert recall_at_k(sim, [(1, 0), (3,), (2,), (0, 3)], 1) == 0.75


def test_recall_at_k_rejects_bad_arguments():
    """Ensures K must fit the candidate count and gold must cover every row."""
    with pytest.raises(KOutOfRange):
        recall_at_k(np.eye(3), [0, 1, 2], 4)
    with pytest.raises(KOutOfRange):
        recall_at_k(np.eye(3), [0, 1, 2], 0)
    with pytest.raises(ShapeMismatch):
        recall_at_k(np.eye(3), [0, 1], 1)


def test_empty_suites_are_rejected(small_world):
    """Ensures there is always something to score."""
    with pytest.raises(EmptySuite):
        score_quadruples([])
    with pytest.raises(EmptySuite):
        evaluate_suite(oracle_encoders(small_world), EvalSuite(probes=()))


def test_oracle_encoders_score_perfectly_on_a_noise_free_world(small_world):
    """Ensures the analytic encoders separate every bound-pair probe."""
    report = evaluate_suite(oracle_encoders(small_world), small_world.suite, seed=3)
    for category in ("swap", "replace"):
        assert report.categories[category].itt == 1.0
        assert report.categories[category].itt_pp == 1.0
    assert report.winoground["group"] == 1.0
    assert report.retrieval["text_r@5"] >= report.retrieval["text_r@1"] > 0.5
    assert set(report.retrieval) == {"text_r@1", "text_r@5", "image_r@1", "image_r@5"}


def test_random_encoders_are_worse_than_the_oracle(small_world):
    """Ensures an untrained encoder pair leaves swap probes unsolved."""
    rng = np.random.default_rng(1)
    world = small_world
    texts = [*world_texts(world), *(p.n for p in world.suite.probes)]
    encoders = EncoderPair(
        text=ToyTextEncoder.initialize(texts, 16, rng),
        image=ToyImageEncoder.initialize(world.feature_dim, 16, rng),
    )
    report = evaluate_suite(encoders, world.suite)
    assert report.categories["swap"].itt_pp < 1.0


def test_report_serializes_and_renders():
    """Ensures reports carry hash, seed and both averaging schemes."""
    categories = {
        "swap": CategoryScore(count=1, itt=1.0, itt_pp=1.0, tot=0.0),
        "replace": CategoryScore(count=3, itt=0.0, itt_pp=0.0, tot=1.0),
    }
    averages = _averages(categories)
    assert averages["equal"]["itt"] == 0.5
    assert averages["size"]["itt"] == 0.25
    report = Report(
        categories=categories,
        averages=averages,
        winoground={"text": 1.0, "image": 0.0, "group": 0.0},
        config_hash="abc",
        seed=7,
    )
    payload = json.loads(report.to_json())
    assert payload["config_hash"] == "abc"
    assert payload["seed"] == 7
    assert payload["flags"]["ties"] == "strict inequalities, ties fail"
    table = report.render_table()
    assert "avg (equal)" in table
    assert "winoground group" in table
    assert table.splitlines()[0].startswith("category")


def _naive_recall(sim: np.ndarray, gold: list[int], k: int) -> float:
    hits = 0
    for row in range(sim.shape[0]):
        order = sorted(range(sim.shape[1]), key=lambda col: (-sim[row, col], col))
        hits += gold[row] in order[:k]
    return hits / sim.shape[0]


def test_recall_at_k_matches_a_full_sort_on_tied_scores():
    """Checks recall against a sort-everything reference on coarse, tie-heavy matrices."""
    rng = np.random.default_rng(7)
    for _ in range(50):
        sim = rng.integers(0, 5, size=(20, 20)) / 4.0
        gold = [int(col) for col in rng.integers(0, 20, size=20)]
        for k in (1, 5, 10):
            assert recall_at_k(sim, gold, k) == _naive_recall(sim, gold, k)


def test_recall_at_k_is_monotone_and_complete():
    """Ensures recall never drops as K grows and reaches 1 at K equal to the candidate count."""
    rng = np.random.default_rng(3)
    sim = rng.normal(size=(12, 9))
    gold = [int(col) for col in rng.integers(0, 9, size=12)]
    values = [recall_at_k(sim, gold, k) for k in range(1, 10)]
    assert values == sorted(values)
    assert values[-1] == 1.0


def test_scores_are_invariant_under_a_shared_rotation():
    """Ensures rotating every embedding by one orthogonal matrix leaves verdicts unchanged."""
    rng = np.random.default_rng(11)
    rotation, _ = np.linalg.qr(rng.normal(size=(16, 16)))
    vectors = rng.normal(size=(200, 4, 16))
    vectors /= np.linalg.norm(vectors, axis=2, keepdims=True)
    for rows in vectors:
        quad = EvalQuadruple(*rows)
        turned = EvalQuadruple(*(rows @ rotation.T))
        assert sugarcrepe_itt(turned) is sugarcrepe_itt(quad)
        assert sugarcrepepp_itt(turned) is sugarcrepepp_itt(quad)
        assert sugarcrepepp_tot(turned) is sugarcrepepp_tot(quad)


def test_both_positives_winning_implies_the_first_wins():
    """Ensures the ITT++ verdict is never true where the ITT verdict is false."""
    rng = np.random.default_rng(5)
    vectors = rng.normal(size=(500, 4, 8))
    vectors /= np.linalg.norm(vectors, axis=2, keepdims=True)
    for rows in vectors:
        quad = EvalQuadruple(*rows)
        assert not sugarcrepepp_itt(quad) or sugarcrepe_itt(quad)


def test_suites_without_winoground_or_retrieval_report_categories_only(small_world):
    """Ensures optional parts of a suite are simply absent from the report."""
    report = evaluate_suite(oracle_encoders(small_world), EvalSuite(probes=small_world.suite.probes))
    assert report.winoground == {}
    assert report.retrieval == {}
    table = report.render_table()
    assert "winoground" not in table
    assert not table.endswith("\n\n")


def test_retrieval_skips_cutoffs_beyond_the_candidates(small_world):
    """Ensures Recall@K is reported only where K fits the candidate count."""
    retrieval = small_world.suite.retrieval
    assert retrieval is not None
    small = RetrievalSet(
        features=retrieval.features[:3],
        captions=tuple(retrieval.captions[i] for g in retrieval.gold[:3] for i in g),
        gold=((0,), (1,), (2,)),
    )
    assert len(small.captions) == 3
    suite = EvalSuite(probes=small_world.suite.probes, retrieval=small)
    report = evaluate_suite(oracle_encoders(small_world), suite, ks=(1, 5))
    assert set(report.retrieval) == {"text_r@1", "image_r@1"}

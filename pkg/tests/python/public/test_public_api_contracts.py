"""Public API contract tests beyond direct README snippets."""

import pytest

import clasp
from clasp.errors import ClaspError


def test_public_exports_match_the_supported_surface():
    """Ensures __all__ exposes the documented public entry points."""
    expected = {
        "CommonNoun",
        "ConcatOrder",
        "Config",
        "Corpus",
        "EmbeddingBatch",
        "EncoderPair",
        "FreezeMode",
        "GenerationConfig",
        "LossWeights",
        "Objective",
        "RandomSameOrientation",
        "Report",
        "ToyImageEncoder",
        "ToyTextEncoder",
        "TrainConfig",
        "TrainingExample",
        "UposTag",
        "ablation",
        "build_batch",
        "clic_total",
        "evaluate_suite",
        "generate_examples",
        "make_hard_negative",
        "make_positives",
        "make_toy_world",
        "oracle_encoders",
        "recall_at_k",
        "toy_config",
        "train",
    }
    assert set(clasp.__all__) == expected
    assert all(hasattr(clasp, name) for name in expected)


def test_configs_are_frozen_values():
    """Ensures configuration objects cannot be mutated after construction."""
    cfg = clasp.TrainConfig()
    with pytest.raises(AttributeError):
        cfg.seed = 3  # type: ignore[misc]
    assert clasp.GenerationConfig() == clasp.GenerationConfig()


def test_validation_errors_are_catchable_as_builtins(raster_corpus):
    """Confirms library errors subclass both ClaspError and a builtin category."""
    with pytest.raises(LookupError) as info:
        raster_corpus.index_of("missing")
    assert isinstance(info.value, ClaspError)
    with pytest.raises(ValueError):
        clasp.LossWeights(0.0, 0.0, 0.0)


def test_enums_accept_their_config_spellings():
    """Ensures string-valued enums round-trip the values used in config files."""
    assert clasp.FreezeMode("vision") is clasp.FreezeMode.VISION
    assert clasp.Objective("negclip") is clasp.Objective.NEGCLIP
    assert clasp.UposTag("NOUN") is clasp.UposTag.NOUN
    assert {order.value for order in clasp.ConcatOrder} == {"AB", "BA"}

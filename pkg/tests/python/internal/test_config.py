"""Tests for the flat key = value run configuration."""

import pytest

from clasp.batching import CommonNoun
from clasp.config import KEYS, Config, parse_document
from clasp.errors import ConfigError, CorpusError
from clasp.losses import LossWeights
from clasp.metadata import FreezeMode, Objective


def test_defaults_cover_every_key():
    """Ensures a bare config resolves every key and renders them all."""
    cfg = Config()
    assert cfg["seed"] == 0
    assert cfg["preset"] == "default"
    assert cfg["batch_size"] is None
    assert cfg.uses_toy_world
    rendered = cfg.render()
    assert rendered.count("\n") == len(KEYS)
    assert "seed = 0\n" in rendered


def test_parse_document_skips_comments_and_keeps_the_last_value():
    """Ensures comments vanish and repeated keys resolve to their last line."""
    text = "# run\nseed = 3\n\nseed=4  # later wins\npreset = toy\n"
    assert parse_document(text) == {"seed": "4", "preset": "toy"}


def test_parse_document_reports_the_bad_line():
    """Ensures a line without '=' names its source and line number."""
    with pytest.raises(ConfigError, match=r"run.cfg:2: expected 'key = value'"):
        parse_document("seed = 1\nseed 2\n", source="run.cfg")


@pytest.mark.parametrize(
    ("raw", "message"),
    [
        ({"sede": "1"}, "Unknown configuration key 'sede'"),
        ({"seed": "-1"}, "must be at least 0"),
        ({"pairing": "nearest"}, "expected one of random, common_noun"),
        ({"lrs": "1,2"}, "expected 3 comma-separated numbers"),
        ({"concat": "maybe"}, "expected true or false"),
        ({"temperature": "0"}, "must be positive"),
        ({"freeze": "both"}, "expected one of"),
    ],
)
def test_invalid_settings_raise_config_errors(raw, message):
    """Ensures unknown keys and unparsable values are configuration errors."""
    with pytest.raises(ConfigError, match=message):
        Config(raw)


def test_apply_overrides_requires_assignments():
    """Ensures --set values must look like key=value."""
    cfg = Config()
    cfg.apply_overrides(["seed = 9", "total_steps=5"])
    assert (cfg["seed"], cfg["total_steps"]) == (9, 5)
    with pytest.raises(ConfigError, match="--set expects key=value"):
        cfg.apply_overrides(["seed"])


def test_digest_tracks_only_result_affecting_keys():
    """Ensures output paths and threads leave the hash alone while seeds change it."""
    base = Config().digest()
    assert Config({"threads": "8", "out": "x.jsonl", "progress": "false"}).digest() == base
    assert Config({"seed": "1"}).digest() != base
    assert len(base) == 16


@pytest.mark.parametrize(
    ("left", "right"),
    [
        ({"seed": "0"}, {"seed": "00"}),
        ({"lrs": "1e-6,1e-5,1e-7"}, {"lrs": "0.000001, 0.00001, 0.0000001"}),
        ({"concat": "true"}, {"concat": "yes"}),
    ],
)
def test_digest_hashes_resolved_values(left, right):
    """Ensures different spellings of the same setting share a digest."""
    assert Config(left).digest() == Config(right).digest()


def test_load_reads_files_and_reports_missing_ones(tmp_path):
    """Ensures config files load and unreadable paths surface as I/O errors."""
    path = tmp_path / "run.cfg"
    path.write_text("seed = 5\npreset = toy\n", encoding="utf-8")
    cfg = Config.load(path)
    assert cfg["seed"] == 5
    assert Config.load(None)["seed"] == 0
    with pytest.raises(CorpusError, match="Cannot read config"):
        Config.load(tmp_path / "absent.cfg")


def test_train_config_follows_presets_and_overrides():
    """Ensures presets pick the base and explicit keys win over them."""
    default = Config().train_config()
    assert default.lr_peak == 1e-6
    toy = Config({"preset": "toy"}).train_config()
    assert toy.temperature == 10.0
    c1 = Config({"preset": "C1", "lambdas": "1,0,0.5"}).train_config()
    assert not c1.alternate_clip_iters
    assert c1.weights == LossWeights(1.0, 0.0, 0.5)
    tuned = Config({
        "lrs": "1e-4,1e-3,1e-5",
        "betas": "0.8,0.9",
        "eps": "1e-6",
        "weight_decay": "0.2",
        "freeze": "none",
        "objective": "negclip",
        "seed": "4",
    }).train_config()
    assert (tuned.lr_start, tuned.lr_peak, tuned.lr_end) == (1e-4, 1e-3, 1e-5)
    assert (tuned.adamw.beta1, tuned.adamw.beta2) == (0.8, 0.9)
    assert (tuned.adamw.eps, tuned.adamw.weight_decay) == (1e-6, 0.2)
    assert tuned.freeze is FreezeMode.NONE
    assert tuned.objective is Objective.NEGCLIP
    assert tuned.seed == 4


@pytest.mark.parametrize(
    "raw", [{"lambdas": "0,0,0"}, {"warmup_frac": "1.5"}, {"k_extra": "7"}]
)
def test_train_config_wraps_invalid_combinations(raw):
    """Ensures values rejected by the training config become configuration errors."""
    with pytest.raises(ConfigError, match="Invalid training settings"):
        Config(raw).train_config()


def test_generation_config_carries_pairing():
    """Ensures pairing and candidate caps reach the example builder."""
    gen = Config({"pairing": "common_noun", "max_candidates": "3"}).generation_config()
    assert gen.pairing == CommonNoun(3)


def test_toy_world_settings_are_validated():
    """Ensures impossible toy worlds are configuration errors."""
    with pytest.raises(ConfigError, match="Invalid toy world"):
        Config({"toy.n_objects": "40"}).toy_world()
    world = Config({"toy.n_scenes": "10", "toy.n_eval_scenes": "2"}).toy_world()
    assert len(world.corpus) == 10
    small = Config({
        "toy.n_attributes": "2",
        "toy.n_objects": "2",
        "toy.n_scenes": "10",
    }).toy_world()
    assert small.config.n_attributes == 2
    with pytest.raises(ConfigError, match="toy.n_attributes"):
        Config({"toy.n_attributes": "1"})


def test_corpus_loads_a_jsonl_path(fixtures_dir):
    """Ensures a corpus key switches from the toy world to a JSONL file."""
    cfg = Config({"corpus": str(fixtures_dir / "corpus.jsonl")})
    assert not cfg.uses_toy_world
    assert len(cfg.corpus()) == 6

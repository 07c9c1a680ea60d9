"""Shared fixtures and collection guards for the clasp test suite."""

from __future__ import annotations

import inspect
from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from clasp.batching import Corpus
from clasp.text import Lexicon, default_lexicon
from clasp.toyworld import ToyWorld, make_toy_world

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    """Directory holding the fixture corpora and images."""
    return FIXTURES


@pytest.fixture
def lexicon() -> Lexicon:
    """The bundled lexicon."""
    return default_lexicon()


@pytest.fixture
def rng() -> np.random.Generator:
    """A fresh generator with a fixed seed."""
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def raster_corpus() -> Corpus:
    """Six captioned PPM images of mixed orientation."""
    return Corpus.load(FIXTURES / "corpus.jsonl")


@pytest.fixture(scope="session")
def feature_corpus() -> Corpus:
    """Three captioned feature vectors."""
    return Corpus.load(FIXTURES / "features.jsonl")


@pytest.fixture(scope="session")
def small_world() -> ToyWorld:
    """A small noise-free toy world that trains in well under a second."""
    return make_toy_world(
        n_objects=4, n_attributes=4, n_scenes=64, noise_sigma=0.0, seed=3, n_eval_scenes=24
    )


@pytest.fixture
def unit_rows() -> Callable[[np.random.Generator, int, int], np.ndarray]:
    """Draws random rows scaled to unit length."""

    def _draw(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
        rows = rng.normal(size=(m, d))
        return rows / np.linalg.norm(rows, axis=1, keepdims=True)

    return _draw


def pytest_collection_modifyitems(
    config: pytest.Config, items: list[pytest.Item]
) -> None:
    """Fails collection when any test function omits a docstring."""
    del config

    missing_docstrings: set[str] = set()
    for item in items:
        if not item.name.startswith("test_"):
            continue
        obj = getattr(item, "obj", None)
        if obj is None:
            continue
        if inspect.getdoc(obj) is None:
            missing_docstrings.add(item.nodeid)

    if missing_docstrings:
        missing_lines = "\n".join(
            f"- {nodeid}" for nodeid in sorted(missing_docstrings)
        )
        raise pytest.UsageError(
            "Every collected test function must include a docstring.\n"
            f"Missing docstrings:\n{missing_lines}"
        )

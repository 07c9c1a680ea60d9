"""Linear toy encoders whose outputs are L2-normalized embeddings."""

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import non_finite, shape_mismatch
from .text import PUNCTUATION

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping, Sequence

    from numpy.typing import NDArray

    type Matrix = NDArray[np.float64]

UNK = "<unk>"
_STRIP = "".join(sorted(PUNCTUATION))


def featurize(text: str, ngram: int = 2) -> list[str]:
    """Lower-cased words plus every run of up to ``ngram`` adjacent words."""
    words = [word for word in (raw.strip(_STRIP).lower() for raw in text.split()) if word]
    tokens = list(words)
    for size in range(2, ngram + 1):
        tokens.extend(
            " ".join(words[start : start + size])
            for start in range(len(words) - size + 1)
        )
    return tokens


def build_vocab(texts: "Iterable[str]", ngram: int = 2) -> dict[str, int]:
    """Sorted token vocabulary with ``<unk>`` at index 0."""
    seen: set[str] = set()
    for text in texts:
        seen.update(featurize(text, ngram))
    seen.discard(UNK)
    return {token: index for index, token in enumerate([UNK, *sorted(seen)])}


@dataclass(frozen=True, slots=True)
class EncoderCache:
    """Forward-pass state kept for the backward pass."""

    inputs: "Matrix"
    norms: "NDArray[np.float64]"
    output: "Matrix"


def _normalize(hidden: "Matrix", inputs: "Matrix") -> EncoderCache:
    norms = np.linalg.norm(hidden, axis=1)
    if not np.all(norms > 0) or not np.all(np.isfinite(hidden)):
        raise non_finite("Encoder pre-normalization output")
    return EncoderCache(inputs=inputs, norms=norms, output=hidden / norms[:, np.newaxis])


def _weight_grad(cache: EncoderCache, grad_out: "Matrix") -> "Matrix":
    if grad_out.shape != cache.output.shape:
        raise shape_mismatch("Embedding gradient", cache.output.shape, grad_out.shape)
    y = cache.output
    radial = np.einsum("ij,ij->i", y, grad_out)[:, np.newaxis]
    grad_hidden = (grad_out - y * radial) / cache.norms[:, np.newaxis]
    return cache.inputs.T @ grad_hidden


class ToyTextEncoder:
    """Bag-of-tokens mean over a learned table, then L2 normalization."""

    def __init__(
        self, vocab: "Mapping[str, int]", weights: "Matrix", *, ngram: int = 2
    ) -> None:
        if vocab.get(UNK) != 0:
            raise ValueError(f"Vocabulary must map '{UNK}' to row 0.")
        if weights.ndim != 2 or weights.shape[0] != len(vocab):  # noqa: PLR2004
            raise shape_mismatch("Text weights", (len(vocab), -1), weights.shape)
        self.vocab = dict(vocab)
        self.weights = weights
        self.ngram = ngram

    @classmethod
    def initialize(
        cls,
        texts: "Iterable[str]",
        embed_dim: int,
        rng: np.random.Generator,
        *,
        ngram: int = 2,
    ) -> "ToyTextEncoder":
        vocab = build_vocab(texts, ngram)
        weights = rng.normal(0.0, 1.0 / np.sqrt(embed_dim), size=(len(vocab), embed_dim))
        return cls(vocab, weights, ngram=ngram)

    @property
    def embed_dim(self) -> int:
        return int(self.weights.shape[1])

    def bag(self, texts: "Sequence[str]") -> "Matrix":
        """Row-stochastic token-frequency matrix, one row per text."""
        counts = np.zeros((len(texts), len(self.vocab)))
        for row, text in enumerate(texts):
            tokens = featurize(text, self.ngram) or [UNK]
            for token in tokens:
                counts[row, self.vocab.get(token, 0)] += 1.0
            counts[row] /= len(tokens)
        return counts

    def forward(self, texts: "Sequence[str]") -> EncoderCache:
        inputs = self.bag(texts)
        return _normalize(inputs @ self.weights, inputs)

    def encode(self, texts: "Sequence[str]") -> "Matrix":
        return self.forward(texts).output

    def backward(self, cache: EncoderCache, grad_out: "Matrix") -> "Matrix":
        """Weight gradient given the gradient with respect to the normalized output."""
        return _weight_grad(cache, grad_out)


class ToyImageEncoder:
    """A shared linear map applied to each feature panel, summed, then normalized.

    A concatenated feature image is two panels of the base dimension.
    """

    def __init__(self, weights: "Matrix") -> None:
        if weights.ndim != 2:  # noqa: PLR2004
            raise shape_mismatch("Image weights", (-1, -1), weights.shape)
        self.weights = weights

    @classmethod
    def initialize(
        cls, feature_dim: int, embed_dim: int, rng: np.random.Generator
    ) -> "ToyImageEncoder":
        return cls(rng.normal(0.0, 1.0 / np.sqrt(embed_dim), size=(feature_dim, embed_dim)))

    @property
    def feature_dim(self) -> int:
        return int(self.weights.shape[0])

    @property
    def embed_dim(self) -> int:
        return int(self.weights.shape[1])

    def panels(self, features: "Matrix") -> "Matrix":
        if features.ndim != 2 or features.shape[1] % self.feature_dim:  # noqa: PLR2004
            raise shape_mismatch("Image features", (-1, self.feature_dim), features.shape)
        n_panels = features.shape[1] // self.feature_dim
        return features.reshape(features.shape[0], n_panels, self.feature_dim).sum(axis=1)

    def forward(self, features: "Matrix") -> EncoderCache:
        inputs = self.panels(features)
        return _normalize(inputs @ self.weights, inputs)

    def encode(self, features: "Matrix") -> "Matrix":
        return self.forward(features).output

    def backward(self, cache: EncoderCache, grad_out: "Matrix") -> "Matrix":
        return _weight_grad(cache, grad_out)


@dataclass(slots=True)
class EncoderPair:
    text: ToyTextEncoder
    image: ToyImageEncoder

    def __post_init__(self) -> None:
        if self.text.embed_dim != self.image.embed_dim:
            raise shape_mismatch(
                "Text embedding", (self.image.embed_dim,), (self.text.embed_dim,)
            )

    def copy(self, *, ngram: int | None = None) -> "EncoderPair":
        """Deep copy; ``ngram`` re-reads the same vocabulary rows at another n-gram length."""
        return EncoderPair(
            text=ToyTextEncoder(
                self.text.vocab,
                self.text.weights.copy(),
                ngram=self.text.ngram if ngram is None else ngram,
            ),
            image=ToyImageEncoder(self.image.weights.copy()),
        )

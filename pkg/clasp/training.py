"""Alternating CLIC and plain contrastive training of the toy encoders."""

import csv
import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
from tqdm import tqdm

from .batching import (
    BuildStats,
    CommonNoun,
    Corpus,
    GenerationConfig,
    PairingStrategy,
    RandomSameOrientation,
    TrainingExample,
    build_batch,
)
from .encoders import EncoderPair, ToyImageEncoder, ToyTextEncoder
from .errors import (
    CheckpointError,
    ConfigError,
    checkpoint_invalid,
    config_hash_mismatch,
    non_finite,
    step_out_of_range,
)
from .images import FeatureImage
from .losses import (
    EmbeddingBatch,
    LossOutput,
    LossWeights,
    clic_total,
    clip_loss,
    negclip_batch_loss,
)
from .metadata import FreezeMode, Objective
from .optim import AdamWParams, Moments, adamw_step, lr_at
from .text import MAX_EXTRA_POSITIVES

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from numpy.typing import NDArray

    from .encoders import EncoderCache

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CLIC1"
_HEADER_LENGTH = struct.Struct("<I")
_ARRAY_DTYPE = np.dtype("<f8")
# Keys that steer logging or parallelism but never the numbers produced.
_UNHASHED = frozenset({"threads", "progress", "log_every"})
# Child stream keys under the training seed.
_INIT_STREAM, _TRAIN_STREAM, _PRETRAIN_STREAM = 0, 1, 2


@dataclass(frozen=True, slots=True)
class TrainConfig:
    batch_size: int = 64
    total_steps: int = 1000
    warmup_frac: float = 0.2
    lr_start: float = 1e-7
    lr_peak: float = 1e-6
    lr_end: float = 1e-8
    adamw: AdamWParams = AdamWParams()
    weights: LossWeights = LossWeights()
    freeze: FreezeMode = FreezeMode.VISION
    alternate_clip_iters: bool = True
    k_extra: int = 2
    temperature: float = 1.0
    seed: int = 0
    objective: Objective = Objective.CLIC
    pairing: PairingStrategy = RandomSameOrientation()
    concat: bool = True
    final_resize: int = 0
    embed_dim: int = 32
    ngram: int = 2
    pretrain_steps: int = 0
    pretrain_lr: float = 1e-2
    threads: int = 1
    progress: bool = True
    log_every: int = 50

    def __post_init__(self) -> None:
        if not 0 < self.warmup_frac < 1:
            raise ValueError("warmup_frac must lie strictly between 0 and 1.")
        if min(self.lr_start, self.lr_peak, self.lr_end, self.pretrain_lr) <= 0:
            raise ValueError("Learning rates must be positive.")
        if self.batch_size < 1 or self.total_steps < 1:
            raise ValueError("batch_size and total_steps must be at least 1.")
        if not 0 <= self.k_extra <= MAX_EXTRA_POSITIVES:
            raise ValueError(f"k_extra must lie in [0, {MAX_EXTRA_POSITIVES}].")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive.")

    @property
    def generation(self) -> GenerationConfig:
        return GenerationConfig(
            k_extra=self.k_extra,
            pairing=self.pairing,
            concat=self.concat,
            final_resize=self.final_resize,
            threads=self.threads,
        )

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready view of every setting that influences results."""
        pairing: dict[str, Any] = {"kind": "random"}
        if isinstance(self.pairing, CommonNoun):
            pairing = {"kind": "common_noun", "max_candidates": self.pairing.max_candidates}
        values: dict[str, Any] = {
            "batch_size": self.batch_size,
            "total_steps": self.total_steps,
            "warmup_frac": self.warmup_frac,
            "lr_start": self.lr_start,
            "lr_peak": self.lr_peak,
            "lr_end": self.lr_end,
            "adamw": asdict(self.adamw),
            "weights": asdict(self.weights),
            "freeze": self.freeze.value,
            "alternate_clip_iters": self.alternate_clip_iters,
            "k_extra": self.k_extra,
            "temperature": self.temperature,
            "seed": self.seed,
            "objective": self.objective.value,
            "pairing": pairing,
            "concat": self.concat,
            "final_resize": self.final_resize,
            "embed_dim": self.embed_dim,
            "ngram": self.ngram,
            "pretrain_steps": self.pretrain_steps,
            "pretrain_lr": self.pretrain_lr,
        }
        assert _UNHASHED.isdisjoint(values)
        return values

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


# Overrides for toy-world runs.
TOY_OVERRIDES: dict[str, Any] = {
    "batch_size": 32,
    "total_steps": 2000,
    "lr_start": 1e-4,
    "lr_peak": 1e-2,
    "lr_end": 1e-4,
    "temperature": 10.0,
    "adamw": AdamWParams(weight_decay=0.01),
    "pretrain_steps": 300,
}

# The contrastive-only row reads captions as a unigram bag, so a swapped caption
# embeds exactly like its source.
_CONCAT_ROWS: dict[str, dict[str, Any]] = {
    "C1": {
        "weights": LossWeights(1.0, 0.0, 0.0),
        "k_extra": 0,
        "alternate_clip_iters": False,
        "ngram": 1,
    },
    "C2": {
        "weights": LossWeights(0.5, 0.5, 0.0),
        "k_extra": 0,
        "alternate_clip_iters": False,
    },
    "C3": {
        "weights": LossWeights(0.5, 0.5, 0.0),
        "k_extra": 2,
        "alternate_clip_iters": False,
    },
    "C4": {
        "weights": LossWeights(0.5, 0.5, 1.0),
        "k_extra": 2,
        "alternate_clip_iters": False,
    },
    "C5": {
        "weights": LossWeights(0.5, 0.5, 1.0),
        "k_extra": 2,
        "alternate_clip_iters": True,
    },
}

ABLATIONS: dict[str, dict[str, Any]] = {
    **_CONCAT_ROWS,
    **{
        f"B{row[1]}": {**overrides, "concat": False}
        for row, overrides in _CONCAT_ROWS.items()
        if row != "C5"
    },
    "negclip": {
        "objective": Objective.NEGCLIP,
        "freeze": FreezeMode.VISION,
        "concat": False,
        "k_extra": 0,
        "alternate_clip_iters": False,
    },
}


def toy_config(**overrides: Any) -> TrainConfig:
    return TrainConfig(**(TOY_OVERRIDES | overrides))


def ablation(name: str, base: TrainConfig | None = None) -> TrainConfig:
    """``base`` (the toy preset by default) with one named ablation row applied."""
    try:
        overrides = ABLATIONS[name]
    except KeyError:
        raise KeyError(f"Unknown ablation '{name}'; known: {sorted(ABLATIONS)}") from None
    return replace(base or toy_config(), **overrides)


@dataclass(frozen=True, slots=True)
class StepMetrics:
    step: int
    lr: float
    loss_total: float
    loss_cont: float = 0.0
    loss_sneg: float = 0.0
    loss_uni: float = 0.0

    def row(self) -> list[str]:
        return [
            str(self.step),
            repr(self.lr),
            repr(self.loss_total),
            repr(self.loss_cont),
            repr(self.loss_sneg),
            repr(self.loss_uni),
        ]


METRIC_COLUMNS = ("step", "lr", "loss_total", "loss_cont", "loss_sneg", "loss_uni")


def write_metrics(
    path: str | Path, metrics: "Iterable[StepMetrics]", *, config_hash: str, seed: int
) -> None:
    """CSV with one ``#`` line carrying the config hash and seed, then the rows."""
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        handle.write(f"# config_hash={config_hash} seed={seed}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        writer.writerows(entry.row() for entry in metrics)


@dataclass(slots=True)
class Checkpoint:
    encoders: EncoderPair
    text_moments: Moments
    image_moments: Moments
    step: int
    config: dict[str, Any]
    config_hash: str
    seed: int
    rng_state: dict[str, Any]
    freeze: FreezeMode = FreezeMode.VISION

    def _arrays(self) -> "list[tuple[str, NDArray[np.float64]]]":
        return [
            ("text.weights", self.encoders.text.weights),
            ("text.first", self.text_moments.first),
            ("text.second", self.text_moments.second),
            ("image.weights", self.encoders.image.weights),
            ("image.first", self.image_moments.first),
            ("image.second", self.image_moments.second),
        ]

    def to_bytes(self) -> bytes:
        """``CLIC1`` magic, a little-endian length-prefixed JSON header, then float64 arrays."""
        vocab = sorted(self.encoders.text.vocab, key=self.encoders.text.vocab.__getitem__)
        arrays = self._arrays()
        meta = {
            "version": 1,
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "step": self.step,
            "freeze": self.freeze.value,
            "rng_state": self.rng_state,
            "vocab": vocab,
            "ngram": self.encoders.text.ngram,
            "moment_counts": [self.text_moments.count, self.image_moments.count],
            "arrays": [[name, list(array.shape)] for name, array in arrays],
        }
        header = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
        parts = [CHECKPOINT_MAGIC, _HEADER_LENGTH.pack(len(header)), header]
        parts.extend(np.ascontiguousarray(array, dtype=_ARRAY_DTYPE).tobytes() for _, array in arrays)
        return b"".join(parts)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, payload: bytes, *, source: str = "<bytes>") -> "Checkpoint":
        if not payload.startswith(CHECKPOINT_MAGIC):
            raise checkpoint_invalid(source, "missing CLIC1 header")
        offset = len(CHECKPOINT_MAGIC)
        try:
            (length,) = _HEADER_LENGTH.unpack_from(payload, offset)
            offset += _HEADER_LENGTH.size
            meta = json.loads(payload[offset : offset + length])
            offset += length
            arrays: dict[str, NDArray[np.float64]] = {}
            for name, shape in meta["arrays"]:
                count = int(np.prod(shape))
                arrays[name] = (
                    np.frombuffer(payload, dtype=_ARRAY_DTYPE, count=count, offset=offset)
                    .reshape(shape)
                    .astype(np.float64)
                )
                offset += count * _ARRAY_DTYPE.itemsize
            if offset != len(payload):
                raise checkpoint_invalid(source, "trailing bytes after arrays")
            vocab = {token: index for index, token in enumerate(meta["vocab"])}
            text_count, image_count = meta["moment_counts"]
            return cls(
                encoders=EncoderPair(
                    text=ToyTextEncoder(vocab, arrays["text.weights"], ngram=meta["ngram"]),
                    image=ToyImageEncoder(arrays["image.weights"]),
                ),
                text_moments=Moments(arrays["text.first"], arrays["text.second"], text_count),
                image_moments=Moments(
                    arrays["image.first"], arrays["image.second"], image_count
                ),
                step=meta["step"],
                config=meta["config"],
                config_hash=meta["config_hash"],
                seed=meta["seed"],
                rng_state=meta["rng_state"],
                freeze=FreezeMode(meta["freeze"]),
            )
        except CheckpointError:
            raise
        except (struct.error, KeyError, TypeError, ValueError) as exc:
            raise checkpoint_invalid(source, str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        try:
            payload = path.read_bytes()
        except OSError as exc:
            raise checkpoint_invalid(str(path), exc.strerror or str(exc)) from exc
        return cls.from_bytes(payload, source=str(path))


@dataclass(slots=True)
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[StepMetrics] = field(default_factory=list)
    stats: BuildStats = field(default_factory=BuildStats)

    @property
    def final(self) -> StepMetrics | None:
        return self.metrics[-1] if self.metrics else None


def _child_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


def _features(image: object) -> "NDArray[np.float64]":
    if not isinstance(image, FeatureImage):
        raise ConfigError("Toy encoders train on feature-image corpora only.")
    return image.features


def initialize_encoders(corpus: Corpus, cfg: TrainConfig) -> EncoderPair:
    """Gaussian weights with sigma ``1/sqrt(embed_dim)``, fixed by the seed."""
    rng = _child_rng(cfg.seed, _INIT_STREAM)
    sentences = [s for item in corpus.items for s in item.caption.sentences]
    text = ToyTextEncoder.initialize(sentences, cfg.embed_dim, rng, ngram=cfg.ngram)
    image = ToyImageEncoder.initialize(
        _features(corpus[0].image).shape[0], cfg.embed_dim, rng
    )
    return EncoderPair(text=text, image=image)


def _draw_indices(size: int, batch_size: int, rng: np.random.Generator) -> list[int]:
    return [int(i) for i in rng.choice(size, size=min(batch_size, size), replace=False)]


type _Gradients = tuple["NDArray[np.float64]", "NDArray[np.float64]"]


def _backward(
    encoders: EncoderPair,
    image_cache: "EncoderCache",
    text_cache: "EncoderCache",
    output: LossOutput,
    text_grads: "Sequence[NDArray[np.float64]]",
) -> _Gradients:
    return (
        encoders.text.backward(text_cache, np.concatenate(text_grads)),
        encoders.image.backward(image_cache, output.grads[0]),
    )


def clip_step(
    encoders: EncoderPair, corpus: Corpus, cfg: TrainConfig, rng: np.random.Generator
) -> tuple[LossOutput, _Gradients]:
    """Plain contrastive step on single images and their first sentences."""
    indices = _draw_indices(len(corpus), cfg.batch_size, rng)
    image_cache = encoders.image.forward(
        np.stack([_features(corpus[i].image) for i in indices])
    )
    text_cache = encoders.text.forward([corpus[i].caption.first for i in indices])
    output = clip_loss(image_cache.output, text_cache.output, cfg.temperature)
    return output, _backward(encoders, image_cache, text_cache, output, [output.grads[1]])


def _encode_examples(
    encoders: EncoderPair, examples: "Sequence[TrainingExample]", texts: "list[str]"
) -> "tuple[EncoderCache, EncoderCache]":
    image_cache = encoders.image.forward(
        np.stack([_features(example.image) for example in examples])
    )
    return image_cache, encoders.text.forward(texts)


def clic_step(
    encoders: EncoderPair,
    corpus: Corpus,
    cfg: TrainConfig,
    rng: np.random.Generator,
    stats: BuildStats | None = None,
) -> tuple[LossOutput, _Gradients] | None:
    """Build a batch of examples and take the configured objective's gradient.

    Returns ``None`` when every slot of the batch was skipped.
    """
    indices = _draw_indices(len(corpus), cfg.batch_size, rng)
    examples = build_batch(corpus, indices, cfg.generation, rng, stats=stats)
    if not examples:
        return None
    negatives = [example.negative.text for example in examples]

    if cfg.objective is Objective.NEGCLIP:
        firsts = [example.positives.p1 for example in examples]
        image_cache, text_cache = _encode_examples(encoders, examples, firsts + negatives)
        pos, neg = np.split(text_cache.output, 2)
        output = negclip_batch_loss(image_cache.output, pos, neg, cfg.temperature)
        text_grads = list(output.grads[1:])
    else:
        n_pos = len(examples[0].positives.texts)
        texts = [ex.positives.texts[k] for k in range(n_pos) for ex in examples]
        image_cache, text_cache = _encode_examples(encoders, examples, texts + negatives)
        blocks = np.split(text_cache.output, n_pos + 1)
        batch = EmbeddingBatch(
            image=image_cache.output,
            positives=tuple(blocks[:n_pos]),
            negative=blocks[n_pos],
            temperature=cfg.temperature,
        )
        output = clic_total(batch, cfg.weights)
        text_grads = list(output.grads[1:])
    return output, _backward(encoders, image_cache, text_cache, output, text_grads)


@dataclass(slots=True)
class _OptimizerState:
    text: Moments
    image: Moments

    @classmethod
    def zeros(cls, encoders: EncoderPair) -> "_OptimizerState":
        return cls(
            text=Moments.zeros_like(encoders.text.weights),
            image=Moments.zeros_like(encoders.image.weights),
        )


def _apply_update(
    encoders: EncoderPair,
    state: _OptimizerState,
    grads: _Gradients,
    lr: float,
    hp: AdamWParams,
    freeze: FreezeMode,
) -> None:
    text_grad, image_grad = grads
    if freeze is not FreezeMode.TEXT:
        encoders.text.weights, state.text = adamw_step(
            encoders.text.weights, text_grad, state.text, lr, hp
        )
        if not np.all(np.isfinite(encoders.text.weights)):
            raise non_finite("Text encoder weights")
    if freeze is not FreezeMode.VISION:
        encoders.image.weights, state.image = adamw_step(
            encoders.image.weights, image_grad, state.image, lr, hp
        )
        if not np.all(np.isfinite(encoders.image.weights)):
            raise non_finite("Image encoder weights")


def pretrain(corpus: Corpus, cfg: TrainConfig, steps: int | None = None) -> EncoderPair:
    """Warm start: plain contrastive training of both towers at a constant rate."""
    encoders = initialize_encoders(corpus, cfg)
    steps = cfg.pretrain_steps if steps is None else steps
    rng = _child_rng(cfg.seed, _PRETRAIN_STREAM)
    state = _OptimizerState.zeros(encoders)
    for step in range(steps):
        output, grads = clip_step(encoders, corpus, cfg, rng)
        _apply_update(encoders, state, grads, cfg.pretrain_lr, cfg.adamw, FreezeMode.NONE)
        if cfg.log_every and step % cfg.log_every == 0:
            logger.info("pretrain step %d/%d loss=%.4f", step, steps, output.value)
    return encoders


def train(
    corpus: Corpus,
    cfg: TrainConfig,
    *,
    init: EncoderPair | None = None,
    resume: Checkpoint | None = None,
    until: int | None = None,
    config_hash: str | None = None,
) -> TrainResult:
    """Run steps ``[start, until)`` of a ``total_steps`` schedule.

    Even steps (or every step with alternation off) run the configured objective
    on built examples; odd steps run plain contrastive training on single
    images. ``resume`` continues a checkpoint bit-exactly; ``init`` supplies
    starting encoders, otherwise ``pretrain_steps`` of warm start run first.
    """
    config_hash = config_hash or cfg.digest()
    if resume is not None:
        if resume.config_hash != config_hash:
            raise config_hash_mismatch(config_hash, resume.config_hash)
        encoders = resume.encoders.copy()
        state = _OptimizerState(text=resume.text_moments, image=resume.image_moments)
        start = resume.step
        rng = np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
    else:
        if init is not None:
            encoders = init.copy(ngram=cfg.ngram)
        elif cfg.pretrain_steps:
            encoders = pretrain(corpus, cfg)
        else:
            encoders = initialize_encoders(corpus, cfg)
        state = _OptimizerState.zeros(encoders)
        start = 0
        rng = _child_rng(cfg.seed, _TRAIN_STREAM)

    stop = cfg.total_steps if until is None else until
    if not start <= stop <= cfg.total_steps:
        raise step_out_of_range(stop, cfg.total_steps)

    metrics: list[StepMetrics] = []
    stats = BuildStats()
    steps = tqdm(
        range(start, stop),
        desc="train",
        unit="step",
        disable=None if cfg.progress else True,
    )
    for step in steps:
        lr = lr_at(step, cfg)
        if cfg.alternate_clip_iters and step % 2 == 1:
            output, grads = clip_step(encoders, corpus, cfg, rng)
            entry = StepMetrics(step, lr, output.value, loss_cont=output.value)
        else:
            outcome = clic_step(encoders, corpus, cfg, rng, stats)
            if outcome is None:
                logger.warning("Step %d built no examples; skipping the update", step)
                metrics.append(StepMetrics(step, lr, 0.0))
                continue
            output, grads = outcome
            entry = StepMetrics(
                step,
                lr,
                output.value,
                loss_cont=output.parts.get("cont", 0.0),
                loss_sneg=output.parts.get("sneg", 0.0),
                loss_uni=output.parts.get("uni", 0.0),
            )
        _apply_update(encoders, state, grads, lr, cfg.adamw, cfg.freeze)
        metrics.append(entry)
        if cfg.log_every and step % cfg.log_every == 0:
            logger.info(
                "step %d/%d lr=%.3g loss=%.4f", step, cfg.total_steps, lr, entry.loss_total
            )

    checkpoint = Checkpoint(
        encoders=encoders,
        text_moments=state.text,
        image_moments=state.image,
        step=stop,
        config=cfg.to_dict(),
        config_hash=config_hash,
        seed=cfg.seed,
        rng_state=rng.bit_generator.state,
        freeze=cfg.freeze,
    )
    return TrainResult(checkpoint=checkpoint, metrics=metrics, stats=stats)

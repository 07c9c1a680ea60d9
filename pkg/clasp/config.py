"""Flat ``key = value`` run configuration shared by every CLI command."""

import hashlib
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any

from .batching import CommonNoun, Corpus, GenerationConfig, RandomSameOrientation
from .errors import ConfigError, CorpusError, invalid_config_value, unknown_config_key
from .losses import LossWeights
from .metadata import DEFAULT_PREFIXES, FreezeMode, Objective
from .text import default_lexicon, load_lexicon
from .toyworld import ToyWorld, make_toy_world
from .training import ABLATIONS, TOY_OVERRIDES, TrainConfig

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Mapping

    from .text import Tagger

logger = logging.getLogger(__name__)


def _boolean(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in {"true", "yes", "on", "1"}:
        return True
    if lowered in {"false", "no", "off", "0"}:
        return False
    raise ValueError("expected true or false")


def _integer(minimum: int) -> "Callable[[str], int]":
    def parse(raw: str) -> int:
        value = int(raw)
        if value < minimum:
            raise ValueError(f"must be at least {minimum}")
        return value

    return parse


def _number(*, positive: bool = False) -> "Callable[[str], float]":
    def parse(raw: str) -> float:
        value = float(raw)
        if positive and not value > 0:
            raise ValueError("must be positive")
        return value

    return parse


def _numbers(count: int) -> "Callable[[str], tuple[float, ...]]":
    def parse(raw: str) -> tuple[float, ...]:
        values = tuple(float(part) for part in raw.split(","))
        if len(values) != count:
            raise ValueError(f"expected {count} comma-separated numbers")
        return values

    return parse


def _choice(*options: str) -> "Callable[[str], str]":
    def parse(raw: str) -> str:
        if raw not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return raw

    return parse


def _text(raw: str) -> str:
    return raw


@dataclass(frozen=True, slots=True)
class ConfigKey:
    name: str
    parse: "Callable[[str], Any]"
    default: str
    help: str
    hashed: bool = True


_PRESETS = ("default", "toy", *sorted(ABLATIONS))

KEYS: tuple[ConfigKey, ...] = (
    ConfigKey("seed", _integer(0), "0", "Master seed for every random stream."),
    ConfigKey("threads", _integer(1), "1", "Example-building threads.", hashed=False),
    ConfigKey("preset", _choice(*_PRESETS), "default",
              "Training preset: default, toy, or an ablation row applied to toy."),
    ConfigKey("corpus", _text, "", "JSONL corpus path; empty uses the toy world."),
    ConfigKey("lexicon", _text, "", "Lexicon file; empty uses the bundled one."),
    ConfigKey("min_sentences", _integer(1), "1", "Drop captions with fewer sentences."),
    ConfigKey("toy.n_objects", _integer(2), "8", "Toy world object count."),
    ConfigKey("toy.n_attributes", _integer(2), "8", "Toy world attribute count."),
    ConfigKey("toy.n_scenes", _integer(2), "2000", "Toy world training scenes."),
    ConfigKey("toy.noise_sigma", _number(), "0.05", "Toy feature noise."),
    ConfigKey("toy.n_eval_scenes", _integer(1), "200", "Toy world evaluation scenes."),
    ConfigKey("pairing", _choice("random", "common_noun"), "random", "Partner strategy."),
    ConfigKey("max_candidates", _integer(1), "5", "Common-noun candidate cap."),
    ConfigKey("concat", _boolean, "", "Concatenate image pairs; empty keeps the preset."),
    ConfigKey("final_resize", _integer(0), "0", "Square side after concat; 0 is off."),
    ConfigKey("k_extra", _integer(0), "", "Extra positives; empty keeps the preset."),
    ConfigKey("batch_size", _integer(1), "", "Examples per step."),
    ConfigKey("total_steps", _integer(1), "", "Schedule length."),
    ConfigKey("warmup_frac", _number(positive=True), "", "Warm-up share of the schedule."),
    ConfigKey("lrs", _numbers(3), "", "Start, peak and end learning rates."),
    ConfigKey("betas", _numbers(2), "", "AdamW beta1, beta2."),
    ConfigKey("eps", _number(positive=True), "", "AdamW epsilon."),
    ConfigKey("weight_decay", _number(), "", "AdamW decoupled weight decay."),
    ConfigKey("lambdas", _numbers(3), "", "Weights of the cont, sneg and uni terms."),
    ConfigKey("freeze", _choice(*FreezeMode), "", "Tower left untouched."),
    ConfigKey("alternate_clip_iters", _boolean, "", "Plain contrastive every odd step."),
    ConfigKey("objective", _choice(*Objective), "", "clic or negclip."),
    ConfigKey("temperature", _number(positive=True), "", "Inner-product scale."),
    ConfigKey("embed_dim", _integer(1), "", "Toy encoder output width."),
    ConfigKey("ngram", _integer(1), "", "Longest word n-gram in the text encoder."),
    ConfigKey("pretrain_steps", _integer(0), "", "Warm-start steps before training."),
    ConfigKey("pretrain_lr", _number(positive=True), "", "Warm-start learning rate."),
    ConfigKey("out", _text, "examples.jsonl", "gen output.", hashed=False),
    ConfigKey("checkpoint", _text, "clasp.ckpt", "Checkpoint path.", hashed=False),
    ConfigKey("metrics", _text, "metrics.csv", "Metrics CSV path.", hashed=False),
    ConfigKey("report", _text, "report.json", "eval report path.", hashed=False),
    ConfigKey("progress", _boolean, "true", "Show a progress bar.", hashed=False),
    ConfigKey("log_every", _integer(0), "50", "Steps between log lines.", hashed=False),
)  # fmt: skip

_BY_NAME = {key.name: key for key in KEYS}


def parse_document(text: str, *, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` pairs of a config document; later lines win."""
    raw: dict[str, str] = {}
    for line_num, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        name, sep, value = body.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{line_num}: expected 'key = value'.")
        raw[name.strip()] = value.strip()
    return raw


class Config:
    """Resolved settings: every key of `KEYS`, parsed, with defaults filled in."""

    def __init__(self, raw: "Mapping[str, str] | None" = None) -> None:
        self.raw: dict[str, str] = {key.name: key.default for key in KEYS}
        self.values: dict[str, Any] = {}
        self.update(raw or {})

    def update(self, raw: "Mapping[str, str]") -> None:
        for name, value in raw.items():
            if name not in _BY_NAME:
                raise unknown_config_key(name)
            self.raw[name] = value
        for key in KEYS:
            value = self.raw[key.name]
            if value == "":
                self.values[key.name] = None
                continue
            try:
                self.values[key.name] = key.parse(value)
            except ValueError as exc:
                raise invalid_config_value(key.name, value, str(exc)) from None

    def apply_overrides(self, assignments: "Iterable[str]") -> None:
        """Apply ``key=value`` strings, as given to ``--set``."""
        raw: dict[str, str] = {}
        for assignment in assignments:
            name, sep, value = assignment.partition("=")
            if not sep:
                raise ConfigError(f"--set expects key=value, got {assignment!r}.")
            raw[name.strip()] = value.strip()
        self.update(raw)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Config":
        if path is None:
            return cls()
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise CorpusError(f"Cannot read config {path}: {exc}") from exc
        return cls(parse_document(text, source=str(path)))

    def __getitem__(self, name: str) -> Any:
        return self.values[name]

    def render(self) -> str:
        return "".join(f"{key.name} = {self.raw[key.name]}\n" for key in KEYS)

    def digest(self) -> str:
        """SHA-256 over the sorted ``key=value`` lines of result-affecting keys.

        Values are hashed after parsing, so spellings such as ``00`` and ``0``
        or ``1e-6`` and ``0.000001`` share a digest.
        """
        lines = sorted(f"{k.name}={self.values[k.name]!r}" for k in KEYS if k.hashed)
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]

    @property
    def uses_toy_world(self) -> bool:
        return not self["corpus"]

    def lexicon(self) -> "Tagger":
        path = self["lexicon"]
        return load_lexicon(path) if path else default_lexicon()

    def toy_world(self) -> ToyWorld:
        try:
            return make_toy_world(
                n_objects=self["toy.n_objects"],
                n_attributes=self["toy.n_attributes"],
                n_scenes=self["toy.n_scenes"],
                noise_sigma=self["toy.noise_sigma"],
                seed=self["seed"],
                n_eval_scenes=self["toy.n_eval_scenes"],
            )
        except ValueError as exc:
            raise ConfigError(f"Invalid toy world: {exc}") from None

    def corpus(self) -> Corpus:
        if self.uses_toy_world:
            return self.toy_world().corpus
        corpus = Corpus.load(
            self["corpus"],
            lexicon=self.lexicon(),
            prefixes=DEFAULT_PREFIXES,
            min_sentences=self["min_sentences"],
        )
        logger.info("Loaded %d items from %s", len(corpus), self["corpus"])
        return corpus

    def train_config(self) -> TrainConfig:
        """The preset, then every explicitly set training key on top of it."""
        preset = self["preset"]
        base = TrainConfig() if preset == "default" else TrainConfig(**TOY_OVERRIDES)
        if preset in ABLATIONS:
            base = replace(base, **ABLATIONS[preset])

        updates: dict[str, Any] = {
            "seed": self["seed"],
            "threads": self["threads"],
            "final_resize": self["final_resize"],
            "progress": self["progress"],
            "log_every": self["log_every"],
            "pairing": (
                CommonNoun(self["max_candidates"])
                if self["pairing"] == "common_noun"
                else RandomSameOrientation()
            ),
        }
        for name in (
            "concat", "k_extra", "batch_size", "total_steps", "warmup_frac",
            "alternate_clip_iters", "temperature", "embed_dim", "ngram",
            "pretrain_steps", "pretrain_lr",
        ):  # fmt: skip
            if self[name] is not None:
                updates[name] = self[name]
        if self["lrs"] is not None:
            updates["lr_start"], updates["lr_peak"], updates["lr_end"] = self["lrs"]
        if self["freeze"] is not None:
            updates["freeze"] = FreezeMode(self["freeze"])
        if self["objective"] is not None:
            updates["objective"] = Objective(self["objective"])

        adamw: dict[str, float] = {}
        if self["betas"] is not None:
            adamw["beta1"], adamw["beta2"] = self["betas"]
        if self["eps"] is not None:
            adamw["eps"] = self["eps"]
        if self["weight_decay"] is not None:
            adamw["weight_decay"] = self["weight_decay"]
        if adamw:
            updates["adamw"] = replace(base.adamw, **adamw)
        try:
            if self["lambdas"] is not None:
                updates["weights"] = LossWeights(*self["lambdas"])
            return replace(base, **updates)
        except ValueError as exc:
            raise ConfigError(f"Invalid training settings: {exc}") from None

    def generation_config(self) -> GenerationConfig:
        return self.train_config().generation


"""Corpus loading, partner selection and training-example assembly."""

import hashlib
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from .errors import (
    CorpusError,
    MalformedCaption,
    NoSwapPossible,
    corpus_line_invalid,
    dataset_too_small,
    unknown_id,
)
from .images import FeatureImage, RasterImage, concat_any, final_resize, read_image
from .images import orientation as raster_orientation
from .metadata import (
    DEFAULT_PREFIXES,
    SWAP_EXCLUDED,
    ConcatOrder,
    Orientation,
    UposTag,
)
from .text import (
    RawCaption,
    clean_caption,
    default_lexicon,
    make_hard_negative,
    make_hard_negative_within,
    make_positives,
    make_single_positives,
    split_sentences,
    tag_sentence,
)

if TYPE_CHECKING:
    from collections.abc import Iterable, Iterator, Sequence

    from .images import AnyImage
    from .text import Caption, HardNegative, PositiveSet, TaggedSentence, Tagger

logger = logging.getLogger(__name__)

MAX_PARTNER_ATTEMPTS = 100


@dataclass(frozen=True, slots=True)
class CorpusItem:
    id: str
    caption: "Caption"
    first_tagged: "TaggedSentence"
    image: "AnyImage"
    image_ref: str | None = None

    @property
    def pairing_class(self) -> Orientation | None:
        """Orientation class used for pairing; feature images pair with anything."""
        if isinstance(self.image, RasterImage):
            return raster_orientation(self.image).pairing_class
        return None

    @property
    def nouns(self) -> frozenset[str]:
        return frozenset(
            token.surface.lower()
            for token in self.first_tagged.tokens
            if token.tag is UposTag.NOUN
        )


class Corpus:
    """An indexed, cleaned and tagged collection of image-caption items."""

    def __init__(self, items: "Iterable[CorpusItem]") -> None:
        self.items: tuple[CorpusItem, ...] = tuple(items)
        self._by_id: dict[str, int] = {}
        for index, item in enumerate(self.items):
            if item.id in self._by_id:
                raise CorpusError(f"Duplicate corpus id '{item.id}'.")
            self._by_id[item.id] = index
        self._classes = tuple(item.pairing_class for item in self.items)
        self._nouns = tuple(item.nouns for item in self.items)
        self._noun_index: dict[str, list[int]] = {}
        for index, nouns in enumerate(self._nouns):
            for noun in sorted(nouns):
                self._noun_index.setdefault(noun, []).append(index)

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, index: int) -> CorpusItem:
        return self.items[index]

    def index_of(self, item_id: str) -> int:
        try:
            return self._by_id[item_id]
        except KeyError:
            raise unknown_id(item_id) from None

    def pairing_class(self, index: int) -> Orientation | None:
        return self._classes[index]

    def nouns(self, index: int) -> frozenset[str]:
        return self._nouns[index]

    def sharing_noun(self, index: int) -> list[int]:
        """Indices other than ``index`` whose first sentence shares a noun with it."""
        found: set[int] = set()
        for noun in self._nouns[index]:
            found.update(self._noun_index[noun])
        found.discard(index)
        return sorted(found)

    def digest(self) -> str:
        """SHA-256 over ids, sentences and image content; first 16 hex digits."""
        hasher = hashlib.sha256()
        for item in self.items:
            hasher.update(item.id.encode())
            hasher.update(b"\x00")
            hasher.update("\n".join(item.caption.sentences).encode())
            hasher.update(b"\x00")
            if isinstance(item.image, RasterImage):
                hasher.update(np.asarray(item.image.data.shape, dtype="<i8").tobytes())
                hasher.update(item.image.data.tobytes())
            else:
                hasher.update(item.image.features.astype("<f8").tobytes())
            hasher.update(b"\x01")
        return hasher.hexdigest()[:16]

    @classmethod
    def from_records(
        cls,
        records: "Iterable[tuple[str, str, AnyImage, str | None]]",
        *,
        lexicon: "Tagger | None" = None,
        prefixes: "Sequence[str]" = DEFAULT_PREFIXES,
        min_sentences: int = 1,
    ) -> "Corpus":
        """Clean, split and tag ``(id, caption, image, image_ref)`` records.

        Items whose caption is empty after cleaning, or has fewer than
        ``min_sentences`` sentences, are dropped.
        """
        lexicon = lexicon or default_lexicon()
        items: list[CorpusItem] = []
        dropped = 0
        for item_id, text, image, image_ref in records:
            try:
                caption = split_sentences(clean_caption(RawCaption(item_id, text), prefixes))
            except MalformedCaption as exc:
                logger.warning("Dropping corpus item %s: %s", item_id, exc)
                dropped += 1
                continue
            if len(caption.sentences) < min_sentences:
                dropped += 1
                continue
            items.append(
                CorpusItem(
                    id=item_id,
                    caption=caption,
                    first_tagged=tag_sentence(caption.first, lexicon),
                    image=image,
                    image_ref=image_ref,
                )
            )
        logger.info("Corpus holds %d items (%d dropped)", len(items), dropped)
        return cls(items)

    @classmethod
    def load(
        cls,
        path: str | Path,
        *,
        lexicon: "Tagger | None" = None,
        prefixes: "Sequence[str]" = DEFAULT_PREFIXES,
        min_sentences: int = 1,
    ) -> "Corpus":
        """Read a JSONL corpus with ``id``, ``caption`` and ``image`` or ``features``.

        Image paths are resolved relative to the corpus file.
        """
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise CorpusError(f"Cannot read corpus {path}: {exc}") from exc
        return cls.from_records(
            _parse_corpus_lines(path, lines),
            lexicon=lexicon,
            prefixes=prefixes,
            min_sentences=min_sentences,
        )


def _parse_corpus_lines(
    path: Path, lines: "Sequence[str]"
) -> "Iterator[tuple[str, str, AnyImage, str | None]]":
    for line_num, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise corpus_line_invalid(str(path), line_num, f"invalid JSON ({exc.msg})") from exc
        if not isinstance(record, dict):
            raise corpus_line_invalid(str(path), line_num, "expected a JSON object")
        item_id, caption = record.get("id"), record.get("caption")
        if not isinstance(item_id, str) or not isinstance(caption, str):
            raise corpus_line_invalid(str(path), line_num, "'id' and 'caption' must be strings")

        image: AnyImage
        if "features" in record:
            try:
                features = np.asarray(record["features"], dtype=np.float64)
                image = FeatureImage(features=features)
            except (TypeError, ValueError) as exc:
                raise corpus_line_invalid(str(path), line_num, f"bad features ({exc})") from exc
            yield item_id, caption, image, None
        elif isinstance(record.get("image"), str):
            ref = record["image"]
            yield item_id, caption, read_image(path.parent / ref), ref
        else:
            raise corpus_line_invalid(str(path), line_num, "needs 'image' or 'features'")


@dataclass(frozen=True, slots=True)
class RandomSameOrientation:
    """Pair with a uniformly drawn item of the same orientation class."""


@dataclass(frozen=True, slots=True)
class CommonNoun:
    """Pair with an item whose first sentence shares a noun."""

    max_candidates: int = 5

    def __post_init__(self) -> None:
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be at least 1.")


type PairingStrategy = RandomSameOrientation | CommonNoun


@dataclass(frozen=True, slots=True)
class Partner:
    index: int
    degraded: bool = False
    shared_nouns: frozenset[str] = frozenset()


def _random_partner(i: int, corpus: Corpus, rng: np.random.Generator) -> Partner:
    n = len(corpus)
    wanted = corpus.pairing_class(i)
    for _ in range(MAX_PARTNER_ATTEMPTS):
        j = int(rng.integers(n))
        if j != i and (wanted is None or corpus.pairing_class(j) in (wanted, None)):
            return Partner(index=j)
    j = int(rng.integers(n - 1))
    if j >= i:
        j += 1
    logger.debug("No same-orientation partner for item %d, using %d", i, j)
    return Partner(index=j, degraded=True)


def pick_partner(
    i: int, corpus: Corpus, strategy: PairingStrategy, rng: np.random.Generator
) -> Partner:
    """Choose the item concatenated with item ``i``."""
    if len(corpus) < 2:  # noqa: PLR2004
        raise dataset_too_small(len(corpus))

    if isinstance(strategy, CommonNoun):
        wanted = corpus.pairing_class(i)
        candidates = [
            j
            for j in corpus.sharing_noun(i)
            if wanted is None or corpus.pairing_class(j) in (wanted, None)
        ]
        if candidates:
            if len(candidates) > strategy.max_candidates:
                drawn = rng.choice(candidates, size=strategy.max_candidates, replace=False)
                candidates = [int(j) for j in drawn]
            j = candidates[int(rng.integers(len(candidates)))]
            return Partner(index=j, shared_nouns=corpus.nouns(i) & corpus.nouns(j))
    return _random_partner(i, corpus, rng)


@dataclass(frozen=True, slots=True)
class GenerationConfig:
    k_extra: int = 2
    pairing: PairingStrategy = RandomSameOrientation()
    concat: bool = True
    final_resize: int = 0
    excluded: frozenset[UposTag] = SWAP_EXCLUDED
    threads: int = 1


@dataclass(frozen=True, slots=True)
class Provenance:
    """Everything needed to rebuild an example: items, batch seed and slot."""

    index_a: int
    index_b: int | None
    seed: int
    position: int


@dataclass(frozen=True, slots=True)
class TrainingExample:
    image: "AnyImage"
    positives: "PositiveSet"
    negative: "HardNegative"
    order: ConcatOrder | None
    degraded: bool
    provenance: Provenance | None = None
    shared_nouns: frozenset[str] = frozenset()

    def to_record(self, corpus: Corpus) -> dict[str, Any]:
        """JSON-ready dump: captions, swap, provenance and an image reference."""
        prov = self.provenance
        record: dict[str, Any] = {}
        if prov is not None:
            record["provenance"] = {
                "a": corpus[prov.index_a].id,
                "b": None if prov.index_b is None else corpus[prov.index_b].id,
                "seed": prov.seed,
                "position": prov.position,
            }
        record["order"] = None if self.order is None else self.order.value
        if isinstance(self.image, FeatureImage):
            record["image"] = {"features": self.image.features.tolist()}
        else:
            refs = [] if prov is None else [corpus[prov.index_a].image_ref]
            if prov is not None and prov.index_b is not None:
                refs.append(corpus[prov.index_b].image_ref)
            record["image"] = {
                "sources": refs,
                "width": self.image.width,
                "height": self.image.height,
            }
        swap = self.negative.swapped
        record |= {
            "positives": list(self.positives.texts),
            "negative": self.negative.text,
            "swap": {
                "index_a": swap.index_a,
                "index_b": swap.index_b,
                "tag": None if swap.tag is None else swap.tag.value,
                "words": [swap.word_a, swap.word_b],
            },
            "shared_nouns": sorted(self.shared_nouns),
            "degraded": self.degraded,
        }
        return record


@dataclass(slots=True)
class BuildStats:
    built: int = 0
    skipped: int = 0
    degraded: int = 0
    tags: Counter[str] = field(default_factory=Counter)

    @property
    def attempted(self) -> int:
        return self.built + self.skipped

    @property
    def skip_rate(self) -> float:
        return self.skipped / self.attempted if self.attempted else 0.0

    @property
    def degraded_rate(self) -> float:
        return self.degraded / self.built if self.built else 0.0

    def record(self, example: TrainingExample | None) -> None:
        if example is None:
            self.skipped += 1
            return
        self.built += 1
        self.degraded += int(example.degraded)
        tag = example.negative.swapped.tag
        self.tags["fallback" if tag is None else tag.value] += 1


def example_rngs(seed: int, position: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent partner and build streams for one slot of a batch."""
    partner_seq, build_seq = np.random.SeedSequence(seed, spawn_key=(position,)).spawn(2)
    return np.random.default_rng(partner_seq), np.random.default_rng(build_seq)


def _draw_order(rng: np.random.Generator) -> ConcatOrder:
    return ConcatOrder.AB if rng.integers(2) == 0 else ConcatOrder.BA


def build_example(
    i: int,
    j: int,
    corpus: Corpus,
    cfg: GenerationConfig,
    rng: np.random.Generator,
    *,
    shared_nouns: frozenset[str] = frozenset(),
    partner_degraded: bool = False,
) -> TrainingExample:
    """Concatenate items ``i`` and ``j`` and derive their positives and negative.

    Raises NoSwapPossible when the first sentences admit no swap.
    """
    if i == j:
        raise ValueError("An item cannot be paired with itself.")
    item_a, item_b = corpus[i], corpus[j]
    order = _draw_order(rng)
    image = final_resize(concat_any(item_a.image, item_b.image, order), cfg.final_resize)
    positives = make_positives(item_a.caption, item_b.caption, cfg.k_extra, rng)
    negative = make_hard_negative(
        item_a.first_tagged,
        item_b.first_tagged,
        rng,
        excluded=cfg.excluded,
        forbidden_words=shared_nouns,
    )
    return TrainingExample(
        image=image,
        positives=positives,
        negative=negative,
        order=order,
        degraded=positives.degraded or partner_degraded,
        shared_nouns=shared_nouns,
    )


def build_single_example(
    i: int, corpus: Corpus, cfg: GenerationConfig, rng: np.random.Generator
) -> TrainingExample:
    """The same five-caption construction on one image, without concatenation."""
    item = corpus[i]
    positives = make_single_positives(item.caption, cfg.k_extra, rng)
    negative = make_hard_negative_within(item.first_tagged, rng, excluded=cfg.excluded)
    return TrainingExample(
        image=final_resize(item.image, cfg.final_resize),
        positives=positives,
        negative=negative,
        order=None,
        degraded=positives.degraded,
    )


def _build_slot(
    i: int, seed: int, position: int, corpus: Corpus, cfg: GenerationConfig
) -> TrainingExample | None:
    partner_rng, build_rng = example_rngs(seed, position)
    try:
        if not cfg.concat:
            example = build_single_example(i, corpus, cfg, build_rng)
            return replace(example, provenance=Provenance(i, None, seed, position))
        partner = pick_partner(i, corpus, cfg.pairing, partner_rng)
        example = build_example(
            i,
            partner.index,
            corpus,
            cfg,
            build_rng,
            shared_nouns=partner.shared_nouns,
            partner_degraded=partner.degraded,
        )
        return replace(example, provenance=Provenance(i, partner.index, seed, position))
    except NoSwapPossible as exc:
        logger.debug("Skipping slot %d of batch %d: %s", position, seed, exc)
        return None


def build_batch(
    corpus: Corpus,
    batch_indices: "Sequence[int]",
    cfg: GenerationConfig,
    rng: np.random.Generator,
    *,
    stats: BuildStats | None = None,
) -> list[TrainingExample]:
    """Build one example per index; slots whose pair admits no swap are skipped.

    One batch seed is drawn from ``rng`` and every slot derives its own streams
    from it, so threaded and serial builds agree.
    """
    if not batch_indices:
        raise ValueError("A batch needs at least one index.")
    if cfg.concat and len(corpus) < 2:  # noqa: PLR2004
        raise dataset_too_small(len(corpus))
    seed = int(rng.integers(2**63))

    def build(slot: tuple[int, int]) -> TrainingExample | None:
        position, i = slot
        return _build_slot(i, seed, position, corpus, cfg)

    slots = list(enumerate(batch_indices))
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            built = list(pool.map(build, slots))
    else:
        built = [build(slot) for slot in slots]

    if stats is not None:
        for example in built:
            stats.record(example)
    return [example for example in built if example is not None]


def replay_example(
    provenance: Provenance, corpus: Corpus, cfg: GenerationConfig
) -> TrainingExample:
    """Rebuild the example recorded by ``provenance`` under the same config."""
    example = _build_slot(
        provenance.index_a, provenance.seed, provenance.position, corpus, cfg
    )
    if example is None or example.provenance != provenance:
        raise ValueError(f"Provenance {provenance} does not replay under this config.")
    return example


def generate_examples(
    corpus: Corpus,
    count: int,
    cfg: GenerationConfig,
    seed: int,
    *,
    batch_size: int = 64,
    stats: BuildStats | None = None,
) -> "Iterator[TrainingExample]":
    """Yield up to ``count`` examples for items drawn uniformly from the corpus.

    Drawing stops early if ``2 * count`` slots have been tried.
    """
    rng = np.random.default_rng(seed)
    stats = stats if stats is not None else BuildStats()
    emitted = 0
    while emitted < count and stats.attempted < 2 * count:
        size = min(batch_size, count - emitted)
        indices = [int(i) for i in rng.integers(len(corpus), size=size)]
        for example in build_batch(corpus, indices, cfg, rng, stats=stats):
            yield example
            emitted += 1
    if stats.skipped:
        logger.warning(
            "Skipped %d of %d slots (%.1f%%) with no possible swap",
            stats.skipped,
            stats.attempted,
            100 * stats.skip_rate,
        )

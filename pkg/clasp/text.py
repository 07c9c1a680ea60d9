import logging
import re
from dataclasses import dataclass, replace
from functools import cache
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Protocol

from .errors import (
    CorpusError,
    empty_caption,
    empty_sentence,
    lexicon_line_invalid,
    no_sentences,
    no_swap_possible,
    sentence_not_normalized,
)
from .metadata import DEFAULT_PREFIXES, SWAP_EXCLUDED, UposTag

if TYPE_CHECKING:
    from collections.abc import Collection, Iterable, Mapping, Sequence

    import numpy as np

logger = logging.getLogger(__name__)

MAX_EXTRA_POSITIVES = 3
PUNCTUATION = frozenset(".,;:!?\"'()[]{}")

_SENTENCE_BREAK = re.compile(r"(?<=[.!?])\s+")
_SUFFIX_SECTION = "[suffix]"


class Tagger(Protocol):
    """Anything that assigns a universal tag to a single word."""

    def tag(self, word: str) -> UposTag: ...


@dataclass(frozen=True, slots=True)
class RawCaption:
    id: str
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise empty_caption(self.id)


@dataclass(frozen=True, slots=True)
class Caption:
    sentences: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.sentences:
            raise no_sentences()
        for sentence in self.sentences:
            if not sentence:
                raise empty_sentence()
            if sentence != " ".join(sentence.split()):
                raise sentence_not_normalized(sentence)

    @property
    def first(self) -> str:
        return self.sentences[0]


@dataclass(frozen=True, slots=True)
class Token:
    surface: str
    tag: UposTag
    spaced: bool = True
    """Whether a space preceded this token in its sentence."""

    @property
    def is_word(self) -> bool:
        return self.tag is not UposTag.PUNCT


@dataclass(frozen=True, slots=True)
class TaggedSentence:
    tokens: tuple[Token, ...]
    source: str

    def __post_init__(self) -> None:
        if detokenize(self.tokens) != self.source:
            raise sentence_not_normalized(self.source)

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(token.surface for token in self.tokens)


@dataclass(frozen=True, slots=True)
class Lexicon:
    """Exact-match lexicon backed by ordered suffix rules and a default tag."""

    entries: "Mapping[str, UposTag]"
    suffix_rules: tuple[tuple[str, UposTag], ...] = ()
    default_tag: UposTag = UposTag.NOUN

    def tag(self, word: str) -> UposTag:
        key = word.lower()
        found = self.entries.get(key)
        if found is not None:
            return found
        for suffix, tag in self.suffix_rules:
            if len(key) > len(suffix) and key.endswith(suffix):
                return tag
        return self.default_tag


@dataclass(frozen=True, slots=True)
class PositiveSet:
    p1: str
    p2: str
    extras: tuple[str, ...] = ()
    degraded: bool = False

    @property
    def p3(self) -> str | None:
        return self.extras[0] if self.extras else None

    @property
    def p4(self) -> str | None:
        return self.extras[1] if len(self.extras) > 1 else None

    @property
    def texts(self) -> tuple[str, ...]:
        return (self.p1, self.p2, *self.extras)


@dataclass(frozen=True, slots=True)
class Swap:
    index_a: int
    index_b: int
    tag: UposTag | None
    word_a: str
    word_b: str


@dataclass(frozen=True, slots=True)
class HardNegative:
    text: str
    swapped: Swap


def parse_lexicon(
    text: str, *, source: str = "<lexicon>", default_tag: UposTag = UposTag.NOUN
) -> Lexicon:
    """Parse the ``word<TAB>TAG`` lexicon format with an optional ``[suffix]`` section."""
    entries: dict[str, UposTag] = {}
    suffix_rules: list[tuple[str, UposTag]] = []
    in_suffixes = False
    for line_num, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line == _SUFFIX_SECTION:
            in_suffixes = True
            continue
        parts = line.split("\t")
        if len(parts) != 2:  # noqa: PLR2004
            raise lexicon_line_invalid(source, line_num, raw_line)
        word, raw_tag = parts[0].strip(), parts[1].strip()
        try:
            tag = UposTag(raw_tag)
        except ValueError:
            raise lexicon_line_invalid(source, line_num, raw_line) from None
        if in_suffixes:
            if not word.startswith("-") or len(word) < 2:  # noqa: PLR2004
                raise lexicon_line_invalid(source, line_num, raw_line)
            suffix_rules.append((word[1:].lower(), tag))
        else:
            entries.setdefault(word.lower(), tag)
    return Lexicon(
        entries=entries, suffix_rules=tuple(suffix_rules), default_tag=default_tag
    )


def load_lexicon(path: str | Path, *, default_tag: UposTag = UposTag.NOUN) -> Lexicon:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"Cannot read lexicon {path}: {exc}") from exc
    return parse_lexicon(text, source=str(path), default_tag=default_tag)


@cache
def default_lexicon() -> Lexicon:
    """The bundled mini-lexicon, parsed once per process."""
    data = resources.files("clasp").joinpath("data", "lexicon.tsv")
    lexicon = parse_lexicon(data.read_text(encoding="utf-8"), source="lexicon.tsv")
    logger.debug(
        "Loaded bundled lexicon: %d entries, %d suffix rules",
        len(lexicon.entries),
        len(lexicon.suffix_rules),
    )
    return lexicon


def clean_caption(raw: RawCaption, prefixes: "Sequence[str]" = DEFAULT_PREFIXES) -> str:
    """Strip at most one boilerplate prefix (case-insensitive) and trim."""
    text = raw.text.strip()
    for prefix in prefixes:
        if text[: len(prefix)].casefold() == prefix.casefold():
            text = text[len(prefix) :]
            break
    text = text.strip()
    if not text:
        raise empty_caption(raw.id)
    return text


def split_sentences(text: str) -> Caption:
    """Split after ``.``, ``!`` or ``?`` followed by whitespace; abbreviations split too."""
    fragments = (" ".join(part.split()) for part in _SENTENCE_BREAK.split(text))
    sentences = tuple(fragment for fragment in fragments if fragment)
    if not sentences:
        raise no_sentences()
    return Caption(sentences=sentences)


def _split_chunk(chunk: str) -> tuple[str, str, str]:
    start, end = 0, len(chunk)
    while start < end and chunk[start] in PUNCTUATION:
        start += 1
    while end > start and chunk[end - 1] in PUNCTUATION:
        end -= 1
    return chunk[:start], chunk[start:end], chunk[end:]


def tag_sentence(sentence: str, lexicon: Tagger) -> TaggedSentence:
    """Tokenize on whitespace, peel edge punctuation into PUNCT tokens and tag words."""
    source = " ".join(sentence.split())
    if not source:
        raise empty_sentence()

    tokens: list[Token] = []
    for chunk_index, chunk in enumerate(source.split(" ")):
        leading, core, trailing = _split_chunk(chunk)
        pieces: list[tuple[str, UposTag]] = [(mark, UposTag.PUNCT) for mark in leading]
        if core:
            pieces.append((core, lexicon.tag(core)))
        pieces.extend((mark, UposTag.PUNCT) for mark in trailing)
        for piece_index, (surface, tag) in enumerate(pieces):
            spaced = chunk_index > 0 and piece_index == 0
            tokens.append(Token(surface=surface, tag=tag, spaced=spaced))
    return TaggedSentence(tokens=tuple(tokens), source=source)


def detokenize(tokens: "Iterable[Token]") -> str:
    return "".join(
        f" {token.surface}" if token.spaced else token.surface for token in tokens
    ).removeprefix(" ")


def join_sentences(first: str, second: str) -> str:
    return f"{first} {second}"


def _detail_picks(
    caption: Caption, k_extra: int, rng: "np.random.Generator"
) -> tuple[list[int], bool]:
    if k_extra == 0:
        return [], False
    details = list(range(1, len(caption.sentences)))
    if len(details) >= k_extra:
        picks = rng.choice(details, size=k_extra, replace=False)
        return [int(pick) for pick in picks], False
    pool = details or [0]
    picks = rng.choice(pool, size=k_extra, replace=True)
    return [int(pick) for pick in picks], True


def make_positives(
    cap_a: Caption, cap_b: Caption, k_extra: int, rng: "np.random.Generator"
) -> PositiveSet:
    """Build p1, its reversal p2 and ``k_extra`` detail-sentence positives."""
    if not 0 <= k_extra <= MAX_EXTRA_POSITIVES:
        raise ValueError(f"k_extra must lie in [0, {MAX_EXTRA_POSITIVES}].")

    picks_a, degraded_a = _detail_picks(cap_a, k_extra, rng)
    picks_b, degraded_b = _detail_picks(cap_b, k_extra, rng)
    extras: list[str] = []
    for index_a, index_b in zip(picks_a, picks_b, strict=True):
        first, second = cap_a.sentences[index_a], cap_b.sentences[index_b]
        if rng.integers(2):
            first, second = second, first
        extras.append(join_sentences(first, second))

    degraded = degraded_a or degraded_b
    if degraded:
        logger.debug("Too few detail sentences for %d extra positives", k_extra)
    return PositiveSet(
        p1=join_sentences(cap_a.first, cap_b.first),
        p2=join_sentences(cap_b.first, cap_a.first),
        extras=tuple(extras),
        degraded=degraded,
    )


def make_single_positives(
    caption: Caption, k_extra: int, rng: "np.random.Generator"
) -> PositiveSet:
    """Positives for a lone image: p2 repeats p1, extras are its detail sentences."""
    if not 0 <= k_extra <= MAX_EXTRA_POSITIVES:
        raise ValueError(f"k_extra must lie in [0, {MAX_EXTRA_POSITIVES}].")
    picks, degraded = _detail_picks(caption, k_extra, rng)
    return PositiveSet(
        p1=caption.first,
        p2=caption.first,
        extras=tuple(caption.sentences[pick] for pick in picks),
        degraded=degraded,
    )


type _Candidate = tuple[int, Token]


def _swap_candidates(
    sentence: TaggedSentence,
    excluded: "Collection[UposTag]",
    forbidden: "Collection[str]",
) -> list[_Candidate]:
    return [
        (position, token)
        for position, token in enumerate(sentence.tokens)
        if token.is_word
        and token.tag not in excluded
        and token.surface.lower() not in forbidden
    ]


def _pick_unequal(
    words_a: "Sequence[_Candidate]",
    words_b: "Sequence[_Candidate]",
    rng: "np.random.Generator",
) -> tuple[_Candidate, _Candidate] | None:
    """One pair drawn uniformly from all pairs with unequal surfaces."""
    pairs = [
        (word_a, word_b)
        for word_a in words_a
        for word_b in words_b
        if word_a[1].surface != word_b[1].surface
    ]
    if not pairs:
        return None
    return pairs[int(rng.integers(len(pairs)))]


def _common_tag_choice(
    cands_a: "Sequence[_Candidate]",
    cands_b: "Sequence[_Candidate]",
    rng: "np.random.Generator",
) -> tuple[UposTag, _Candidate, _Candidate] | None:
    shared = {token.tag for _, token in cands_a} & {token.tag for _, token in cands_b}
    viable: list[UposTag] = []
    for tag in sorted(shared):
        words_a = [cand for cand in cands_a if cand[1].tag is tag]
        words_b = [cand for cand in cands_b if cand[1].tag is tag]
        if any(a.surface != b.surface for _, a in words_a for _, b in words_b):
            viable.append(tag)
    if not viable:
        return None
    tag = viable[int(rng.integers(len(viable)))]
    picked = _pick_unequal(
        [cand for cand in cands_a if cand[1].tag is tag],
        [cand for cand in cands_b if cand[1].tag is tag],
        rng,
    )
    assert picked is not None
    return tag, picked[0], picked[1]


def make_hard_negative(
    sa: TaggedSentence,
    sb: TaggedSentence,
    rng: "np.random.Generator",
    *,
    excluded: "Collection[UposTag]" = SWAP_EXCLUDED,
    forbidden_words: "Collection[str]" = frozenset(),
) -> HardNegative:
    """Swap one same-category word of ``sa`` with one of ``sb``.

    A category present in both sentences (outside ``excluded``) is chosen
    uniformly among those offering a pair of unequal surfaces; without one, any
    unequal pair of non-excluded words is swapped and the tag is reported as
    ``None``. Excluded tags and ``forbidden_words`` (case-insensitive) never move,
    so NoSwapPossible means every remaining cross-sentence pair is equal.
    """
    forbidden = {word.lower() for word in forbidden_words}
    cands_a = _swap_candidates(sa, excluded, forbidden)
    cands_b = _swap_candidates(sb, excluded, forbidden)

    tag: UposTag | None
    choice = _common_tag_choice(cands_a, cands_b, rng)
    if choice is not None:
        tag, (index_a, token_a), (index_b, token_b) = choice
    else:
        fallback = _pick_unequal(cands_a, cands_b, rng)
        if fallback is None:
            raise no_swap_possible(sa.source, sb.source)
        tag = None
        (index_a, token_a), (index_b, token_b) = fallback

    tokens_a = list(sa.tokens)
    tokens_b = list(sb.tokens)
    tokens_a[index_a] = replace(token_a, surface=token_b.surface)
    tokens_b[index_b] = replace(token_b, surface=token_a.surface)
    logger.debug(
        "Swapped %r <-> %r (tag %s)", token_a.surface, token_b.surface, tag
    )
    return HardNegative(
        text=join_sentences(detokenize(tokens_a), detokenize(tokens_b)),
        swapped=Swap(
            index_a=index_a,
            index_b=index_b,
            tag=tag,
            word_a=token_a.surface,
            word_b=token_b.surface,
        ),
    )


def make_hard_negative_within(
    sentence: TaggedSentence,
    rng: "np.random.Generator",
    *,
    excluded: "Collection[UposTag]" = SWAP_EXCLUDED,
) -> HardNegative:
    """Swap two words inside one sentence, for single-image training.

    A category qualifies when it holds at least two words with unequal surfaces;
    without one, any two unequal non-excluded words are swapped.
    """
    cands = _swap_candidates(sentence, excluded, ())
    by_tag: dict[UposTag, list[_Candidate]] = {}
    for cand in cands:
        by_tag.setdefault(cand[1].tag, []).append(cand)
    viable = sorted(
        tag
        for tag, words in by_tag.items()
        if len({token.surface for _, token in words}) > 1
    )

    tag: UposTag | None = None
    pool = cands
    if viable:
        tag = viable[int(rng.integers(len(viable)))]
        pool = by_tag[tag]
    picked = _pick_unequal(pool, pool, rng)
    if picked is None:
        raise no_swap_possible(sentence.source, sentence.source)
    (index_a, token_a), (index_b, token_b) = picked

    tokens = list(sentence.tokens)
    tokens[index_a] = replace(token_a, surface=token_b.surface)
    tokens[index_b] = replace(token_b, surface=token_a.surface)
    return HardNegative(
        text=detokenize(tokens),
        swapped=Swap(
            index_a=index_a,
            index_b=index_b,
            tag=tag,
            word_a=token_a.surface,
            word_b=token_b.surface,
        ),
    )

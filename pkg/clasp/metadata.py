import enum


class UposTag(enum.StrEnum):
    """Universal part-of-speech tags."""

    ADJ = "ADJ"
    ADP = "ADP"
    ADV = "ADV"
    AUX = "AUX"
    CCONJ = "CCONJ"
    DET = "DET"
    INTJ = "INTJ"
    NOUN = "NOUN"
    NUM = "NUM"
    PART = "PART"
    PRON = "PRON"
    PROPN = "PROPN"
    PUNCT = "PUNCT"
    SCONJ = "SCONJ"
    SYM = "SYM"
    VERB = "VERB"
    X = "X"


# Closed-class and non-word tags never nominated for a swap.
SWAP_EXCLUDED: frozenset[UposTag] = frozenset({
    UposTag.AUX,
    UposTag.CCONJ,
    UposTag.DET,
    UposTag.INTJ,
    UposTag.PART,
    UposTag.PUNCT,
    UposTag.SCONJ,
    UposTag.SYM,
    UposTag.X,
})


class Orientation(enum.Enum):
    LANDSCAPE = "landscape"
    PORTRAIT = "portrait"
    SQUARE = "square"

    @property
    def pairing_class(self) -> "Orientation":
        """Square images pair with landscape ones."""
        if self is Orientation.SQUARE:
            return Orientation.LANDSCAPE
        return self


class ConcatOrder(enum.Enum):
    AB = "AB"
    BA = "BA"


class FreezeMode(enum.StrEnum):
    NONE = "none"
    VISION = "vision"
    TEXT = "text"


class Objective(enum.StrEnum):
    CLIC = "clic"
    NEGCLIP = "negclip"


DEFAULT_PREFIXES: tuple[str, ...] = (
    "This picture depicts:",
    "This picture shows:",
    "This picture demonstrates:",
)

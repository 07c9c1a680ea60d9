from typing import TYPE_CHECKING, ClassVar

if TYPE_CHECKING:
    from collections.abc import Sequence


class ClaspError(Exception):
    """Base exception for clasp errors."""

    exit_code: ClassVar[int] = 1


class MalformedCaption(ValueError, ClaspError):
    """Raised when caption text violates the sentence invariants."""


class EmptyCaption(MalformedCaption):
    """Raised when a caption has no usable text or no sentences."""


class NoSwapPossible(ClaspError):
    """Raised when no pair of words can be exchanged to form a hard negative."""


class OrientationMismatch(ValueError, ClaspError):
    """Raised when two rasters of different orientation classes are concatenated."""


class DimensionMismatch(ValueError, ClaspError):
    """Raised when two feature images of different dimension are concatenated."""


class DatasetTooSmall(ValueError, ClaspError):
    """Raised when pairing needs more items than the dataset holds."""


class ShapeMismatch(ValueError, ClaspError):
    """Raised when embedding or parameter matrices disagree in shape."""


class NotNormalized(ValueError, ClaspError):
    """Raised when embedding rows are not unit-norm."""


class NonFiniteError(ArithmeticError, ClaspError):
    """Raised when a loss, gradient or embedding holds NaN or infinity."""

    exit_code = 4


class GradientCheckFailed(ArithmeticError, ClaspError):
    """Raised when an analytic gradient disagrees with finite differences."""

    exit_code = 4


class StepOutOfRange(ValueError, ClaspError):
    """Raised when a schedule is queried outside ``[0, total_steps]``."""


class EmptySuite(ValueError, ClaspError):
    """Raised when an evaluation suite has nothing to score."""


class KOutOfRange(ValueError, ClaspError):
    """Raised when Recall@K is requested for an impossible K."""


class UnknownId(LookupError, ClaspError):
    """Raised when a corpus item id does not exist."""

    exit_code = 6


class ConfigError(ValueError, ClaspError):
    """Raised for unknown keys or unparsable values in a configuration."""

    exit_code = 3


class ConfigHashMismatch(ClaspError):
    """Raised when a checkpoint was produced under a different configuration."""

    exit_code = 5


class CorpusError(OSError, ClaspError):
    """Raised when a corpus, lexicon or image file cannot be read or parsed."""

    exit_code = 2


class CheckpointError(OSError, ClaspError):
    """Raised when a checkpoint file is malformed or of an unknown version."""

    exit_code = 2


def empty_caption(caption_id: str) -> EmptyCaption:
    return EmptyCaption(f"Caption '{caption_id}' is empty after cleaning.")


def empty_sentence() -> EmptyCaption:
    return EmptyCaption("Sentences must be non-empty.")


def no_sentences() -> EmptyCaption:
    return EmptyCaption("A caption needs at least one sentence.")


def sentence_not_normalized(sentence: str) -> MalformedCaption:
    return MalformedCaption(
        f"Sentence {sentence!r} must be single-spaced with no line breaks."
    )


def lexicon_line_invalid(source: str, line_num: int, line: str) -> CorpusError:
    return CorpusError(
        f"{source}:{line_num}: expected 'word<TAB>TAG', got {line!r}"
    )


def no_swap_possible(first: str, second: str) -> NoSwapPossible:
    return NoSwapPossible(
        f"No swappable word pair between {first!r} and {second!r}."
    )


def orientation_mismatch(first: str, second: str) -> OrientationMismatch:
    return OrientationMismatch(
        f"Cannot concatenate a {first} image with a {second} image."
    )


def dimension_mismatch(first: int, second: int) -> DimensionMismatch:
    return DimensionMismatch(
        f"Feature images must share a dimension, got {first} and {second}."
    )


def dataset_too_small(size: int) -> DatasetTooSmall:
    return DatasetTooSmall(f"Pairing needs at least 2 items, dataset has {size}.")


def shape_mismatch(
    what: str, expected: "Sequence[int]", actual: "Sequence[int]"
) -> ShapeMismatch:
    return ShapeMismatch(
        f"{what} has shape {tuple(actual)}, expected {tuple(expected)}."
    )


def not_normalized(what: str, worst: float) -> NotNormalized:
    return NotNormalized(
        f"{what} rows must be unit-norm, worst deviation is {worst:.3e}."
    )


def non_finite(what: str) -> NonFiniteError:
    return NonFiniteError(f"{what} contains NaN or infinite values.")


def step_out_of_range(step: int, total: int) -> StepOutOfRange:
    return StepOutOfRange(f"Step {step} is outside the schedule [0, {total}].")


def empty_suite(what: str) -> EmptySuite:
    return EmptySuite(f"Evaluation suite has no {what}.")


def k_out_of_range(k: int, n_texts: int) -> KOutOfRange:
    return KOutOfRange(f"Recall@{k} requires 1 <= k <= {n_texts}.")


def unknown_id(item_id: str) -> UnknownId:
    return UnknownId(f"No corpus item with id '{item_id}'.")


def unknown_config_key(key: str) -> ConfigError:
    return ConfigError(f"Unknown configuration key '{key}'.")


def invalid_config_value(key: str, raw: str, reason: str) -> ConfigError:
    return ConfigError(f"Invalid value {raw!r} for '{key}': {reason}.")


def config_hash_mismatch(expected: str, actual: str) -> ConfigHashMismatch:
    return ConfigHashMismatch(
        f"Checkpoint config hash {actual} does not match {expected}; "
        "pass --force to evaluate anyway."
    )


def corpus_line_invalid(path: str, line_num: int, reason: str) -> CorpusError:
    return CorpusError(f"{path}:{line_num}: {reason}")


def checkpoint_invalid(path: str, reason: str) -> CheckpointError:
    return CheckpointError(f"Checkpoint {path} is unreadable: {reason}.")


def gradient_check_failed(name: str, error: float, threshold: float) -> GradientCheckFailed:
    return GradientCheckFailed(
        f"Gradient check for {name} failed: relative error {error:.3e} "
        f"exceeds {threshold:.0e}."
    )

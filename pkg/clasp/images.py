import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    CorpusError,
    dimension_mismatch,
    non_finite,
    orientation_mismatch,
    shape_mismatch,
)
from .metadata import ConcatOrder, Orientation

if TYPE_CHECKING:
    from collections.abc import Callable

    from numpy.typing import NDArray

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True, eq=False)
class RasterImage:
    """An 8-bit RGB raster stored as a ``height x width x 3`` array."""

    data: "NDArray[np.uint8]"

    def __post_init__(self) -> None:
        if self.data.dtype != np.uint8:
            raise TypeError(f"Raster data must be uint8, got {self.data.dtype}.")
        if self.data.ndim != 3 or self.data.shape[2] != 3 or 0 in self.data.shape:  # noqa: PLR2004
            raise shape_mismatch("Raster", (-1, -1, 3), self.data.shape)

    @classmethod
    def from_bytes(cls, width: int, height: int, samples: bytes) -> "RasterImage":
        """Build a raster from row-major RGB samples."""
        if len(samples) != width * height * 3:
            raise shape_mismatch("Raster samples", (width * height * 3,), (len(samples),))
        data = np.frombuffer(samples, dtype=np.uint8).reshape(height, width, 3)
        return cls(data=data.copy())

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return np.array_equal(self.data, other.data)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, slots=True, eq=False)
class FeatureImage:
    """A real feature vector standing in for an image in toy mode."""

    features: "NDArray[np.float64]"

    def __post_init__(self) -> None:
        if self.features.ndim != 1 or self.features.size == 0:
            raise shape_mismatch("Feature image", (-1,), self.features.shape)
        if not np.all(np.isfinite(self.features)):
            raise non_finite("Feature image")

    @property
    def dim(self) -> int:
        return int(self.features.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureImage):
            return NotImplemented
        return np.array_equal(self.features, other.features)

    __hash__ = None  # type: ignore[assignment]


type AnyImage = RasterImage | FeatureImage
type Decoder = Callable[[bytes], RasterImage]


def orientation(img: RasterImage) -> Orientation:
    if img.width > img.height:
        return Orientation.LANDSCAPE
    if img.height > img.width:
        return Orientation.PORTRAIT
    return Orientation.SQUARE


def _axis_weights(
    size_in: int, size_out: int
) -> "tuple[NDArray[np.intp], NDArray[np.intp], NDArray[np.float64]]":
    centres = (np.arange(size_out, dtype=np.float64) + 0.5) * (size_in / size_out) - 0.5
    centres = np.clip(centres, 0.0, size_in - 1)
    lower = np.floor(centres).astype(np.intp)
    upper = np.minimum(lower + 1, size_in - 1)
    return lower, upper, centres - lower


def resize_bilinear(img: RasterImage, width: int, height: int) -> RasterImage:
    """Bilinear resize with half-pixel centres, clamped edges and round-half-up."""
    if width < 1 or height < 1:
        raise ValueError("Target size must be at least 1x1.")
    if (width, height) == (img.width, img.height):
        return img

    x0, x1, fx = _axis_weights(img.width, width)
    y0, y1, fy = _axis_weights(img.height, height)
    src = img.data.astype(np.float64)
    fx = fx[np.newaxis, :, np.newaxis]
    top = src[y0][:, x0] * (1.0 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1.0 - fx) + src[y1][:, x1] * fx
    fy = fy[:, np.newaxis, np.newaxis]
    blended = top * (1.0 - fy) + bottom * fy
    out = np.clip(np.floor(blended + 0.5), 0, 255).astype(np.uint8)
    return RasterImage(data=out)


def _scaled(length: int, numerator: int, denominator: int) -> int:
    return max(1, int(length * numerator / denominator + 0.5))


def concat_images(a: RasterImage, b: RasterImage, order: ConcatOrder) -> RasterImage:
    """Join two same-orientation rasters, resizing ``b`` to fit ``a``.

    Landscape (and square) pairs stack vertically at ``a``'s width; portrait pairs
    sit side by side at ``a``'s height. ``order`` picks which image leads.
    """
    kind_a = orientation(a).pairing_class
    kind_b = orientation(b).pairing_class
    if kind_a is not kind_b:
        raise orientation_mismatch(kind_a.value, kind_b.value)

    if kind_a is Orientation.LANDSCAPE:
        fitted = resize_bilinear(b, a.width, _scaled(b.height, a.width, b.width))
        axis = 0
    else:
        fitted = resize_bilinear(b, _scaled(b.width, a.height, b.height), a.height)
        axis = 1
    first, second = (a, fitted) if order is ConcatOrder.AB else (fitted, a)
    return RasterImage(data=np.concatenate((first.data, second.data), axis=axis))


def concat_features(a: FeatureImage, b: FeatureImage, order: ConcatOrder) -> FeatureImage:
    if a.dim != b.dim:
        raise dimension_mismatch(a.dim, b.dim)
    first, second = (a, b) if order is ConcatOrder.AB else (b, a)
    return FeatureImage(features=np.concatenate((first.features, second.features)))


def concat_any(a: AnyImage, b: AnyImage, order: ConcatOrder) -> AnyImage:
    if isinstance(a, FeatureImage) and isinstance(b, FeatureImage):
        return concat_features(a, b, order)
    if isinstance(a, RasterImage) and isinstance(b, RasterImage):
        return concat_images(a, b, order)
    raise TypeError("Cannot concatenate a raster with a feature image.")


def final_resize(img: AnyImage, size: int) -> AnyImage:
    """Square-resize a raster after concatenation; ``size == 0`` leaves it alone."""
    if size == 0 or isinstance(img, FeatureImage):
        return img
    return resize_bilinear(img, size, size)


def encode_ppm(img: RasterImage) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(img.data).save(buffer, format="PPM")
    return buffer.getvalue()


def decode_ppm(payload: bytes) -> RasterImage:
    try:
        with Image.open(io.BytesIO(payload), formats=["PPM"]) as opened:
            data = np.asarray(opened.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise CorpusError(f"Invalid PPM payload: {exc}") from exc
    return RasterImage(data=data.copy())


_DECODERS: dict[str, Decoder] = {".ppm": decode_ppm}


def register_decoder(suffix: str, decoder: Decoder) -> None:
    """Register ``decoder`` for files ending in ``suffix`` (case-insensitive)."""
    if not suffix.startswith("."):
        suffix = f".{suffix}"
    _DECODERS[suffix.lower()] = decoder


def read_image(path: str | Path) -> RasterImage:
    path = Path(path)
    decoder = _DECODERS.get(path.suffix.lower())
    if decoder is None:
        raise CorpusError(f"No decoder registered for '{path.suffix}' ({path}).")
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise CorpusError(f"Cannot read image {path}: {exc}") from exc
    return decoder(payload)


def write_ppm(img: RasterImage, path: str | Path) -> None:
    Path(path).write_bytes(encode_ppm(img))

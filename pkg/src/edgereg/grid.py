"""
Raster types shared by every stage of the registration pipeline.

Images are stored as (height, width) float64 arrays, vector fields as
(height, width, 2) arrays holding (dx, dy) in pixel units. Index order is
[y, x] throughout; "width" is the x extent.
"""

from dataclasses import dataclass

import numpy as np

from edgereg.errors import RangeError, ShapeError


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Image2D:
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2 or data.size == 0:
            raise ShapeError(f"Image2D needs a non-empty 2D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise RangeError("Image2D contains non-finite values")
        object.__setattr__(self, "data", _readonly(data))

    @classmethod
    def from_flat(cls, width: int, height: int, values) -> "Image2D":
        values = np.asarray(values, dtype=np.float64)
        if values.size != width * height:
            raise ShapeError(f"expected {width * height} values for {width}x{height}, got {values.size}")
        return cls(values.reshape(height, width))

    @classmethod
    def zeros(cls, width: int, height: int) -> "Image2D":
        return cls(np.zeros((height, width)))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class LabelMap2D:
    labels: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels)
        if labels.ndim != 2 or labels.size == 0:
            raise ShapeError(f"LabelMap2D needs a non-empty 2D array, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise RangeError("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.min() < 0:
            raise RangeError("labels must be non-negative")
        object.__setattr__(self, "labels", _readonly(labels))

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def label_set(self, include_background: bool = False) -> set[int]:
        found = {int(v) for v in np.unique(self.labels)}
        if not include_background:
            found.discard(0)
        return found


@dataclass(frozen=True, eq=False)
class VectorField2D:
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.ndim != 3 or vectors.shape[2] != 2 or vectors.shape[0] * vectors.shape[1] == 0:
            raise ShapeError(f"VectorField2D needs shape (height, width, 2), got {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise RangeError("VectorField2D contains non-finite components")
        object.__setattr__(self, "vectors", _readonly(vectors))

    @classmethod
    def zeros(cls, width: int, height: int) -> "VectorField2D":
        return cls(np.zeros((height, width, 2)))

    @classmethod
    def from_components(cls, dx, dy) -> "VectorField2D":
        return cls(np.stack([np.asarray(dx, dtype=np.float64), np.asarray(dy, dtype=np.float64)], axis=-1))

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape[:2]

    @property
    def dx(self) -> np.ndarray:
        return self.vectors[..., 0]

    @property
    def dy(self) -> np.ndarray:
        return self.vectors[..., 1]

    def __neg__(self) -> "VectorField2D":
        return VectorField2D(-self.vectors)


def check_same_shape(*rasters) -> tuple[int, int]:
    shapes = {tuple(r.shape) for r in rasters}
    if len(shapes) != 1:
        raise ShapeError(f"shape mismatch: {sorted(shapes)}")
    return shapes.pop()


def check_min_size(raster, min_width: int = 2, min_height: int = 2, what: str = "raster") -> None:
    if raster.width < min_width or raster.height < min_height:
        raise ShapeError(
            f"{what} is {raster.width}x{raster.height}, needs at least {min_width}x{min_height}"
        )


def normalize_minmax(img: Image2D) -> Image2D:
    """Map intensities affinely onto [0, 1]; constant images become all zeros."""
    lo = img.data.min()
    hi = img.data.max()
    if hi > lo:
        return Image2D((img.data - lo) / (hi - lo))
    return Image2D(np.zeros_like(img.data))


def downsample(img: Image2D) -> Image2D:
    """Halve both dimensions by 2x2 mean pooling; an odd last row/column is dropped."""
    h, w = img.height // 2, img.width // 2
    if h < 1 or w < 1:
        raise ShapeError(f"cannot downsample a {img.width}x{img.height} image")
    d = img.data[: 2 * h, : 2 * w]
    return Image2D(d.reshape(h, 2, w, 2).mean(axis=(1, 3)))

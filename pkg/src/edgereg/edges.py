import numpy as np
from scipy.ndimage import gaussian_filter

from edgereg.errors import ConfigError
from edgereg.grid import Image2D, VectorField2D, check_min_size


def central_diff(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    (Gx, Gy) of a (height, width) array.

    Interior pixels use central differences, the first and last row/column
    one-sided differences.
    """
    return np.gradient(arr, axis=1), np.gradient(arr, axis=0)


def _central_diff_transpose_1d(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, -1)
    coeff = g.copy()
    coeff[..., 1:-1] *= 0.5
    out = np.zeros_like(g)
    # interior stencil (-1/2, 0, +1/2)
    out[..., 2:] += coeff[..., 1:-1]
    out[..., :-2] -= coeff[..., 1:-1]
    # one-sided rows at both ends
    out[..., 1] += coeff[..., 0]
    out[..., 0] -= coeff[..., 0]
    out[..., -1] += coeff[..., -1]
    out[..., -2] -= coeff[..., -1]
    return np.moveaxis(out, -1, axis)


def central_diff_transpose(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Transpose of central_diff: maps a gradient-shaped cotangent back to an image."""
    return _central_diff_transpose_1d(gx, axis=1) + _central_diff_transpose_1d(gy, axis=0)


def gradient_central(img: Image2D) -> VectorField2D:
    check_min_size(img, what="image")
    gx, gy = central_diff(img.data)
    return VectorField2D.from_components(gx, gy)


def edge_map(img: Image2D, sigma_pre: float = 1.0, normalize: bool = True) -> Image2D:
    """
    Gradient-magnitude edge map.

    Args:
        img: Input image, at least 2x2.
        sigma_pre: Standard deviation in pixels of the Gaussian pre-smoothing
            (truncated at 3 sigma, replicate padding). 0 disables smoothing.
        normalize: Rescale by 1/max so the map lies in [0, 1].
    """
    if sigma_pre < 0:
        raise ConfigError(f"sigma_pre must be >= 0, got {sigma_pre}")
    check_min_size(img, what="image")
    data = img.data
    if sigma_pre > 0:
        data = gaussian_filter(data, sigma=sigma_pre, mode="nearest", truncate=3.0)
    gx, gy = central_diff(data)
    edges = np.sqrt(gx * gx + gy * gy)
    peak = edges.max()
    if normalize and peak > 0:
        edges = edges / peak
    return Image2D(edges)

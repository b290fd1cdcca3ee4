"""
Sampling of rasters at off-grid positions with border clamping.

A BilinearStencil is built once per set of sample positions and then
reused for the forward sample, its derivative with respect to the
positions, and the transpose (scatter) with respect to the raster.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=16)
def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """(xs, ys) pixel coordinates, read-only."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    xs.setflags(write=False)
    ys.setflags(write=False)
    return xs, ys


def _expand(weights: np.ndarray, arr: np.ndarray) -> np.ndarray:
    return weights.reshape(weights.shape + (1,) * (arr.ndim - 2))


@dataclass(frozen=True, eq=False)
class BilinearStencil:
    shape: tuple[int, int]
    x0: np.ndarray
    x1: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    fx: np.ndarray
    fy: np.ndarray
    inside_x: np.ndarray
    inside_y: np.ndarray

    @classmethod
    def at(cls, px: np.ndarray, py: np.ndarray, shape: tuple[int, int]) -> "BilinearStencil":
        """
        Stencil for sampling a (height, width) raster at positions (px, py).

        Positions are clamped to the raster. Integer positions resolve to the
        lower cell, so the interpolation weight sits on the upper corner.
        """
        height, width = shape
        cx = np.clip(px, 0.0, width - 1.0)
        cy = np.clip(py, 0.0, height - 1.0)
        x0 = np.clip(np.ceil(cx) - 1.0, 0, max(width - 2, 0)).astype(np.intp)
        y0 = np.clip(np.ceil(cy) - 1.0, 0, max(height - 2, 0)).astype(np.intp)
        return cls(
            shape=(height, width),
            x0=x0,
            x1=np.minimum(x0 + 1, width - 1),
            y0=y0,
            y1=np.minimum(y0 + 1, height - 1),
            fx=cx - x0,
            fy=cy - y0,
            inside_x=(px >= 0.0) & (px <= width - 1.0) & (width > 1),
            inside_y=(py >= 0.0) & (py <= height - 1.0) & (height > 1),
        )

    @classmethod
    def displaced(cls, displacement: np.ndarray) -> "BilinearStencil":
        """Stencil for x + u(x) with u a (height, width, 2) array."""
        height, width = displacement.shape[:2]
        xs, ys = pixel_grid(height, width)
        return cls.at(xs + displacement[..., 0], ys + displacement[..., 1], (height, width))

    def _corners(self, arr: np.ndarray):
        return arr[self.y0, self.x0], arr[self.y0, self.x1], arr[self.y1, self.x0], arr[self.y1, self.x1]

    def sample(self, arr: np.ndarray) -> np.ndarray:
        a00, a01, a10, a11 = self._corners(arr)
        fx = _expand(self.fx, arr)
        fy = _expand(self.fy, arr)
        top = (1.0 - fx) * a00 + fx * a01
        bottom = (1.0 - fx) * a10 + fx * a11
        return (1.0 - fy) * top + fy * bottom

    def position_gradient(self, arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Derivative of sample(arr) with respect to px and py; zero where clamped."""
        a00, a01, a10, a11 = self._corners(arr)
        fx = _expand(self.fx, arr)
        fy = _expand(self.fy, arr)
        d_px = (1.0 - fy) * (a01 - a00) + fy * (a11 - a10)
        d_py = (1.0 - fx) * (a10 - a00) + fx * (a11 - a01)
        return d_px * _expand(self.inside_x, arr), d_py * _expand(self.inside_y, arr)

    def scatter(self, values: np.ndarray) -> np.ndarray:
        """Transpose of sample(): spread values back onto the four sampled corners."""
        height, width = self.shape
        size = height * width
        wx0, wx1 = 1.0 - self.fx, self.fx
        wy0, wy1 = 1.0 - self.fy, self.fy
        corners = (
            (self.y0 * width + self.x0, wy0 * wx0),
            (self.y0 * width + self.x1, wy0 * wx1),
            (self.y1 * width + self.x0, wy1 * wx0),
            (self.y1 * width + self.x1, wy1 * wx1),
        )
        channels = values.shape[2:]
        flat_values = values.reshape(size, -1)
        out = np.zeros((size, flat_values.shape[1]))
        for index, weight in corners:
            index = index.ravel()
            weight = weight.ravel()
            for c in range(flat_values.shape[1]):
                out[:, c] += np.bincount(index, weights=weight * flat_values[:, c], minlength=size)
        return out.reshape((height, width) + channels)


def sample_nearest(arr: np.ndarray, displacement: np.ndarray) -> np.ndarray:
    """Nearest-neighbour sampling of arr at x + u(x), clamped to the raster."""
    height, width = arr.shape[:2]
    xs, ys = pixel_grid(height, width)
    ix = np.clip(np.floor(xs + displacement[..., 0] + 0.5), 0, width - 1).astype(np.intp)
    iy = np.clip(np.floor(ys + displacement[..., 1] + 0.5), 0, height - 1).astype(np.intp)
    return arr[iy, ix]

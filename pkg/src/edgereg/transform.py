"""
Diffeomorphic transformation machinery.

Velocity and displacement fields are VectorField2D in pixel units; a
displacement u stands for the map phi(x) = x + u(x). Every forward map that
the registration objective passes through has an adjoint here so the
composite gradient can be assembled by the chain rule.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
from scipy.ndimage import map_coordinates

from edgereg.errors import ConfigError, ShapeError
from edgereg.grid import (
    Image2D,
    LabelMap2D,
    VectorField2D,
    check_min_size,
    check_same_shape,
)
from edgereg.sampling import BilinearStencil, pixel_grid, sample_nearest

MAX_SQUARING_STEPS = 12


@dataclass(frozen=True, eq=False)
class BSplineGrid:
    """Cubic B-spline control lattice; control_points has shape (cp_height, cp_width, 2)."""

    spacing: int
    control_points: np.ndarray

    def __post_init__(self):
        if int(self.spacing) != self.spacing or self.spacing < 2:
            raise ConfigError(f"B-spline spacing must be an integer >= 2, got {self.spacing}")
        cp = np.array(self.control_points, dtype=np.float64)
        if cp.ndim != 3 or cp.shape[2] != 2:
            raise ShapeError(f"control points need shape (cp_height, cp_width, 2), got {cp.shape}")
        if not np.all(np.isfinite(cp)):
            raise ShapeError("control points contain non-finite values")
        cp.setflags(write=False)
        object.__setattr__(self, "spacing", int(self.spacing))
        object.__setattr__(self, "control_points", cp)

    @staticmethod
    def lattice_shape(width: int, height: int, spacing: int) -> tuple[int, int]:
        """(cp_height, cp_width) covering a width x height image."""
        return math.ceil(height / spacing) + 3, math.ceil(width / spacing) + 3

    @classmethod
    def zeros(cls, width: int, height: int, spacing: int) -> "BSplineGrid":
        cp_h, cp_w = cls.lattice_shape(width, height, spacing)
        return cls(spacing, np.zeros((cp_h, cp_w, 2)))

    @property
    def cp_width(self) -> int:
        return self.control_points.shape[1]

    @property
    def cp_height(self) -> int:
        return self.control_points.shape[0]

    def covers(self, width: int, height: int) -> bool:
        return (self.cp_height, self.cp_width) == self.lattice_shape(width, height, self.spacing)


@dataclass(frozen=True)
class SquaringConfig:
    steps: int = 6

    def __post_init__(self):
        if not 0 <= self.steps <= MAX_SQUARING_STEPS:
            raise ConfigError(f"squaring steps must be in [0, {MAX_SQUARING_STEPS}], got {self.steps}")


VelocityParams = Union[VectorField2D, BSplineGrid]


# ---------------------------------------------------------------------------
# B-spline tensor product
# ---------------------------------------------------------------------------

def cubic_bspline_weights(u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    u2 = u * u
    u3 = u2 * u
    return (
        (1.0 - u) ** 3 / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    )


@lru_cache(maxsize=32)
def _basis_matrix(n: int, spacing: int, n_cp: int) -> np.ndarray:
    """(n, n_cp) matrix of weights; control index k sits at pixel (k - 1) * spacing."""
    x = np.arange(n)
    cell = x // spacing
    u = (x - cell * spacing) / spacing
    basis = np.zeros((n, n_cp))
    for offset, weight in enumerate(cubic_bspline_weights(u)):
        basis[x, cell + offset] = weight
    basis.setflags(write=False)
    return basis


def _basis_pair(grid: BSplineGrid, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    if not grid.covers(width, height):
        expected = BSplineGrid.lattice_shape(width, height, grid.spacing)
        raise ShapeError(
            f"grid/image shape mismatch: lattice {grid.cp_height}x{grid.cp_width}, "
            f"{width}x{height} image at spacing {grid.spacing} needs {expected[0]}x{expected[1]}"
        )
    return (
        _basis_matrix(height, grid.spacing, grid.cp_height),
        _basis_matrix(width, grid.spacing, grid.cp_width),
    )


def bspline_to_dense(grid: BSplineGrid, width: int, height: int) -> VectorField2D:
    by, bx = _basis_pair(grid, width, height)
    rows = np.einsum("yj,jic->yic", by, grid.control_points)
    return VectorField2D(np.einsum("yic,xi->yxc", rows, bx))


def bspline_adjoint(grid: BSplineGrid, dl_dv: VectorField2D) -> BSplineGrid:
    """Exact transpose of bspline_to_dense: pulls a dense cotangent back onto the lattice."""
    by, bx = _basis_pair(grid, dl_dv.width, dl_dv.height)
    cols = np.einsum("yxc,xi->yic", dl_dv.vectors, bx)
    return BSplineGrid(grid.spacing, np.einsum("yj,yic->jic", by, cols))


def fit_bspline(field: VectorField2D, spacing: int) -> BSplineGrid:
    """Least-squares control lattice reproducing a dense field."""
    cp_h, cp_w = BSplineGrid.lattice_shape(field.width, field.height, spacing)
    by_pinv = np.linalg.pinv(_basis_matrix(field.height, spacing, cp_h))
    bx_pinv = np.linalg.pinv(_basis_matrix(field.width, spacing, cp_w))
    rows = np.einsum("jy,yxc->jxc", by_pinv, field.vectors)
    return BSplineGrid(spacing, np.einsum("jxc,ix->jic", rows, bx_pinv))


def densify(params: VelocityParams, width: int, height: int) -> VectorField2D:
    if isinstance(params, BSplineGrid):
        return bspline_to_dense(params, width, height)
    if params.shape != (height, width):
        raise ShapeError(f"velocity is {params.width}x{params.height}, expected {width}x{height}")
    return params


# ---------------------------------------------------------------------------
# Composition and scaling and squaring
# ---------------------------------------------------------------------------

def _compose_arrays(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    return BilinearStencil.displaced(inner).sample(outer) + inner


def _compose_adjoint_arrays(
    outer: np.ndarray, inner: np.ndarray, grad: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    stencil = BilinearStencil.displaced(inner)
    grad_outer = stencil.scatter(grad)
    d_px, d_py = stencil.position_gradient(outer)
    grad_inner = grad + np.stack(
        [np.sum(grad * d_px, axis=-1), np.sum(grad * d_py, axis=-1)], axis=-1
    )
    return grad_outer, grad_inner


def compose(u_outer: VectorField2D, u_inner: VectorField2D) -> VectorField2D:
    """Displacement of phi_outer o phi_inner: u_outer(x + u_inner(x)) + u_inner(x)."""
    check_same_shape(u_outer, u_inner)
    return VectorField2D(_compose_arrays(u_outer.vectors, u_inner.vectors))


def compose_adjoint(
    u_outer: VectorField2D, u_inner: VectorField2D, dl_dresult: VectorField2D
) -> tuple[VectorField2D, VectorField2D]:
    """(dL/du_outer, dL/du_inner) given dL/d compose(u_outer, u_inner)."""
    check_same_shape(u_outer, u_inner, dl_dresult)
    g_outer, g_inner = _compose_adjoint_arrays(u_outer.vectors, u_inner.vectors, dl_dresult.vectors)
    return VectorField2D(g_outer), VectorField2D(g_inner)


def exp_with_trace(v: np.ndarray, steps: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Scaling and squaring on raw arrays, keeping each squaring input for the adjoint."""
    u = v / 2.0 ** steps
    trace = []
    for _ in range(steps):
        trace.append(u)
        u = _compose_arrays(u, u)
    return u, trace


def exp_adjoint_from_trace(trace: list[np.ndarray], dl_du: np.ndarray) -> np.ndarray:
    grad = dl_du
    for u in reversed(trace):
        g_outer, g_inner = _compose_adjoint_arrays(u, u, grad)
        grad = g_outer + g_inner
    return grad / 2.0 ** len(trace)


def svf_exp(v: VectorField2D, cfg: SquaringConfig = SquaringConfig()) -> VectorField2D:
    u, _ = exp_with_trace(v.vectors, cfg.steps)
    return VectorField2D(u)


def svf_exp_adjoint(v: VectorField2D, cfg: SquaringConfig, dl_du: VectorField2D) -> VectorField2D:
    check_same_shape(v, dl_du)
    _, trace = exp_with_trace(v.vectors, cfg.steps)
    return VectorField2D(exp_adjoint_from_trace(trace, dl_du.vectors))


# ---------------------------------------------------------------------------
# Warping
# ---------------------------------------------------------------------------

def warp_image(img: Image2D, u: VectorField2D) -> Image2D:
    """out(x) = img(x + u(x)), bilinear, border-clamped."""
    check_same_shape(img, u)
    return Image2D(BilinearStencil.displaced(u.vectors).sample(img.data))


def warp_adjoint(img: Image2D, u: VectorField2D, dl_dout: Image2D) -> VectorField2D:
    """dL/du for L depending on warp_image(img, u) through dl_dout."""
    check_same_shape(img, u, dl_dout)
    d_px, d_py = BilinearStencil.displaced(u.vectors).position_gradient(img.data)
    g = dl_dout.data
    return VectorField2D.from_components(g * d_px, g * d_py)


def warp_labels(labels: LabelMap2D, u: VectorField2D) -> LabelMap2D:
    check_same_shape(labels, u)
    return LabelMap2D(sample_nearest(labels.labels, u.vectors))


def upsample_field(field: VectorField2D, width: int, height: int) -> VectorField2D:
    """
    Bilinear upsampling onto the next finer pyramid level.

    The target is twice the size of field, plus one when the finer level had
    an odd row or column that 2x2 pooling dropped. Coarse pixel i covers fine
    pixels 2i and 2i + 1, and vectors are doubled so displacements stay in
    pixel units.
    """
    if width // 2 != field.width or height // 2 != field.height:
        raise ShapeError(
            f"cannot upsample a {field.width}x{field.height} field to {width}x{height}"
        )
    xs, ys = pixel_grid(height, width)
    coords = np.stack([(ys - 0.5) / 2.0, (xs - 0.5) / 2.0])
    dx = map_coordinates(field.dx, coords, order=1, mode="nearest")
    dy = map_coordinates(field.dy, coords, order=1, mode="nearest")
    return VectorField2D.from_components(2.0 * dx, 2.0 * dy)


# ---------------------------------------------------------------------------
# Jacobian analysis
# ---------------------------------------------------------------------------

def jacobian_determinant(u: VectorField2D) -> Image2D:
    check_min_size(u, what="field")
    dux_dy, dux_dx = np.gradient(u.dx)
    duy_dy, duy_dx = np.gradient(u.dy)
    return Image2D((1.0 + dux_dx) * (1.0 + duy_dy) - dux_dy * duy_dx)

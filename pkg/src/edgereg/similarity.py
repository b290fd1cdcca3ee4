"""
Loss terms of the composite objective.

Every function returns a LossValueGrad whose value is a mean over pixels (so
weights carry over between image sizes) and whose grad is the analytic
derivative with respect to the second argument, or the velocity field for
the regularizer.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.ndimage import correlate1d

from edgereg.edges import central_diff, central_diff_transpose
from edgereg.errors import ConfigError, RangeError
from edgereg.grid import Image2D, VectorField2D, check_min_size, check_same_shape

ENTROPY_FLOOR = 1e-12
NGF_EPS_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class LossValueGrad:
    value: float
    grad: Union[Image2D, VectorField2D]

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise RangeError(f"loss value is not finite: {self.value}")
        object.__setattr__(self, "value", float(self.value))


def _window_sum(arr: np.ndarray, window: int) -> np.ndarray:
    """Sum over the window x window neighbourhood, clipped at the borders."""
    ones = np.ones(window)
    out = correlate1d(arr, ones, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, ones, axis=1, mode="constant", cval=0.0)


# ---------------------------------------------------------------------------
# LNCC
# ---------------------------------------------------------------------------

def lncc(fixed: Image2D, moving: Image2D, window: int = 9, eps: float = 1e-5) -> LossValueGrad:
    """
    Negative local normalized cross correlation.

    Args:
        fixed: Reference image F.
        moving: Image M the gradient is taken with respect to.
        window: Odd side length of the square neighbourhood (>= 3).
        eps: Stabilizer added to varF * varM.

    Returns:
        LossValueGrad with value -mean(cc) in [-1, 0] and grad an Image2D.
    """
    check_same_shape(fixed, moving)
    if window < 3 or window % 2 == 0:
        raise ConfigError(f"LNCC window must be odd and >= 3, got {window}")
    if eps <= 0:
        raise ConfigError(f"LNCC eps must be positive, got {eps}")

    f = fixed.data
    m = moving.data
    n = _window_sum(np.ones_like(f), window)
    sum_f = _window_sum(f, window)
    sum_m = _window_sum(m, window)
    mean_f = sum_f / n
    mean_m = sum_m / n

    cross = _window_sum(f * m, window) - sum_f * mean_m
    var_f = _window_sum(f * f, window) - sum_f * mean_f
    var_m = _window_sum(m * m, window) - sum_m * mean_m
    denom = var_f * var_m + eps
    cc = cross * cross / denom

    # d cc / d cross and d cc / d var_m, pulled back through the window sums
    a = 2.0 * cross / denom
    b = -cross * cross * var_f / (denom * denom)
    dcc_dm = (
        f * _window_sum(a, window)
        - _window_sum(a * mean_f, window)
        + 2.0 * m * _window_sum(b, window)
        - 2.0 * _window_sum(b * mean_m, window)
    )
    return LossValueGrad(-cc.mean(), Image2D(-dcc_dm / f.size))


# ---------------------------------------------------------------------------
# NMI
# ---------------------------------------------------------------------------

def _parzen_weights(values: np.ndarray, centers: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Normalized Gaussian bin weights (N, bins) and the exponent derivative a_k = -(i - b_k) / sigma^2."""
    diff = values[:, None] - centers[None, :]
    exponent = -0.5 * (diff / sigma) ** 2
    exponent -= exponent.max(axis=1, keepdims=True)
    weights = np.exp(exponent)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights, -diff / (sigma * sigma)


def _entropy(p: np.ndarray) -> float:
    return float(-np.sum(p * np.log(np.maximum(p, ENTROPY_FLOOR))))


def _entropy_derivative(p: np.ndarray) -> np.ndarray:
    return np.where(p > ENTROPY_FLOOR, -(np.log(np.maximum(p, ENTROPY_FLOOR)) + 1.0), -np.log(ENTROPY_FLOOR))


def check_unit_range(img: Image2D, name: str) -> None:
    lo, hi = img.data.min(), img.data.max()
    if lo < 0.0 or hi > 1.0:
        raise RangeError(f"{name} intensities must lie in [0, 1] for NMI, got [{lo:g}, {hi:g}]")


def nmi(fixed: Image2D, moving: Image2D, bins: int = 64, sigma_ratio: float = 0.5) -> LossValueGrad:
    """
    Negative normalized mutual information (H_F + H_M) / H_FM from a Parzen
    (Gaussian soft-binned) joint histogram.
    """
    check_same_shape(fixed, moving)
    if bins < 8:
        raise ConfigError(f"NMI needs at least 8 bins, got {bins}")
    if sigma_ratio <= 0:
        raise ConfigError(f"NMI sigma_ratio must be positive, got {sigma_ratio}")
    check_unit_range(fixed, "fixed")
    check_unit_range(moving, "moving")

    centers = (np.arange(bins) + 0.5) / bins
    sigma = sigma_ratio / bins
    w_f, _ = _parzen_weights(fixed.data.ravel(), centers, sigma)
    w_m, a_m = _parzen_weights(moving.data.ravel(), centers, sigma)
    count = w_f.shape[0]

    joint = w_f.T @ w_m / count
    p_f = w_f.mean(axis=0)
    p_m = w_m.mean(axis=0)
    h_f = _entropy(p_f)
    h_m = _entropy(p_m)
    h_joint = _entropy(joint)
    value = (h_f + h_m) / h_joint

    # d NMI / d w_m(x, l)
    g_marginal = _entropy_derivative(p_m) / h_joint
    g_joint = -(h_f + h_m) / (h_joint * h_joint) * _entropy_derivative(joint)
    g_weights = (g_marginal[None, :] + w_f @ g_joint) / count

    # through the normalized Gaussian weights to the intensity
    gw = g_weights * w_m
    d_value = np.sum(gw * a_m, axis=1) - gw.sum(axis=1) * np.sum(w_m * a_m, axis=1)
    return LossValueGrad(-value, Image2D(-d_value.reshape(moving.shape)))


# ---------------------------------------------------------------------------
# NGF
# ---------------------------------------------------------------------------

def _ngf_eps(gx: np.ndarray, gy: np.ndarray, eps_rel: float) -> tuple[float, bool]:
    raw = eps_rel * float(np.mean(np.hypot(gx, gy)))
    if raw > NGF_EPS_FLOOR:
        return raw, False
    return NGF_EPS_FLOOR, True


def ngf(fixed: Image2D, moving: Image2D, eps_rel: float = 0.01) -> LossValueGrad:
    """
    Normalized gradient field distance, mean of 1 - (g_F . g_M)^2 / ((|g_F|^2 + e_F^2)(|g_M|^2 + e_M^2)).

    e_I is eps_rel times the mean gradient magnitude of image I, floored at
    1e-8; the gradient includes its dependence on M.
    """
    check_same_shape(fixed, moving)
    check_min_size(fixed, what="image")
    if eps_rel <= 0:
        raise ConfigError(f"NGF eps_rel must be positive, got {eps_rel}")

    fx, fy = central_diff(fixed.data)
    mx, my = central_diff(moving.data)
    eps_f, _ = _ngf_eps(fx, fy, eps_rel)
    eps_m, m_floored = _ngf_eps(mx, my, eps_rel)

    dot = fx * mx + fy * my
    p = fx * fx + fy * fy + eps_f * eps_f
    q = mx * mx + my * my + eps_m * eps_m
    ratio = dot * dot / (p * q)
    count = dot.size

    # d value / d g_M per pixel
    coef_f = -2.0 * dot / (p * q) / count
    coef_m = 2.0 * dot * dot / (p * q * q) / count
    gx = coef_f * fx + coef_m * mx
    gy = coef_f * fy + coef_m * my

    if not m_floored:
        d_value_d_eps = float(np.sum(dot * dot / (p * q * q))) * 2.0 * eps_m / count
        norm = np.hypot(mx, my)
        safe = np.where(norm > 0, norm, 1.0)
        scale = np.where(norm > 0, d_value_d_eps * eps_rel / count / safe, 0.0)
        gx = gx + scale * mx
        gy = gy + scale * my

    return LossValueGrad(float(np.mean(1.0 - ratio)), Image2D(central_diff_transpose(gx, gy)))


# ---------------------------------------------------------------------------
# MSE and regularizer
# ---------------------------------------------------------------------------

def mse(fixed: Image2D, moving: Image2D) -> LossValueGrad:
    check_same_shape(fixed, moving)
    diff = moving.data - fixed.data
    return LossValueGrad(float(np.mean(diff * diff)), Image2D(2.0 * diff / diff.size))


def reg_diffusion(v: VectorField2D) -> LossValueGrad:
    """
    Diffusion regularizer: squared forward differences in x and y, averaged
    over pixels, components and the two directions. Border-straddling pairs
    are omitted.
    """
    check_min_size(v, what="velocity field")
    vec = v.vectors
    norm = 4.0 * v.width * v.height
    diff_x = vec[:, 1:] - vec[:, :-1]
    diff_y = vec[1:] - vec[:-1]
    value = (np.sum(diff_x * diff_x) + np.sum(diff_y * diff_y)) / norm

    grad = np.zeros_like(vec)
    grad[:, 1:] += 2.0 * diff_x / norm
    grad[:, :-1] -= 2.0 * diff_x / norm
    grad[1:] += 2.0 * diff_y / norm
    grad[:-1] -= 2.0 * diff_y / norm
    return LossValueGrad(value, VectorField2D(grad))

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from edgereg.grid import Image2D, VectorField2D
from edgereg.sampling import BilinearStencil, pixel_grid


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def random_image(rng):
    """Factory for random images with intensities in [lo, hi]."""

    def make(width: int = 16, height: int = 16, lo: float = 0.05, hi: float = 0.95, smooth: float = 0.0) -> Image2D:
        data = rng.uniform(lo, hi, (height, width))
        if smooth > 0:
            data = gaussian_filter(data, smooth, mode="nearest")
            data = lo + (hi - lo) * (data - data.min()) / (data.max() - data.min())
        return Image2D(data)

    return make


@pytest.fixture
def smooth_field(rng):
    """Factory for Gaussian-smoothed random vector fields scaled to a given max |component|."""

    def make(width: int = 16, height: int = 16, max_abs: float = 1.0, sigma: float = 2.0) -> VectorField2D:
        noise = rng.standard_normal((height, width, 2))
        smoothed = np.stack([gaussian_filter(noise[..., c], sigma, mode="nearest") for c in range(2)], axis=-1)
        return VectorField2D(smoothed * (max_abs / np.abs(smoothed).max()))

    return make


@pytest.fixture
def finite_difference():
    """Central-difference gradient of a scalar function of an array, step 1e-6."""

    def fd(fun, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
        x = np.array(x, dtype=np.float64)
        grad = np.zeros_like(x)
        flat = x.reshape(-1)
        out = grad.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            up = fun(x.copy())
            flat[i] = saved - step
            down = fun(x.copy())
            flat[i] = saved
            out[i] = (up - down) / (2.0 * step)
        return grad

    return fd


@pytest.fixture
def rel_error():
    """Norm-relative error max|a - b| / max|b|."""

    def err(analytic: np.ndarray, reference: np.ndarray) -> float:
        scale = np.abs(reference).max()
        return float(np.abs(analytic - reference).max() / scale) if scale > 0 else float(np.abs(analytic).max())

    return err


@pytest.fixture(scope="session")
def euler_flow():
    """Displacement after integrating dx/dt = v(x) over unit time with forward Euler."""

    def integrate(v: VectorField2D, steps: int) -> np.ndarray:
        xs, ys = pixel_grid(v.height, v.width)
        px, py = xs.copy(), ys.copy()
        h = 1.0 / steps
        for _ in range(steps):
            vel = BilinearStencil.at(px, py, v.shape).sample(v.vectors)
            px = px + h * vel[..., 0]
            py = py + h * vel[..., 1]
        return np.stack([px - xs, py - ys], axis=-1)

    return integrate

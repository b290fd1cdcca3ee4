"""
Seeded multi-modal phantom pairs with ground-truth segmentations and
deformations.

A phantom has five labels: background, an outer ring, an inner body and two
interior structures. Modality A renders them with increasing intensities,
modality B with a non-monotone permutation, so no global monotone intensity
map relates the two.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from edgereg.errors import ConfigError, DataError
from edgereg.fileio import (
    load_labels_pgm,
    load_pgm,
    read_field,
    save_labels_pgm,
    save_pgm,
    write_field,
)
from edgereg.grid import Image2D, LabelMap2D, VectorField2D, check_same_shape
from edgereg.sampling import pixel_grid
from edgereg.transform import SquaringConfig, svf_exp, warp_image, warp_labels

LOGGER = logging.getLogger(__name__)

MODALITY_A = (0.0, 0.3, 0.5, 0.7, 0.9)
MODALITY_B = (0.0, 0.8, 0.3, 0.9, 0.4)
NOISE_SIGMA = 0.02
BIAS_AMPLITUDE = 0.1
MIN_PHANTOM_SIZE = 64

# geometry as fractions of the phantom size
OUTER_RADIUS = 0.40
RING_FRACTION = 0.15
STRUCTURE_RADIUS = 0.06

MANIFEST_NAME = "manifest.json"

# stream ids under one seed
_SHAPE_STREAM = 0
_SVF_STREAM = 1
_NOISE_A_STREAM = 2
_NOISE_B_STREAM = 3

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class PhantomPair:
    fixed: Image2D
    moving: Image2D
    fixed_seg: LabelMap2D
    moving_seg: LabelMap2D
    gt_displacement: VectorField2D
    seed: int
    max_disp: float = 0.0

    def __post_init__(self):
        check_same_shape(self.fixed, self.moving, self.fixed_seg, self.moving_seg, self.gt_displacement)

    @property
    def size(self) -> int:
        return self.fixed.width


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def _radial_profile(rng: np.random.Generator, radius: float, wobble: float, harmonics: int = 4):
    """Random smooth closed curve r(theta) = radius * (1 + sum a_k cos(k theta + p_k)), |sum a_k| <= wobble."""
    amps = rng.uniform(0.0, 1.0, harmonics)
    amps *= wobble / amps.sum()
    phases = rng.uniform(0.0, 2.0 * np.pi, harmonics)
    orders = np.arange(2, 2 + harmonics)

    def profile(theta: np.ndarray) -> np.ndarray:
        ripple = np.cos(orders[:, None, None] * theta[None] + phases[:, None, None])
        return radius * (1.0 + np.tensordot(amps, ripple, axes=1))

    return profile


def _region(xs, ys, cx, cy, profile) -> np.ndarray:
    theta = np.arctan2(ys - cy, xs - cx)
    return np.hypot(xs - cx, ys - cy) < profile(theta)


def _phantom_labels(seed: int, size: int) -> np.ndarray:
    rng = _rng(seed, _SHAPE_STREAM)
    xs, ys = pixel_grid(size, size)
    centre = (size - 1) / 2.0
    cx, cy = centre + rng.uniform(-0.02, 0.02, 2) * size

    outer = _radial_profile(rng, OUTER_RADIUS * size, 0.12)
    labels = np.zeros((size, size), dtype=np.int64)
    labels[_region(xs, ys, cx, cy, outer)] = 1
    # inner boundary follows the outer one so the ring keeps its thickness
    labels[_region(xs, ys, cx, cy, lambda theta: (1.0 - RING_FRACTION) * outer(theta))] = 2
    for label, side in ((3, -1.0), (4, 1.0)):
        bx = cx + side * 0.14 * size + rng.uniform(-0.02, 0.02) * size
        by = cy + rng.uniform(-0.02, 0.02) * size
        labels[_region(xs, ys, bx, by, _radial_profile(rng, STRUCTURE_RADIUS * size, 0.12))] = label
    return labels


def _bias_field(rng: np.random.Generator, size: int, amplitude: float) -> np.ndarray:
    if amplitude == 0:
        return np.ones((size, size))
    smooth = gaussian_filter(rng.standard_normal((size, size)), sigma=size / 4.0, mode="nearest")
    smooth /= np.abs(smooth).max()
    return 1.0 + amplitude * smooth


def render(labels: LabelMap2D, intensities, rng: np.random.Generator, noise_sigma: float, bias_amplitude: float) -> Image2D:
    """Piecewise-constant rendering with a multiplicative bias and additive Gaussian noise, clipped to [0, 1]."""
    table = np.asarray(intensities, dtype=np.float64)
    if labels.labels.max() >= table.size:
        raise DataError(f"label {labels.labels.max()} has no intensity")
    data = table[labels.labels] * _bias_field(rng, labels.width, bias_amplitude)
    if noise_sigma > 0:
        data = data + rng.normal(0.0, noise_sigma, data.shape)
    return Image2D(np.clip(data, 0.0, 1.0))


def make_phantom(
    seed: int,
    size: int = 192,
    noise_sigma: float = NOISE_SIGMA,
    bias_amplitude: float = BIAS_AMPLITUDE,
) -> tuple[LabelMap2D, Image2D, Image2D]:
    """
    Returns:
        (labels, modality A rendering, modality B rendering)
    """
    if size < MIN_PHANTOM_SIZE:
        raise ConfigError(f"phantom size must be >= {MIN_PHANTOM_SIZE}, got {size}")
    if noise_sigma < 0 or bias_amplitude < 0:
        raise ConfigError("noise_sigma and bias_amplitude must be non-negative")
    labels = LabelMap2D(_phantom_labels(seed, size))
    image_a = render(labels, MODALITY_A, _rng(seed, _NOISE_A_STREAM), noise_sigma, bias_amplitude)
    image_b = render(labels, MODALITY_B, _rng(seed, _NOISE_B_STREAM), noise_sigma, bias_amplitude)
    return labels, image_a, image_b


def random_smooth_svf(
    seed: int,
    size: int,
    max_disp: float,
    smooth_sigma: Optional[float] = None,
    squaring: SquaringConfig = SquaringConfig(),
) -> VectorField2D:
    """
    Gaussian-smoothed white noise rescaled so that the largest displacement
    component of its exponential is max_disp (to within 1%).
    """
    if size < 2:
        raise ConfigError(f"size must be >= 2, got {size}")
    if not 0 <= max_disp < size / 8:
        raise ConfigError(f"max_disp must be in [0, {size / 8:g}), got {max_disp}")
    if max_disp == 0:
        return VectorField2D.zeros(size, size)
    if smooth_sigma is None:
        smooth_sigma = size / 12.0
    if smooth_sigma <= 0:
        raise ConfigError(f"smooth_sigma must be positive, got {smooth_sigma}")

    # filter a padded canvas and crop, so the field's variance is the same
    # everywhere instead of peaking at the replicated borders
    pad = int(np.ceil(4.0 * smooth_sigma))
    noise = _rng(seed, _SVF_STREAM).standard_normal((size + 2 * pad, size + 2 * pad, 2))
    crop = (slice(pad, pad + size), slice(pad, pad + size))
    base = np.stack([gaussian_filter(noise[..., c], sigma=smooth_sigma)[crop] for c in range(2)], axis=-1)
    base /= np.abs(base).max()

    scale = max_disp
    for _ in range(20):
        reached = np.abs(svf_exp(VectorField2D(scale * base), squaring).vectors).max()
        if abs(reached - max_disp) <= 0.01 * max_disp:
            break
        scale *= max_disp / reached
    return VectorField2D(scale * base)


def make_pair(seed: int, size: int = 192, max_disp: float = 8.0) -> PhantomPair:
    labels, image_a, image_b = make_phantom(seed, size)
    u = svf_exp(random_smooth_svf(seed, size, max_disp))
    return PhantomPair(
        fixed=image_a,
        moving=warp_image(image_b, u),
        fixed_seg=labels,
        moving_seg=warp_labels(labels, u),
        gt_displacement=u,
        seed=seed,
        max_disp=max_disp,
    )


_PAIR_FILES = {
    "fixed": "fixed.pgm",
    "moving": "moving.pgm",
    "fixed_seg": "fixed_seg.pgm",
    "moving_seg": "moving_seg.pgm",
    "gt_displacement": "gt_disp.edr1",
}


def write_pair(pair: PhantomPair, out_dir: PathLike) -> Path:
    """Write all rasters of a pair plus manifest.json; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_pgm(pair.fixed, out_dir / _PAIR_FILES["fixed"], maxval=65535)
    save_pgm(pair.moving, out_dir / _PAIR_FILES["moving"], maxval=65535)
    save_labels_pgm(pair.fixed_seg, out_dir / _PAIR_FILES["fixed_seg"])
    save_labels_pgm(pair.moving_seg, out_dir / _PAIR_FILES["moving_seg"])
    write_field(pair.gt_displacement, out_dir / _PAIR_FILES["gt_displacement"])

    manifest = {
        "seed": pair.seed,
        "size": pair.size,
        "max_disp": pair.max_disp,
        "files": dict(_PAIR_FILES),
    }
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2))
    LOGGER.info(f"Wrote pair seed={pair.seed} to {out_dir}")
    return manifest_path


def load_pair(manifest_path: PathLike) -> PhantomPair:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DataError(f"missing manifest {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
        files = manifest["files"]
        root = manifest_path.parent
        return PhantomPair(
            fixed=load_pgm(root / files["fixed"]),
            moving=load_pgm(root / files["moving"]),
            fixed_seg=load_labels_pgm(root / files["fixed_seg"]),
            moving_seg=load_labels_pgm(root / files["moving_seg"]),
            gt_displacement=read_field(root / files["gt_displacement"]),
            seed=int(manifest["seed"]),
            max_disp=float(manifest.get("max_disp", 0.0)),
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"malformed manifest {manifest_path}: {exc}") from exc

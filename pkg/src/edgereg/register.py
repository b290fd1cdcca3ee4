"""
Registration driver: the composite objective and its multi-resolution
optimization.

The image branch and the edge branch are warped by one shared deformation,
so their gradients are summed into a single dL/du before it is pulled back
through the exponential map.
"""

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from edgereg.edges import edge_map
from edgereg.errors import ConfigError, DivergenceError, RangeError
from edgereg.grid import (
    Image2D,
    VectorField2D,
    check_min_size,
    check_same_shape,
    downsample,
    normalize_minmax,
)
from edgereg.optim import AdamState, OptimizerConfig, adam_step, lr_at
from edgereg.similarity import (
    LossValueGrad,
    check_unit_range,
    lncc,
    mse,
    ngf,
    nmi,
    reg_diffusion,
)
from edgereg.transform import (
    MAX_SQUARING_STEPS,
    BSplineGrid,
    SquaringConfig,
    VelocityParams,
    bspline_adjoint,
    densify,
    exp_adjoint_from_trace,
    exp_with_trace,
    fit_bspline,
    svf_exp,
    upsample_field,
    warp_adjoint,
    warp_image,
)

LOGGER = logging.getLogger(__name__)

IM_SIM_CHOICES = ("lncc", "nmi", "ngf", "mse")
ED_SIM_CHOICES = ("lncc", "mse", "none")
MODEL_CHOICES = ("svf-dense", "svf-bspline")

MIN_IMAGE_SIZE = 16
MIN_LEVEL_SIZE = 8
LOG_EVERY = 50


@dataclass(frozen=True)
class RegistrationConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.1
    im_sim: str = "lncc"
    ed_sim: str = "lncc"
    model: str = "svf-dense"
    spacing: int = 8
    steps: int = 6
    levels: int = 3
    iters_per_level: int = 300
    window: int = 9
    lncc_eps: float = 1e-5
    bins: int = 64
    sigma_ratio: float = 0.5
    eps_rel: float = 0.01
    sigma_pre: float = 1.0
    update_sigma: float = 2.0
    edge_normalize: bool = True
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not self.lambda1 + self.lambda2 > 0:
            raise ConfigError("lambda1 + lambda2 must be positive")
        if self.im_sim not in IM_SIM_CHOICES:
            raise ConfigError(f"im_sim must be one of {IM_SIM_CHOICES}, got {self.im_sim!r}")
        if self.ed_sim not in ED_SIM_CHOICES:
            raise ConfigError(f"ed_sim must be one of {ED_SIM_CHOICES}, got {self.ed_sim!r}")
        if self.model not in MODEL_CHOICES:
            raise ConfigError(f"model must be one of {MODEL_CHOICES}, got {self.model!r}")
        if self.spacing < 2:
            raise ConfigError(f"spacing must be >= 2, got {self.spacing}")
        if not 0 <= self.steps <= MAX_SQUARING_STEPS:
            raise ConfigError(f"steps must be in [0, {MAX_SQUARING_STEPS}], got {self.steps}")
        if self.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {self.levels}")
        if self.iters_per_level < 1:
            raise ConfigError(f"iters_per_level must be >= 1, got {self.iters_per_level}")
        if self.window < 3 or self.window % 2 == 0:
            raise ConfigError(f"window must be odd and >= 3, got {self.window}")
        if self.bins < 8:
            raise ConfigError(f"bins must be >= 8, got {self.bins}")
        for name in ("lncc_eps", "sigma_ratio", "eps_rel"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.update_sigma < 0:
            raise ConfigError(f"update_sigma must be >= 0, got {self.update_sigma}")
        if self.sigma_pre < 0:
            raise ConfigError(f"sigma_pre must be >= 0, got {self.sigma_pre}")

    @property
    def edge_branch_active(self) -> bool:
        return self.ed_sim != "none" and self.lambda2 > 0

    @property
    def squaring(self) -> SquaringConfig:
        return SquaringConfig(self.steps)

    def to_dict(self) -> dict[str, Any]:
        """Flat mapping with the optimizer settings inlined."""
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "optimizer"}
        out.update(asdict(self.optimizer))
        return out

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "RegistrationConfig":
        own = {f.name for f in fields(cls)} - {"optimizer"}
        opt = {f.name for f in fields(OptimizerConfig)}
        unknown = sorted(set(values) - own - opt)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        try:
            optimizer = OptimizerConfig(**{k: v for k, v in values.items() if k in opt})
            return cls(optimizer=optimizer, **{k: v for k, v in values.items() if k in own})
        except TypeError as exc:
            raise ConfigError(f"invalid configuration value: {exc}") from exc


@dataclass(frozen=True)
class LossTerms:
    l1: float
    l2: float
    l3: float
    total: float

    def __post_init__(self):
        if abs(self.total - (self.l1 + self.l2 + self.l3)) > 1e-12:
            raise ConfigError(f"total {self.total} != {self.l1} + {self.l2} + {self.l3}")

    @classmethod
    def of(cls, l1: float, l2: float, l3: float) -> "LossTerms":
        return cls(l1, l2, l3, l1 + l2 + l3)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    velocity: VelocityParams
    displacement: VectorField2D
    loss_history: tuple[LossTerms, ...]
    history_levels: tuple[int, ...]
    runtime_ms: float
    config: RegistrationConfig

    def recompute_displacement(self) -> VectorField2D:
        return svf_exp(densify(self.velocity, self.displacement.width, self.displacement.height), self.config.squaring)


def _similarity(name: str, fixed: Image2D, warped: Image2D, cfg: RegistrationConfig) -> LossValueGrad:
    match name:
        case "lncc":
            return lncc(fixed, warped, cfg.window, cfg.lncc_eps)
        case "nmi":
            return nmi(fixed, warped, cfg.bins, cfg.sigma_ratio)
        case "ngf":
            return ngf(fixed, warped, cfg.eps_rel)
        case "mse":
            return mse(fixed, warped)
    raise ConfigError(f"unknown similarity {name!r}")


def params_to_vector(params: VelocityParams) -> np.ndarray:
    if isinstance(params, BSplineGrid):
        return params.control_points.ravel().copy()
    return params.vectors.ravel().copy()


def vector_to_params(vector: np.ndarray, like: VelocityParams) -> VelocityParams:
    if isinstance(like, BSplineGrid):
        return BSplineGrid(like.spacing, vector.reshape(like.control_points.shape))
    return VectorField2D(vector.reshape(like.vectors.shape))


def smooth_update(step: np.ndarray, like: VelocityParams, sigma: float) -> np.ndarray:
    """
    Gaussian-smooth a flat dense velocity update per component.

    B-spline updates are returned unchanged, the lattice already limits
    their bandwidth. sigma = 0 disables smoothing.
    """
    if sigma == 0 or isinstance(like, BSplineGrid):
        return step
    field = step.reshape(like.vectors.shape)
    smoothed = np.stack([gaussian_filter(field[..., c], sigma, mode="nearest") for c in range(2)], axis=-1)
    return smoothed.ravel()


def composite_loss_and_grad(
    fixed: Image2D,
    moving: Image2D,
    fixed_edges: Optional[Image2D],
    moving_edges: Optional[Image2D],
    params: VelocityParams,
    cfg: RegistrationConfig,
    iteration: Optional[int] = None,
) -> tuple[LossTerms, VelocityParams]:
    """
    Loss terms and gradient of lambda1 * im_sim + lambda2 * ed_sim + lambda3 * reg.

    Args:
        fixed, moving: Images F and M.
        fixed_edges, moving_edges: Edge maps of F and M; only read when the
            edge branch is active.
        params: Dense velocity field or B-spline control lattice.
        cfg: Loss weights, loss selections and their parameters.
        iteration: Reported in DivergenceError when the loss is not finite.

    Returns:
        (LossTerms, gradient) with the gradient of the same type as params.
    """
    check_same_shape(fixed, moving)
    if cfg.edge_branch_active:
        if fixed_edges is None or moving_edges is None:
            raise ConfigError("edge maps are required when the edge branch is active")
        check_same_shape(fixed, fixed_edges, moving_edges)
    if cfg.im_sim == "nmi" and cfg.lambda1 > 0:
        check_unit_range(fixed, "fixed")
        check_unit_range(moving, "moving")

    height, width = fixed.shape
    try:
        v = densify(params, width, height)
        u_raw, trace = exp_with_trace(v.vectors, cfg.steps)
        u = VectorField2D(u_raw)

        l1 = l2 = 0.0
        grad_u = np.zeros_like(u_raw)
        if cfg.lambda1 > 0:
            im = _similarity(cfg.im_sim, fixed, warp_image(moving, u), cfg)
            l1 = cfg.lambda1 * im.value
            grad_u += cfg.lambda1 * warp_adjoint(moving, u, im.grad).vectors
        if cfg.edge_branch_active:
            ed = _similarity(cfg.ed_sim, fixed_edges, warp_image(moving_edges, u), cfg)
            l2 = cfg.lambda2 * ed.value
            grad_u += cfg.lambda2 * warp_adjoint(moving_edges, u, ed.grad).vectors

        reg = reg_diffusion(v)
        terms = LossTerms.of(l1, l2, cfg.lambda3 * reg.value)
        grad_v = VectorField2D(exp_adjoint_from_trace(trace, grad_u) + cfg.lambda3 * reg.grad.vectors)
    except RangeError as exc:
        raise DivergenceError(f"non-finite loss or gradient: {exc}", iteration) from exc

    if not np.isfinite(terms.total):
        raise DivergenceError(f"non-finite total loss {terms.total}", iteration)
    if isinstance(params, BSplineGrid):
        return terms, bspline_adjoint(params, grad_v)
    return terms, grad_v


def effective_levels(width: int, height: int, levels: int) -> int:
    """Largest depth <= levels whose coarsest image keeps MIN_LEVEL_SIZE pixels per side."""
    depth = levels
    while depth > 1 and min(width, height) >> (depth - 1) < MIN_LEVEL_SIZE:
        depth -= 1
    return depth


def build_pyramid(fixed: Image2D, moving: Image2D, levels: int) -> list[tuple[Image2D, Image2D]]:
    """Image pairs from finest to coarsest."""
    pyramid = [(fixed, moving)]
    for _ in range(levels - 1):
        f, m = pyramid[-1]
        pyramid.append((downsample(f), downsample(m)))
    return pyramid


def _initial_params(previous: Optional[VelocityParams], shape: tuple[int, int], cfg: RegistrationConfig) -> VelocityParams:
    height, width = shape
    if previous is None:
        if cfg.model == "svf-bspline":
            return BSplineGrid.zeros(width, height, cfg.spacing)
        return VectorField2D.zeros(width, height)

    if isinstance(previous, BSplineGrid):
        coarse = densify(previous, width // 2, height // 2)
        return fit_bspline(upsample_field(coarse, width, height), cfg.spacing)
    return upsample_field(previous, width, height)


def final_level_losses(result: RegistrationResult) -> Sequence[LossTerms]:
    """Loss history of the finest pyramid level."""
    return [t for t, lvl in zip(result.loss_history, result.history_levels) if lvl == 0]


def register_pair(fixed: Image2D, moving: Image2D, cfg: RegistrationConfig = RegistrationConfig()) -> RegistrationResult:
    """
    Register moving onto fixed by optimizing a stationary velocity field
    coarse to fine.

    Both images are min-max normalized first. Each level records the loss
    before every Adam step plus one entry after the last step.
    """
    start = time.perf_counter()
    check_same_shape(fixed, moving)
    check_min_size(fixed, MIN_IMAGE_SIZE, MIN_IMAGE_SIZE, what="image")

    depth = effective_levels(fixed.width, fixed.height, cfg.levels)
    if depth < cfg.levels:
        LOGGER.info(f"Reducing pyramid from {cfg.levels} to {depth} levels for a {fixed.width}x{fixed.height} image")
    pyramid = build_pyramid(normalize_minmax(fixed), normalize_minmax(moving), depth)

    history: list[LossTerms] = []
    history_levels: list[int] = []
    params: Optional[VelocityParams] = None

    for level in range(depth - 1, -1, -1):
        f, m = pyramid[level]
        edges_f = edges_m = None
        if cfg.edge_branch_active:
            edges_f = edge_map(f, cfg.sigma_pre, cfg.edge_normalize)
            edges_m = edge_map(m, cfg.sigma_pre, cfg.edge_normalize)

        params = _initial_params(params, f.shape, cfg)
        vector = params_to_vector(params)
        state = AdamState.zeros(vector.size)
        LOGGER.info(f"Level {level}: {f.width}x{f.height} image, {vector.size} parameters, {cfg.iters_per_level} iterations")

        try:
            for it in range(1, cfg.iters_per_level + 1):
                terms, grad = composite_loss_and_grad(f, m, edges_f, edges_m, params, cfg, iteration=len(history) + 1)
                history.append(terms)
                history_levels.append(level)
                if it % LOG_EVERY == 0:
                    LOGGER.debug(
                        f"level {level} iter {it}: total={terms.total:.6f} l1={terms.l1:.6f} "
                        f"l2={terms.l2:.6f} l3={terms.l3:.6f} lr={lr_at(it, cfg.optimizer):g}"
                    )
                state, stepped = adam_step(state, vector, params_to_vector(grad), cfg.optimizer)
                vector = vector + smooth_update(stepped - vector, params, cfg.update_sigma)
                params = vector_to_params(vector, params)

            terms, _ = composite_loss_and_grad(f, m, edges_f, edges_m, params, cfg, iteration=len(history) + 1)
        except DivergenceError as exc:
            exc.history = tuple(history)
            LOGGER.error(f"Registration diverged at level {level}: {exc}")
            raise
        history.append(terms)
        history_levels.append(level)

    height, width = fixed.shape
    displacement = svf_exp(densify(params, width, height), cfg.squaring)
    result = RegistrationResult(
        velocity=params,
        displacement=displacement,
        loss_history=tuple(history),
        history_levels=tuple(history_levels),
        runtime_ms=(time.perf_counter() - start) * 1000.0,
        config=cfg,
    )
    finest = final_level_losses(result)
    LOGGER.info(
        f"Registration finished in {result.runtime_ms:.0f} ms, "
        f"finest level loss {finest[0].total:.6f} -> {finest[-1].total:.6f}"
    )
    return result

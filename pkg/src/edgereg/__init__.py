__version__ = "0.1.0"

from .errors import (
    CodecError,
    ConfigError,
    DataError,
    DivergenceError,
    EdgeRegError,
    RangeError,
    ShapeError,
    UsageError,
)
from .grid import Image2D, LabelMap2D, VectorField2D, downsample, normalize_minmax
from .fileio import field_io, load_labels_pgm, load_pgm, read_field, save_labels_pgm, save_pgm, write_field
from .edges import edge_map, gradient_central
from .transform import (
    BSplineGrid,
    SquaringConfig,
    bspline_adjoint,
    bspline_to_dense,
    compose,
    compose_adjoint,
    fit_bspline,
    jacobian_determinant,
    svf_exp,
    svf_exp_adjoint,
    upsample_field,
    warp_adjoint,
    warp_image,
    warp_labels,
)
from .similarity import LossValueGrad, lncc, mse, ngf, nmi, reg_diffusion
from .optim import AdamState, OptimizerConfig, adam_step, lr_at
from .register import (
    LossTerms,
    RegistrationConfig,
    RegistrationResult,
    composite_loss_and_grad,
    register_pair,
)
from .synth import PhantomPair, load_pair, make_pair, make_phantom, random_smooth_svf, write_pair
from .evaluation import EvalReport, dice, evaluate_displacement, evaluate_registration, jacobian_stats

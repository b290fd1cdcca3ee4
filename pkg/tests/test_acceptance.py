"""
End-to-end checks at benchmark scale. Deselect with -m "not slow".
"""

import csv

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from edgereg.bench import BenchConfig, run_bench
from edgereg.evaluation import evaluate_registration
from edgereg.grid import VectorField2D
from edgereg.register import RegistrationConfig, register_pair
from edgereg.synth import make_pair
from edgereg.transform import SquaringConfig, compose, svf_exp

pytestmark = pytest.mark.slow

IM_SIMS = ("lncc", "nmi", "ngf")


def _smooth_velocity(seed: int, size: int = 64, max_abs: float = 3.0) -> VectorField2D:
    noise = np.random.default_rng(seed).standard_normal((size, size, 2))
    smooth = np.stack([gaussian_filter(noise[..., c], 8.0, mode="nearest") for c in range(2)], axis=-1)
    return VectorField2D(max_abs * smooth / np.abs(smooth).max())


@pytest.fixture(scope="module")
def bench_rows(tmp_path_factory):
    cfg = BenchConfig(pairs=10, seed=0, size=192, max_disp=8.0, im_sims=IM_SIMS, lambda2s=(0.0, 1.0))
    result = run_bench(cfg, tmp_path_factory.mktemp("bench"))
    with open(result.cells_path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def euler_errors(euler_flow):
    """Max interior error of the K = 6 exponential against 4096-step Euler, per seed."""
    errors = []
    for seed in range(20):
        v = _smooth_velocity(seed)
        u = svf_exp(v, SquaringConfig(6))
        errors.append(np.abs(u.vectors - euler_flow(v, 4096))[8:-8, 8:-8].max())
    return np.array(errors)


class TestExponentialOracle:

    def test_typical_error(self, euler_errors):
        assert np.median(euler_errors) < 1e-3

    def test_worst_error(self, euler_errors):
        # floor of the bilinear resampling shared by both integrators
        assert euler_errors.max() < 5e-3

    @pytest.mark.parametrize("seed", range(20))
    def test_inverse_consistency(self, seed):
        v = _smooth_velocity(seed)
        roundtrip = compose(svf_exp(v), svf_exp(-v))
        assert np.abs(roundtrip.vectors[8:-8, 8:-8]).max() < 0.1


class TestSelfRegistration:

    @pytest.mark.parametrize("seed", range(5))
    def test_phantom_onto_itself(self, seed):
        pair = make_pair(seed, 64, 0.0)
        result = register_pair(pair.fixed, pair.fixed, RegistrationConfig())
        assert np.mean(np.hypot(result.displacement.dx, result.displacement.dy)) < 0.1
        assert evaluate_registration(pair, result).dice_mean >= 0.99


class TestEdgeAugmentation:

    @pytest.mark.parametrize("im_sim", IM_SIMS)
    def test_edge_branch_improves_dice(self, bench_rows, im_sim):
        rows = [r for r in bench_rows if r["im_sim"] == im_sim]
        with_edges = np.mean([float(r["dice_mean"]) for r in rows if r["ed_sim"] != "none"])
        without = np.mean([float(r["dice_mean"]) for r in rows if r["ed_sim"] == "none"])
        baseline = np.mean([float(r["dice_before"]) for r in rows])
        assert with_edges - without >= 0.005
        assert without > baseline and with_edges > baseline

    def test_regularity(self, bench_rows):
        assert max(float(r["fold_ratio"]) for r in bench_rows) <= 1e-3

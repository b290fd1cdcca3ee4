import logging

import numpy as np
import pytest

import edgereg.register as register_module
from edgereg.edges import edge_map
from edgereg.errors import ConfigError, DivergenceError, RangeError, ShapeError
from edgereg.evaluation import jacobian_stats
from edgereg.grid import Image2D, VectorField2D
from edgereg.optim import OptimizerConfig
from edgereg.register import (
    LossTerms,
    RegistrationConfig,
    build_pyramid,
    composite_loss_and_grad,
    effective_levels,
    final_level_losses,
    register_pair,
    smooth_update,
)
from edgereg.similarity import reg_diffusion
from edgereg.synth import make_pair
from edgereg.transform import BSplineGrid


@pytest.fixture
def image_pair(random_image):
    return random_image(16, 16, smooth=1.0), random_image(16, 16, smooth=1.0)


class TestRegistrationConfig:

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"lambda1": 0.0, "lambda2": 0.0},
            {"lambda3": -0.1},
            {"im_sim": "ssd"},
            {"ed_sim": "nmi"},
            {"model": "affine"},
            {"steps": 13},
            {"window": 4},
            {"bins": 4},
            {"spacing": 1},
            {"levels": 0},
            {"update_sigma": -1.0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ConfigError):
            RegistrationConfig(**kwargs)

    def test_dict_round_trip(self):
        cfg = RegistrationConfig(im_sim="ngf", lambda2=0.5, optimizer=OptimizerConfig(lr0=0.05))
        flat = cfg.to_dict()
        assert flat["lr0"] == 0.05 and "optimizer" not in flat
        assert RegistrationConfig.from_dict(flat) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown configuration keys: colour"):
            RegistrationConfig.from_dict({"colour": "red"})

    def test_edge_branch_switch(self):
        assert RegistrationConfig().edge_branch_active
        assert not RegistrationConfig(lambda2=0.0).edge_branch_active
        assert not RegistrationConfig(ed_sim="none").edge_branch_active


class TestLossTerms:

    def test_total_must_match(self):
        with pytest.raises(ConfigError):
            LossTerms(1.0, 2.0, 3.0, 7.0)

    def test_of(self):
        assert LossTerms.of(0.5, 0.25, 0.125).total == 0.875


class TestCompositeLoss:

    def test_stationary_at_identity(self, random_image):
        img = random_image(16, 16, smooth=1.0)
        edges = edge_map(img, 1.0)
        cfg = RegistrationConfig(im_sim="mse", ed_sim="mse")
        terms, grad = composite_loss_and_grad(img, img, edges, edges, VectorField2D.zeros(16, 16), cfg)
        assert terms.total == 0.0
        assert np.all(grad.vectors == 0.0)

    def test_disabled_edge_branch_is_ablation(self, image_pair, smooth_field):
        fixed, moving = image_pair
        v = smooth_field(16, 16, 1.0)
        edges_f, edges_m = edge_map(fixed, 1.0), edge_map(moving, 1.0)
        zero_weight, grad_a = composite_loss_and_grad(
            fixed, moving, edges_f, edges_m, v, RegistrationConfig(lambda2=0.0)
        )
        no_branch, grad_b = composite_loss_and_grad(
            fixed, moving, None, None, v, RegistrationConfig(ed_sim="none")
        )
        assert zero_weight == no_branch
        assert zero_weight.l2 == 0.0
        assert np.array_equal(grad_a.vectors, grad_b.vectors)

    def test_edge_maps_required(self, image_pair):
        fixed, moving = image_pair
        with pytest.raises(ConfigError, match="edge maps"):
            composite_loss_and_grad(fixed, moving, None, None, VectorField2D.zeros(16, 16), RegistrationConfig())

    def test_nmi_range_is_a_data_error(self, image_pair):
        fixed, moving = image_pair
        cfg = RegistrationConfig(im_sim="nmi", ed_sim="none")
        with pytest.raises(RangeError):
            composite_loss_and_grad(fixed, Image2D(moving.data * 3.0), None, None, VectorField2D.zeros(16, 16), cfg)

    @pytest.mark.parametrize("im_sim", ["lncc", "nmi", "ngf"])
    def test_dense_chain_gradient(self, image_pair, smooth_field, finite_difference, rel_error, im_sim):
        fixed, moving = image_pair
        edges_f, edges_m = edge_map(fixed, 1.0), edge_map(moving, 1.0)
        cfg = RegistrationConfig(im_sim=im_sim, ed_sim="lncc", steps=4, window=5, bins=16)
        v = smooth_field(16, 16, 1.0)

        def total(x):
            return composite_loss_and_grad(fixed, moving, edges_f, edges_m, VectorField2D(x), cfg)[0].total

        _, grad = composite_loss_and_grad(fixed, moving, edges_f, edges_m, v, cfg)
        assert rel_error(grad.vectors, finite_difference(total, v.vectors)) < 1e-4

    def test_bspline_chain_gradient(self, image_pair, rng, finite_difference, rel_error):
        fixed, moving = image_pair
        edges_f, edges_m = edge_map(fixed, 1.0), edge_map(moving, 1.0)
        cfg = RegistrationConfig(model="svf-bspline", spacing=4, steps=4, window=5)
        params = BSplineGrid(4, rng.normal(0.0, 0.3, (7, 7, 2)))

        def total(x):
            return composite_loss_and_grad(fixed, moving, edges_f, edges_m, BSplineGrid(4, x), cfg)[0].total

        _, grad = composite_loss_and_grad(fixed, moving, edges_f, edges_m, params, cfg)
        assert isinstance(grad, BSplineGrid)
        assert rel_error(grad.control_points, finite_difference(total, params.control_points)) < 1e-4


class TestPyramid:

    @pytest.mark.parametrize(
        "width,height,levels,expected",
        [(192, 192, 3, 3), (16, 16, 3, 2), (20, 40, 5, 2), (64, 64, 1, 1)],
    )
    def test_effective_levels(self, width, height, levels, expected):
        assert effective_levels(width, height, levels) == expected

    def test_build_pyramid_finest_first(self):
        pyramid = build_pyramid(Image2D.zeros(32, 24), Image2D.zeros(32, 24), 3)
        assert [f.shape for f, _ in pyramid] == [(24, 32), (12, 16), (6, 8)]


class TestRegisterPair:

    @pytest.fixture
    def pair(self, random_image):
        return random_image(32, 32, smooth=2.0), random_image(32, 32, smooth=2.0)

    def test_history_layout(self, pair):
        cfg = RegistrationConfig(levels=2, iters_per_level=5)
        result = register_pair(*pair, cfg)
        assert len(result.loss_history) == 12
        assert result.history_levels == (1,) * 6 + (0,) * 6
        assert len(final_level_losses(result)) == 6
        assert result.displacement.shape == (32, 32)
        assert result.runtime_ms > 0

    def test_deterministic(self, pair):
        cfg = RegistrationConfig(levels=2, iters_per_level=4)
        first, second = register_pair(*pair, cfg), register_pair(*pair, cfg)
        assert np.array_equal(first.displacement.vectors, second.displacement.vectors)
        assert first.loss_history == second.loss_history

    def test_recompute_displacement(self, pair):
        result = register_pair(*pair, RegistrationConfig(levels=1, iters_per_level=3))
        assert np.array_equal(result.recompute_displacement().vectors, result.displacement.vectors)

    def test_bspline_model(self, pair):
        cfg = RegistrationConfig(model="svf-bspline", spacing=8, levels=2, iters_per_level=3)
        result = register_pair(*pair, cfg)
        assert isinstance(result.velocity, BSplineGrid)
        assert result.velocity.control_points.shape == (7, 7, 2)

    def test_identical_images_stay_at_identity(self, random_image):
        img = random_image(32, 32, smooth=2.0)
        result = register_pair(img, img, RegistrationConfig(im_sim="mse", ed_sim="mse", levels=2, iters_per_level=5))
        assert np.all(result.displacement.vectors == 0.0)

    def test_too_small(self, random_image):
        img = random_image(8, 8)
        with pytest.raises(ShapeError):
            register_pair(img, img)

    def test_divergence_carries_history(self, pair, monkeypatch):
        calls = []
        original = register_module._similarity

        def flaky(name, fixed, warped, cfg):
            calls.append(name)
            if len(calls) == 3:
                raise RangeError("loss value is not finite: nan")
            return original(name, fixed, warped, cfg)

        monkeypatch.setattr(register_module, "_similarity", flaky)
        with pytest.raises(DivergenceError) as info:
            register_pair(*pair, RegistrationConfig(ed_sim="none", levels=1, iters_per_level=5))
        assert info.value.iteration == 3
        assert len(info.value.history) == 2

    def test_logs_finest_level_loss(self, pair, caplog):
        caplog.set_level(logging.INFO, logger="edgereg.register")
        register_pair(*pair, RegistrationConfig(levels=2, iters_per_level=3))
        assert "finest level loss" in caplog.text

    def test_smoothed_updates_give_smoother_velocity(self, random_image):
        fixed, moving = random_image(32, 32), random_image(32, 32)
        base = RegistrationConfig(ed_sim="none", levels=1, iters_per_level=20)
        rough = register_pair(fixed, moving, RegistrationConfig.from_dict({**base.to_dict(), "update_sigma": 0.0}))
        smooth = register_pair(fixed, moving, base)
        assert reg_diffusion(smooth.velocity).value < 0.5 * reg_diffusion(rough.velocity).value

    def test_phantom_registration_stays_fold_free(self):
        pair = make_pair(0, 64, 4.0)
        result = register_pair(pair.fixed, pair.moving, RegistrationConfig(levels=2, iters_per_level=60))
        fold_ratio, _ = jacobian_stats(result.displacement)
        assert fold_ratio <= 1e-3


class TestSmoothUpdate:

    def test_disabled(self):
        step = np.arange(32.0)
        assert smooth_update(step, VectorField2D.zeros(4, 4), 0.0) is step

    def test_constant_update_kept(self):
        like = VectorField2D.zeros(12, 10)
        step = np.tile([0.1, -0.2], 120)
        assert np.allclose(smooth_update(step, like, 2.0), step, atol=1e-15)

    def test_spike_spread_with_mass_kept(self):
        like = VectorField2D.zeros(32, 32)
        field = np.zeros((32, 32, 2))
        field[16, 16, 0] = 1.0
        out = smooth_update(field.ravel(), like, 2.0).reshape(32, 32, 2)
        assert out[..., 0].max() < 0.1
        assert out[..., 0].sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(out[..., 1] == 0.0)

    def test_bspline_untouched(self):
        like = BSplineGrid.zeros(16, 16, 4)
        step = np.linspace(-1.0, 1.0, like.control_points.size)
        assert smooth_update(step, like, 2.0) is step

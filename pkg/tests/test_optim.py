import numpy as np
import pytest

from edgereg.errors import ConfigError, DivergenceError, ShapeError
from edgereg.optim import AdamState, OptimizerConfig, adam_step, lr_at


class TestOptimizerConfig:

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"lr0": 0.0},
            {"beta1": 1.0},
            {"beta2": 0.0},
            {"eps_adam": -1e-8},
            {"decay_factor": 1.5},
            {"decay_every": 0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ConfigError):
            OptimizerConfig(**kwargs)

    def test_defaults(self):
        cfg = OptimizerConfig()
        assert (cfg.lr0, cfg.beta1, cfg.beta2, cfg.decay_factor, cfg.decay_every) == (0.1, 0.9, 0.999, 0.1, 100)


class TestSchedule:

    def test_step_decay(self):
        cfg = OptimizerConfig(lr0=1.0, decay_factor=0.5, decay_every=10)
        assert lr_at(1, cfg) == 1.0
        assert lr_at(10, cfg) == 1.0
        assert lr_at(11, cfg) == 0.5
        assert lr_at(25, cfg) == 0.25

    def test_iterations_are_one_based(self):
        with pytest.raises(ConfigError):
            lr_at(0, OptimizerConfig())


class TestAdamStep:

    def test_zero_gradient_keeps_params(self):
        params = np.array([1.0, -2.0, 3.0])
        state, out = adam_step(AdamState.zeros(3), params, np.zeros(3), OptimizerConfig())
        assert np.array_equal(out, params)
        assert state.t == 1

    def test_first_step_moves_by_lr(self):
        cfg = OptimizerConfig(lr0=0.1)
        _, out = adam_step(AdamState.zeros(2), np.zeros(2), np.array([3.0, -0.002]), cfg)
        assert out == pytest.approx([-0.1, 0.1], rel=1e-5)

    def test_minimizes_quadratic(self):
        cfg = OptimizerConfig(lr0=0.1, decay_every=200)
        target = np.array([0.5, -1.5, 2.0])
        state, params = AdamState.zeros(3), np.zeros(3)
        for _ in range(400):
            state, params = adam_step(state, params, 2.0 * (params - target), cfg)
        assert np.abs(params - target).max() < 1e-2

    def test_deterministic(self, rng):
        grads = rng.normal(size=(20, 5))

        def run():
            state, params = AdamState.zeros(5), np.zeros(5)
            for g in grads:
                state, params = adam_step(state, params, g, OptimizerConfig())
            return params

        assert np.array_equal(run(), run())

    def test_input_state_untouched(self):
        state = AdamState.zeros(2)
        adam_step(state, np.zeros(2), np.ones(2), OptimizerConfig())
        assert state.t == 0
        assert np.all(state.m == 0.0) and np.all(state.v == 0.0)

    def test_non_finite_gradient(self):
        state = AdamState(np.zeros(2), np.zeros(2), 4)
        with pytest.raises(DivergenceError) as info:
            adam_step(state, np.zeros(2), np.array([np.inf, 0.0]), OptimizerConfig())
        assert info.value.iteration == 5

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step(AdamState.zeros(3), np.zeros(3), np.zeros(2), OptimizerConfig())

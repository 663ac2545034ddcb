import time

import numpy as np
import pytest

from handforge import ParamVector, hpsl_forward
from handforge.fitting import FitOptions, fit

from conftest import random_params_arrays


def _synth_targets(model, rng, pose_scale=0.3):
    delta, alpha, beta = random_params_arrays(rng, model, pose_scale=pose_scale)
    truth = ParamVector(delta, alpha, beta)
    state = hpsl_forward(model, truth)
    return truth, state


def test_zero_iterations_at_exact_targets(default_model):
    state = hpsl_forward(default_model, ParamVector.neutral(default_model))
    result = fit(default_model, state.joint_positions, state.vertices)
    assert result.converged
    assert result.iterations == 0
    assert result.joint_loss == 0.0
    np.testing.assert_array_equal(
        result.params.to_flat(), ParamVector.neutral(default_model).to_flat()
    )


def test_recovers_known_parameters(default_model, rng):
    ok = 0
    for _ in range(5):
        truth, state = _synth_targets(default_model, rng)
        result = fit(default_model, state.joint_positions, state.vertices)
        if result.mean_joint_error_mm <= 1.0 and result.mean_vertex_error_mm <= 2.0:
            ok += 1
    assert ok == 5


def test_fit_runtime_budget(default_model, rng):
    truth, state = _synth_targets(default_model, rng)
    t0 = time.perf_counter()
    fit(default_model, state.joint_positions, state.vertices)
    assert time.perf_counter() - t0 <= 2.0


def test_joints_only_leaves_beta_untouched(default_model, rng):
    truth, state = _synth_targets(default_model, rng)
    init = ParamVector.neutral(default_model)
    result = fit(default_model, state.joint_positions, init=init)
    np.testing.assert_array_equal(result.params.beta, init.beta)
    assert any("beta frozen" in n for n in result.notes)


def test_loss_history_monotonic(default_model, rng):
    truth, state = _synth_targets(default_model, rng)
    result = fit(default_model, state.joint_positions, state.vertices)
    h = np.array(result.loss_history)
    assert np.all(np.diff(h) <= 0.0)


def test_translation_equivariance(default_model, rng):
    """Shifting all targets by t shifts only the recovered root translation."""
    truth, state = _synth_targets(default_model, rng)
    t = np.array([17.0, -9.0, 25.0])
    opts = FitOptions(tolerance_mm=1e-9, max_iterations=120)
    base = fit(default_model, state.joint_positions, state.vertices, opts=opts)
    moved = fit(default_model, state.joint_positions + t, state.vertices + t,
                opts=opts)
    d = moved.params.to_flat() - base.params.to_flat()
    np.testing.assert_allclose(d[:3], t, atol=1e-6)
    np.testing.assert_allclose(d[3:], 0.0, atol=1e-6)


def test_gn_and_gd_reach_same_loss(default_model, rng):
    """Both methods agree on a well-conditioned instance (small pose,
    joints objective)."""
    truth, state = _synth_targets(default_model, rng, pose_scale=0.05)
    gn = fit(default_model, state.joint_positions,
             opts=FitOptions(method="gauss-newton"))
    gd = fit(default_model, state.joint_positions,
             opts=FitOptions(method="gradient-descent", max_iterations=600))
    assert abs(gn.joint_loss - gd.joint_loss) <= 0.1


def test_bound_projection_keeps_alpha_in_range(default_model, rng):
    truth, state = _synth_targets(default_model, rng)
    opts = FitOptions(project_bounds=True, alpha_range=(0.9, 1.1))
    result = fit(default_model, state.joint_positions, state.vertices, opts=opts)
    assert np.all(result.params.alpha >= 0.9 - 1e-12)
    assert np.all(result.params.alpha <= 1.1 + 1e-12)


def test_invalid_options_rejected():
    with pytest.raises(ValueError):
        FitOptions(tolerance_mm=0.0)
    with pytest.raises(ValueError):
        FitOptions(free_blocks=())
    with pytest.raises(ValueError):
        FitOptions(method="annealing")


def test_bad_target_shape_rejected(default_model):
    with pytest.raises(ValueError):
        fit(default_model, np.zeros((4, 3)))

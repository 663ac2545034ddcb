import numpy as np
import pytest

from handforge import (
    ParamVector,
    forward_kinematics,
    joint_jacobians,
)

import naive
from conftest import random_params_arrays


def _finger_joint_indices(model, finger):
    return [j for j, joint in enumerate(model.joints)
            if joint.name.startswith(finger + "_")]


def test_rest_pose_matches_naive_chain(default_model):
    params = ParamVector.neutral(default_model)
    kin = forward_kinematics(default_model, params)
    want = naive.naive_global_transforms(default_model, np.zeros(26), np.ones(6))
    np.testing.assert_allclose(kin.global_transforms, want, atol=1e-12)
    np.testing.assert_allclose(kin.joint_positions, want[:, :3, 3], atol=1e-12)


def test_random_pose_matches_naive_chain(default_model, rng):
    delta, alpha, beta = random_params_arrays(rng, default_model)
    kin = forward_kinematics(default_model, ParamVector(delta, alpha, beta))
    want = naive.naive_global_transforms(default_model, delta, alpha)
    np.testing.assert_allclose(kin.global_transforms, want, atol=1e-9)


def test_transform_structure(default_model, rng):
    delta, alpha, beta = random_params_arrays(rng, default_model)
    kin = forward_kinematics(default_model, ParamVector(delta, alpha, beta))
    for m in kin.global_transforms:
        np.testing.assert_allclose(m[3], [0, 0, 0, 1], atol=0)
        r = m[:3, :3]
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(
        kin.joint_positions, kin.global_transforms[:, :3, 3], atol=0
    )


def test_index_scale_doubles_index_bones(default_model):
    """Scaling one finger slot stretches exactly that finger's bone vectors."""
    m = default_model
    alpha = np.ones(6)
    alpha[1] = 2.0  # slot 1 = index finger
    rest = forward_kinematics(m, ParamVector.neutral(m))
    scaled = forward_kinematics(
        m, ParamVector(np.zeros(26), alpha, np.zeros(7))
    )
    index_joints = set(_finger_joint_indices(m, "index"))
    for j, joint in enumerate(m.joints):
        if joint.parent < 0:
            continue
        vec_rest = rest.joint_positions[j] - rest.joint_positions[joint.parent]
        vec_scaled = scaled.joint_positions[j] - scaled.joint_positions[joint.parent]
        if j in index_joints and joint.parent in index_joints:
            np.testing.assert_allclose(vec_scaled, 2.0 * vec_rest, atol=1e-9)
        else:
            np.testing.assert_allclose(vec_scaled, vec_rest, atol=1e-9)
    # brute-force oracle agrees on the scaled chain
    want = naive.naive_global_transforms(m, np.zeros(26), alpha)
    np.testing.assert_allclose(scaled.joint_positions, want[:, :3, 3], atol=1e-9)


def test_root_translation_shifts_everything(default_model):
    delta = np.zeros(26)
    delta[0] = 10.0
    rest = forward_kinematics(default_model, ParamVector.neutral(default_model))
    moved = forward_kinematics(
        default_model, ParamVector(delta, np.ones(6), np.zeros(7))
    )
    np.testing.assert_allclose(
        moved.joint_positions, rest.joint_positions + np.array([10.0, 0, 0]),
        atol=1e-12,
    )


def test_root_rotation_equivariance(default_model, rng):
    """Pre-composing a global rotation at the root rotates every joint."""
    delta, alpha, beta = random_params_arrays(rng, default_model)
    delta[3:6] = 0.0
    base = forward_kinematics(default_model, ParamVector(delta, alpha, beta))
    angle = 0.7
    rot = naive.rotation_about([0, 0, 1], angle)
    delta_rot = delta.copy()
    delta_rot[3] = angle
    turned = forward_kinematics(default_model, ParamVector(delta_rot, alpha, beta))
    shift = delta[:3]
    base_local = base.joint_positions - shift
    np.testing.assert_allclose(
        turned.joint_positions, base_local @ rot.T + shift, atol=1e-9
    )


def test_joint_jacobian_matches_finite_differences(default_model, rng):
    m = default_model
    for _ in range(3):
        delta, alpha, beta = random_params_arrays(rng, m)
        params = ParamVector(delta, alpha, beta)
        jac = joint_jacobians(m, params)

        def joints_of_theta(d):
            return forward_kinematics(m, ParamVector(d, alpha, beta)).joint_positions

        def joints_of_alpha(a):
            return forward_kinematics(m, ParamVector(delta, a, beta)).joint_positions

        fd_theta = naive.central_difference_jacobian(joints_of_theta, delta)
        fd_alpha = naive.central_difference_jacobian(joints_of_alpha, alpha)
        assert naive.max_relative_error(jac.d_delta_theta, fd_theta) <= 1e-5
        assert naive.max_relative_error(jac.d_alpha, fd_alpha) <= 1e-5


def test_off_chain_pose_entries_are_zero(default_model, rng):
    m = default_model
    delta, alpha, beta = random_params_arrays(rng, m)
    jac = joint_jacobians(m, ParamVector(delta, alpha, beta))
    dpt = jac.d_delta_theta.reshape(m.n_joints, 3, m.n_dofs)
    for j in range(m.n_joints):
        chain = set(m.chains[j])
        for p, dof in enumerate(m.dofs):
            if dof.owner not in chain:
                np.testing.assert_array_equal(dpt[j, :, p], 0.0)


def test_root_translation_jacobian_is_unit(default_model, rng):
    m = default_model
    delta, alpha, beta = random_params_arrays(rng, m)
    jac = joint_jacobians(m, ParamVector(delta, alpha, beta))
    dpt = jac.d_delta_theta.reshape(m.n_joints, 3, m.n_dofs)
    for axis in range(3):
        expect = np.zeros(3)
        expect[axis] = 1.0
        for j in range(m.n_joints):
            np.testing.assert_allclose(dpt[j, :, axis], expect, atol=1e-12)


def test_scale_additivity_along_chain(default_model):
    """A slot appearing in several chain translations accumulates one
    product-rule term per occurrence; finite differences confirm the sum."""
    m = default_model
    delta = np.zeros(26)
    delta[10] = 0.4  # flex the index finger so terms differ
    alpha = np.ones(6)
    params = ParamVector(delta, alpha, np.zeros(7))
    jac = joint_jacobians(m, params)
    tip = next(j for j, joint in enumerate(m.joints) if joint.name == "index_tip")
    got = jac.d_alpha.reshape(m.n_joints, 3, 6)[tip, :, 1]

    def tip_of_alpha(a):
        st = forward_kinematics(m, ParamVector(delta, a, np.zeros(7)))
        return st.joint_positions[tip]

    fd = naive.central_difference_jacobian(tip_of_alpha, alpha)[:, 1]
    # three index bones carry the slot, so the entry is a three-term sum
    assert np.linalg.norm(got) > 50.0
    assert naive.max_relative_error(got, fd) <= 1e-5


def test_forward_is_bit_reproducible(default_model, rng):
    delta, alpha, beta = random_params_arrays(rng, default_model)
    a = forward_kinematics(default_model, ParamVector(delta, alpha, beta))
    b = forward_kinematics(default_model, ParamVector(delta, alpha, beta))
    np.testing.assert_array_equal(a.joint_positions, b.joint_positions)
    np.testing.assert_array_equal(a.global_transforms, b.global_transforms)


def test_nonfinite_params_rejected(default_model):
    bad = np.zeros(26)
    bad[5] = np.nan
    with pytest.raises(ValueError):
        forward_kinematics(default_model, ParamVector(bad, np.ones(6), np.zeros(7)))
    with pytest.raises(ValueError):
        forward_kinematics(
            default_model, ParamVector(np.zeros(26), np.zeros(6), np.zeros(7))
        )

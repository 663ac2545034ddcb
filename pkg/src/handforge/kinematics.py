"""Forward kinematics of the scaled skeleton and its analytic Jacobians.

Each joint's global transform is the ordered chain product, root to joint,
of a bone translation (scaled by the bone's slot in alpha) followed by the
joint's own axis rotations; the root contributes its translation DoFs and
its three rotations in z-y-x order. Joint positions are the transforms
applied to the origin.

Derivatives are exact: a parameter's derivative replaces its factor in the
chain by the factor's derivative, summed over repeated occurrences (one
scale slot can govern several bones of a chain, so the product rule
produces one term per occurrence).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .model import HandModel, KIND_ROTATION, KIND_TRANSLATION

N_SCALE_SLOTS = 6


@dataclass(frozen=True)
class ParamVector:
    """Layer inputs: pose deltas against the rest pose (rad/mm), per-slot
    bone scales (dimensionless, positive), shape weights (dimensionless)."""

    delta_theta: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        for name in ("delta_theta", "alpha", "beta"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def neutral(cls, model: HandModel) -> "ParamVector":
        return cls(
            np.zeros(model.n_dofs),
            np.ones(N_SCALE_SLOTS),
            np.zeros(model.n_morph_targets),
        )

    @classmethod
    def from_flat(cls, model: HandModel, flat: np.ndarray) -> "ParamVector":
        flat = np.asarray(flat, dtype=np.float64)
        n = model.n_dofs
        m = model.n_morph_targets
        if flat.shape != (n + N_SCALE_SLOTS + m,):
            raise ValueError(
                f"flat parameter vector must have {n + N_SCALE_SLOTS + m} entries"
            )
        return cls(flat[:n], flat[n:n + N_SCALE_SLOTS], flat[n + N_SCALE_SLOTS:])

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.delta_theta, self.alpha, self.beta])

    def token(self) -> str:
        return hashlib.sha1(self.to_flat().tobytes()).hexdigest()


def validate_params(model: HandModel, params: ParamVector,
                    alpha_range: tuple[float, float] = (0.5, 2.0),
                    check_bounds: bool = False) -> None:
    """Argument checks shared by the layer entry points. Pose bounds are
    advisory and only enforced when ``check_bounds`` is set."""
    if params.delta_theta.shape != (model.n_dofs,):
        raise ValueError(f"delta_theta must have shape ({model.n_dofs},)")
    if params.alpha.shape != (N_SCALE_SLOTS,):
        raise ValueError(f"alpha must have shape ({N_SCALE_SLOTS},)")
    if params.beta.shape != (model.n_morph_targets,):
        raise ValueError(f"beta must have shape ({model.n_morph_targets},)")
    for name in ("delta_theta", "alpha", "beta"):
        if not np.all(np.isfinite(getattr(params, name))):
            raise ValueError(f"{name} must be finite")
    if np.any(params.alpha <= 0.0):
        raise ValueError("alpha must be positive")
    if check_bounds:
        lo, hi = alpha_range
        if np.any(params.alpha < lo) or np.any(params.alpha > hi):
            raise ValueError(f"alpha outside [{lo}, {hi}]")
        theta = model.theta_init + params.delta_theta
        b = model.dof_bounds
        if np.any(theta < b[:, 0] - 1e-12) or np.any(theta > b[:, 1] + 1e-12):
            raise ValueError("pose outside per-DoF bounds")


@dataclass(frozen=True)
class KinematicState:
    """FK output: joint positions (J,3) in mm, per-joint global transforms
    M (J,4,4), and reference transforms evaluated at the rest pose with the
    same alpha."""

    joint_positions: np.ndarray
    global_transforms: np.ndarray
    reference_transforms: np.ndarray
    params: ParamVector = field(repr=False)


def _skew(a: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -a[2], a[1]],
        [a[2], 0.0, -a[0]],
        [-a[1], a[0], 0.0],
    ])


class _Structure:
    """Pose-independent skeleton data, precomputed once per model."""

    def __init__(self, model: HandModel):
        nd = model.n_dofs
        self.parents = np.array([j.parent for j in model.joints])
        self.k = np.zeros((nd, 3, 3))
        self.k2 = np.zeros((nd, 3, 3))
        self.is_rot = np.zeros(nd, dtype=bool)
        self.axes = np.zeros((nd, 3))
        for p, d in enumerate(model.dofs):
            self.axes[p] = d.axis
            if d.kind == KIND_ROTATION:
                self.is_rot[p] = True
                self.k[p] = _skew(d.axis)
                self.k2[p] = self.k[p] @ self.k[p]
        self.rot_dofs = tuple(
            tuple(p for p in dofs if model.dofs[p].kind == KIND_ROTATION)
            for dofs in model.joint_dofs
        )
        self.trans_dofs = tuple(
            tuple(p for p in dofs if model.dofs[p].kind == KIND_TRANSLATION)
            for dofs in model.joint_dofs
        )
        self.bone_offset = np.zeros((model.n_joints, 3))
        self.bone_slot = np.full(model.n_joints, -1)
        for j, joint in enumerate(model.joints):
            if joint.parent >= 0:
                self.bone_offset[j] = (
                    model.bone_dirs[joint.bone] * model.bone_lengths[joint.bone]
                )
                self.bone_slot[j] = model.bone_slots[joint.bone]


@lru_cache(maxsize=16)
def _structure(model: HandModel) -> _Structure:
    return _Structure(model)


def _rotations(st: _Structure, theta: np.ndarray) -> np.ndarray:
    """All per-DoF rotation blocks at once, (P, 3, 3)."""
    s = np.sin(theta)[:, None, None]
    c = np.cos(theta)[:, None, None]
    return np.eye(3) + s * st.k + (1.0 - c) * st.k2


def _fk(st: _Structure, theta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Global 4x4 transforms for every joint."""
    rot = _rotations(st, theta)
    nj = len(st.parents)
    m = np.zeros((nj, 4, 4))
    m[:, 3, 3] = 1.0
    for j in range(nj):
        parent = st.parents[j]
        rd = st.rot_dofs[j]
        local_r = rot[rd[0]] if rd else np.eye(3)
        for p in rd[1:]:
            local_r = local_r @ rot[p]
        if parent < 0:
            t = np.zeros(3)
            for p in st.trans_dofs[j]:
                t = t + st.axes[p] * theta[p]
            m[j, :3, :3] = local_r
            m[j, :3, 3] = t
        else:
            t = st.bone_offset[j] * alpha[st.bone_slot[j]]
            pr = m[parent, :3, :3]
            m[j, :3, :3] = pr @ local_r
            m[j, :3, 3] = pr @ t + m[parent, :3, 3]
    return m


def _factor_lists(st: _Structure, model: HandModel, theta: np.ndarray,
                  alpha: np.ndarray):
    """Per joint: ordered local factor list as 4x4 matrices with their
    parameter derivatives. Entries: (matrix, [(dof, dmat)], (slot, dmat) or
    None)."""
    rot = _rotations(st, theta)
    s = np.sin(theta)
    c = np.cos(theta)
    out = []
    for j in range(model.n_joints):
        factors = []
        if st.parents[j] < 0:
            t = np.eye(4)
            dts = []
            for p in st.trans_dofs[j]:
                t[:3, 3] += st.axes[p] * theta[p]
                dmat = np.zeros((4, 4))
                dmat[:3, 3] = st.axes[p]
                dts.append((p, dmat))
            factors.append((t, dts, None))
        else:
            t = np.eye(4)
            t[:3, 3] = st.bone_offset[j] * alpha[st.bone_slot[j]]
            dmat = np.zeros((4, 4))
            dmat[:3, 3] = st.bone_offset[j]
            factors.append((t, [], (int(st.bone_slot[j]), dmat)))
        for p in st.rot_dofs[j]:
            r4 = np.eye(4)
            r4[:3, :3] = rot[p]
            dr = np.zeros((4, 4))
            dr[:3, :3] = c[p] * st.k[p] + s[p] * st.k2[p]
            factors.append((r4, [(p, dr)], None))
        out.append(factors)
    return out


def _chain_derivatives(model: HandModel, theta: np.ndarray, alpha: np.ndarray,
                       want_dtheta: bool, want_dalpha: bool):
    """Global transforms with full Jacobian tensors dM/dtheta (J,P,4,4)
    and dM/dalpha (J,6,4,4)."""
    st = _structure(model)
    nj = model.n_joints
    nd = model.n_dofs
    all_factors = _factor_lists(st, model, theta, alpha)
    m = np.zeros((nj, 4, 4))
    dmt = np.zeros((nj, nd, 4, 4)) if want_dtheta else None
    dma = np.zeros((nj, N_SCALE_SLOTS, 4, 4)) if want_dalpha else None
    eye = np.eye(4)

    for j in range(nj):
        parent = st.parents[j]
        factors = all_factors[j]
        local = eye
        for mat, _, _ in factors:
            local = local @ mat
        base = m[parent] if parent >= 0 else eye
        m[j] = base @ local

        def replaced(fi: int, dmat: np.ndarray) -> np.ndarray:
            acc = base
            for gi, (mat, _, _) in enumerate(factors):
                acc = acc @ (dmat if gi == fi else mat)
            return acc

        if want_dtheta:
            if parent >= 0:
                np.matmul(dmt[parent], local, out=dmt[j])
            for fi, (_, dts, _) in enumerate(factors):
                for p, dmat in dts:
                    dmt[j, p] += replaced(fi, dmat)
        if want_dalpha:
            if parent >= 0:
                np.matmul(dma[parent], local, out=dma[j])
            for fi, (_, _, dalpha) in enumerate(factors):
                if dalpha is not None:
                    slot, dmat = dalpha
                    dma[j, slot] += replaced(fi, dmat)
    return m, dmt, dma


def forward_kinematics(model: HandModel, params: ParamVector) -> KinematicState:
    """Pose the skeleton. Reference transforms use the rest pose with the
    same alpha, so scale changes never leak into skinning transforms."""
    validate_params(model, params)
    st = _structure(model)
    theta = model.theta_init + params.delta_theta
    m = _fk(st, theta, params.alpha)
    m_ref = _fk(st, model.theta_init, params.alpha)
    return KinematicState(
        joint_positions=m[:, :3, 3].copy(),
        global_transforms=m,
        reference_transforms=m_ref,
        params=params,
    )


@dataclass(frozen=True)
class JointJacobians:
    """Dense position sensitivities, rows ordered (joint0 x,y,z, joint1 ...)."""

    d_delta_theta: np.ndarray  # (3J, P)
    d_alpha: np.ndarray        # (3J, 6)


def joint_jacobians(model: HandModel, params: ParamVector) -> JointJacobians:
    validate_params(model, params)
    theta = model.theta_init + params.delta_theta
    _, dmt, dma = _chain_derivatives(model, theta, params.alpha, True, True)
    nj = model.n_joints
    dpt = dmt[:, :, :3, 3].transpose(0, 2, 1).reshape(3 * nj, model.n_dofs)
    dpa = dma[:, :, :3, 3].transpose(0, 2, 1).reshape(3 * nj, N_SCALE_SLOTS)
    return JointJacobians(np.ascontiguousarray(dpt), np.ascontiguousarray(dpa))


def transform_derivatives(model: HandModel, params: ParamVector):
    """Everything vertex Jacobians need: M, dM/dtheta, dM/dalpha for the
    posed chain, plus the reference chain and its alpha derivatives (its
    rotations are fixed at the rest pose, so pose derivatives vanish)."""
    theta = model.theta_init + params.delta_theta
    m, dmt, dma = _chain_derivatives(model, theta, params.alpha, True, True)
    m_ref, _, dma_ref = _chain_derivatives(model, model.theta_init, params.alpha,
                                           False, True)
    return m, dmt, dma, m_ref, dma_ref


def rigid_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse of an array of rigid 4x4 transforms."""
    rt = m[..., :3, :3].swapaxes(-1, -2)
    out = np.zeros_like(m)
    out[..., :3, :3] = rt
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", rt, m[..., :3, 3])
    out[..., 3, 3] = 1.0
    return out

"""The differentiable pose-and-shape layer.

Forward maps (delta_theta, alpha, beta) to joint positions and mesh
vertices; backward returns the exact gradient of the squared-Euclidean
fitting loss with respect to every input parameter. When no ground-truth
vertices are supplied the vertex term is switched off entirely, so shape
parameters receive a zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kinematics import (
    JointJacobians,
    KinematicState,
    ParamVector,
    forward_kinematics,
    joint_jacobians,
)
from .model import HandModel
from .skinning import (
    SkinningTransforms,
    VertexJacobians,
    skin_vertices,
    skinning_transforms,
    vertex_jacobians,
)


@dataclass(frozen=True)
class HandState:
    """Layer outputs plus the cached intermediates the backward pass reuses."""

    joint_positions: np.ndarray  # (J, 3) mm
    vertices: np.ndarray         # (V, 3) mm
    kin: KinematicState = field(repr=False)
    xforms: SkinningTransforms = field(repr=False)
    token: str = field(repr=False)


@dataclass(frozen=True)
class LossReport:
    """Half squared-Euclidean losses in mm^2 and their combination."""

    joint_loss: float
    vertex_loss: float
    combined: float
    vertex_term_active: bool


@dataclass(frozen=True)
class LossGradients:
    d_delta_theta: np.ndarray
    d_alpha: np.ndarray
    d_beta: np.ndarray

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.d_delta_theta, self.d_alpha, self.d_beta])


def hpsl_forward(model: HandModel, params: ParamVector) -> HandState:
    """Pose the skeleton, morph the rest shape, and skin the mesh."""
    kin = forward_kinematics(model, params)
    xforms = skinning_transforms(kin)
    vertices = skin_vertices(model, xforms, params.beta)
    return HandState(
        joint_positions=kin.joint_positions,
        vertices=vertices,
        kin=kin,
        xforms=xforms,
        token=params.token(),
    )


def loss(state: HandState, joints_gt: np.ndarray,
         vertices_gt: Optional[np.ndarray] = None) -> LossReport:
    """Half squared error over joints, plus over vertices when ground-truth
    vertices exist (synthetic samples); absent vertices disable that term."""
    joints_gt = np.asarray(joints_gt, dtype=np.float64)
    if joints_gt.shape != state.joint_positions.shape:
        raise ValueError(
            f"joint targets must have shape {state.joint_positions.shape}"
        )
    l_j = 0.5 * float(np.sum((state.joint_positions - joints_gt) ** 2))
    if vertices_gt is None:
        return LossReport(l_j, 0.0, l_j, False)
    vertices_gt = np.asarray(vertices_gt, dtype=np.float64)
    if vertices_gt.shape != state.vertices.shape:
        raise ValueError(f"vertex targets must have shape {state.vertices.shape}")
    l_v = 0.5 * float(np.sum((state.vertices - vertices_gt) ** 2))
    return LossReport(l_j, l_v, l_j + l_v, True)


def hpsl_backward(model: HandModel, params: ParamVector, state: HandState,
                  joints_gt: np.ndarray,
                  vertices_gt: Optional[np.ndarray] = None) -> LossGradients:
    """Gradient of the combined loss at ``params``.

    ``state`` must come from ``hpsl_forward`` on the same parameters; a
    token comparison guards against mismatched pairs. With no vertex
    targets the shape gradient is exactly zero.
    """
    if state.token != params.token():
        raise ValueError("state was produced by different parameters")
    joints_gt = np.asarray(joints_gt, dtype=np.float64)
    if joints_gt.shape != state.joint_positions.shape:
        raise ValueError(
            f"joint targets must have shape {state.joint_positions.shape}"
        )

    jj = joint_jacobians(model, params)
    res_j = (state.joint_positions - joints_gt).reshape(-1)
    d_theta = jj.d_delta_theta.T @ res_j
    d_alpha = jj.d_alpha.T @ res_j
    d_beta = np.zeros(model.n_morph_targets)

    if vertices_gt is not None:
        vertices_gt = np.asarray(vertices_gt, dtype=np.float64)
        if vertices_gt.shape != state.vertices.shape:
            raise ValueError(f"vertex targets must have shape {state.vertices.shape}")
        vj = vertex_jacobians(model, state.kin, state.xforms, params.beta)
        res_v = (state.vertices - vertices_gt).reshape(-1)
        d_theta = d_theta + vj.d_delta_theta.T @ res_v
        d_alpha = d_alpha + vj.d_alpha.T @ res_v
        d_beta = vj.d_beta.T @ res_v
    return LossGradients(d_theta, d_alpha, d_beta)


@dataclass(frozen=True)
class JacobianSet:
    """All dense sensitivity blocks of one configuration."""

    joints: JointJacobians
    vertices: VertexJacobians


def jacobian_set(model: HandModel, params: ParamVector,
                 state: Optional[HandState] = None) -> JacobianSet:
    if state is None:
        state = hpsl_forward(model, params)
    return JacobianSet(
        joints=joint_jacobians(model, params),
        vertices=vertex_jacobians(model, state.kin, state.xforms, params.beta),
    )

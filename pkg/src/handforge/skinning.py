"""Linear blend skinning and its vertex Jacobians.

Every mesh vertex follows a convex combination of its influencing joints'
skinning transforms (current global transform composed with the inverse of
the reference transform). At the rest pose all skinning transforms are the
identity regardless of scale, because both chains carry the same alpha.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import (
    KinematicState,
    N_SCALE_SLOTS,
    ParamVector,
    rigid_inverse,
    transform_derivatives,
)
from .model import HandModel, morph


@dataclass(frozen=True)
class SkinningTransforms:
    """Per-joint vertex transforms C = M @ inv(M_ref), shape (J, 4, 4)."""

    matrices: np.ndarray


def skinning_transforms(kin: KinematicState) -> SkinningTransforms:
    inv_ref = rigid_inverse(kin.reference_transforms)
    return SkinningTransforms(kin.global_transforms @ inv_ref)


def _homogeneous(points: np.ndarray) -> np.ndarray:
    out = np.ones((points.shape[0], 4))
    out[:, :3] = points
    return out


def skin_vertices(model: HandModel, xforms: SkinningTransforms,
                  beta: np.ndarray) -> np.ndarray:
    """Deform the morphed rest shape by the skinning transforms. Returns
    (V, 3) positions in mm."""
    vh = _homogeneous(morph(model, beta))
    out = np.zeros((model.n_vertices, 3))
    c = xforms.matrices[:, :3, :]  # (J, 3, 4)
    for k in range(model.skin_joints.shape[1]):
        idx = model.skin_joints[:, k]
        w = model.skin_weights[:, k]
        out += w[:, None] * np.einsum("viq,vq->vi", c[idx], vh)
    return out


@dataclass(frozen=True)
class VertexJacobians:
    """Dense vertex sensitivities, rows ordered (vertex0 x,y,z, vertex1 ...)."""

    d_delta_theta: np.ndarray  # (3V, P)
    d_alpha: np.ndarray        # (3V, 6)
    d_beta: np.ndarray         # (3V, T)


def vertex_jacobians(model: HandModel, kin: KinematicState,
                     xforms: SkinningTransforms, beta: np.ndarray) -> VertexJacobians:
    """Exact derivatives of skinned vertex positions.

    Pose: dC = dM @ inv(M_ref) since the reference chain ignores pose.
    Scale: both factors move, dC = dM @ inv(M_ref) + M @ d(inv(M_ref)),
    with d(inv) = -inv @ dM_ref @ inv.
    Shape: the transform is fixed, so the morph offsets pass through the
    rotation block of C; this makes the block constant in beta.
    """
    beta = np.asarray(beta, dtype=np.float64)
    m, dmt, dma, m_ref, dma_ref = transform_derivatives(model, kin.params)
    inv_ref = rigid_inverse(m_ref)

    nd = model.n_dofs
    nt = model.n_morph_targets
    nv = model.n_vertices

    dct = np.einsum("jpab,jbc->jpac", dmt, inv_ref)[:, :, :3, :]
    dinv = -np.einsum("jab,jsbc,jcd->jsad", inv_ref, dma_ref, inv_ref)
    dca = (np.einsum("jsab,jbc->jsac", dma, inv_ref)
           + np.einsum("jab,jsbc->jsac", m, dinv))[:, :, :3, :]

    vh = _homogeneous(morph(model, beta))
    deltas = model.morph_targets - model.neutral_shape[None, :, :]  # (T, V, 3)
    crot = xforms.matrices[:, :3, :3]

    dvt = np.zeros((nv, 3, nd))
    dva = np.zeros((nv, 3, N_SCALE_SLOTS))
    dvb = np.zeros((nv, 3, nt))
    for k in range(model.skin_joints.shape[1]):
        idx = model.skin_joints[:, k]
        w = model.skin_weights[:, k]
        dvt += w[:, None, None] * np.einsum("vpiq,vq->vip", dct[idx], vh)
        dva += w[:, None, None] * np.einsum("vsiq,vq->vis", dca[idx], vh)
        dvb += w[:, None, None] * np.einsum("vij,tvj->vit", crot[idx], deltas)
    return VertexJacobians(
        np.ascontiguousarray(dvt.reshape(3 * nv, nd)),
        np.ascontiguousarray(dva.reshape(3 * nv, N_SCALE_SLOTS)),
        np.ascontiguousarray(dvb.reshape(3 * nv, nt)),
    )

"""Gradient-based recovery of pose, scale, and shape parameters from
observed joints and (optionally) vertices.

The objective is the layer loss: half squared error over joints, plus over
vertices when vertex targets exist. Residuals are classic nonlinear least
squares, so the default solver is damped Gauss-Newton on the analytic
Jacobians, falling back to backtracking gradient descent whenever the
normal equations are ill-conditioned. A small quadratic pull of the pose
deltas toward zero breaks gauge freedom (e.g. twist about a finger axis is
unobservable from joint positions); its weight is disclosed in the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .hpsl import hpsl_forward
from .kinematics import N_SCALE_SLOTS, ParamVector, joint_jacobians
from .model import HandModel
from .skinning import vertex_jacobians

BLOCKS = ("delta_theta", "alpha", "beta")


class FitDivergedError(RuntimeError):
    """Non-finite loss encountered; carries the last good parameters."""

    def __init__(self, message: str, last_good: ParamVector):
        super().__init__(message)
        self.last_good = last_good


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 60
    method: str = "gauss-newton"        # or "gradient-descent"
    tolerance_mm: float = 1e-4          # mean joint error convergence target
    free_blocks: Sequence[str] = BLOCKS
    project_bounds: bool = False
    alpha_range: tuple[float, float] = (0.5, 2.0)
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 3.0
    condition_limit: float = 1e10
    prior_weight: float = 1e-4
    step_init: float = 1e-6
    backtrack: float = 0.5
    max_backtracks: int = 40

    def __post_init__(self):
        if self.tolerance_mm <= 0:
            raise ValueError("tolerance must be positive")
        bad = [b for b in self.free_blocks if b not in BLOCKS]
        if bad or not self.free_blocks:
            raise ValueError(f"free_blocks must be a non-empty subset of {BLOCKS}")
        if self.method not in ("gauss-newton", "gradient-descent"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class FitResult:
    params: ParamVector
    joint_loss: float
    vertex_loss: float
    loss_history: tuple[float, ...]     # accepted objective values, non-increasing
    converged: bool
    iterations: int
    mean_joint_error_mm: float
    mean_vertex_error_mm: float
    prior_weight: float
    fallback_steps: int = 0
    notes: tuple[str, ...] = field(default_factory=tuple)


def _free_mask(model: HandModel, blocks: Sequence[str],
               vertex_targets_present: bool) -> tuple[np.ndarray, bool]:
    nd = model.n_dofs
    nt = model.n_morph_targets
    mask = np.zeros(nd + N_SCALE_SLOTS + nt, dtype=bool)
    beta_frozen = False
    for b in blocks:
        if b == "delta_theta":
            mask[:nd] = True
        elif b == "alpha":
            mask[nd:nd + N_SCALE_SLOTS] = True
        elif b == "beta":
            if vertex_targets_present:
                mask[nd + N_SCALE_SLOTS:] = True
            else:
                beta_frozen = True
    return mask, beta_frozen


def _project(model: HandModel, flat: np.ndarray, opts: FitOptions) -> np.ndarray:
    nd = model.n_dofs
    out = flat.copy()
    lo = model.dof_bounds[:, 0] - model.theta_init
    hi = model.dof_bounds[:, 1] - model.theta_init
    out[:nd] = np.clip(out[:nd], lo, hi)
    out[nd:nd + N_SCALE_SLOTS] = np.clip(
        out[nd:nd + N_SCALE_SLOTS], opts.alpha_range[0], opts.alpha_range[1]
    )
    return out


def fit(model: HandModel, joints_gt: np.ndarray,
        vertices_gt: Optional[np.ndarray] = None,
        init: Optional[ParamVector] = None,
        opts: Optional[FitOptions] = None) -> FitResult:
    """Recover parameters reproducing the targets. Deterministic for
    identical inputs and options."""
    opts = opts or FitOptions()
    init = init or ParamVector.neutral(model)
    joints_gt = np.asarray(joints_gt, dtype=np.float64)
    if joints_gt.shape != (model.n_joints, 3):
        raise ValueError(f"joint targets must have shape ({model.n_joints}, 3)")
    if vertices_gt is not None:
        vertices_gt = np.asarray(vertices_gt, dtype=np.float64)
        if vertices_gt.shape != (model.n_vertices, 3):
            raise ValueError(f"vertex targets must have shape ({model.n_vertices}, 3)")

    mask, beta_frozen = _free_mask(model, opts.free_blocks, vertices_gt is not None)
    notes = [f"tie-break prior weight {opts.prior_weight:g} on pose deltas"]
    if beta_frozen:
        notes.append("beta frozen: no vertex targets, shape carries no signal")

    nd = model.n_dofs
    x = init.to_flat()
    if opts.project_bounds:
        x = _project(model, x, opts)

    res_j = joints_gt.reshape(-1)
    res_v = vertices_gt.reshape(-1) if vertices_gt is not None else None
    sqrt_prior = np.sqrt(opts.prior_weight)
    # Only rotations can be gauge-ambiguous; pulling the root translation
    # toward zero would bias it and break translation equivariance.
    prior_rows = np.array([d.kind == "r" for d in model.dofs], dtype=float)

    def residuals(flat: np.ndarray, state=None):
        """Stacked residual vector; prior rows keep the problem pinned."""
        if state is None:
            state = hpsl_forward(model, ParamVector.from_flat(model, flat))
        parts = [state.joint_positions.reshape(-1) - res_j]
        if res_v is not None:
            parts.append(state.vertices.reshape(-1) - res_v)
        parts.append(sqrt_prior * prior_rows * flat[:nd])
        return np.concatenate(parts), state

    def try_point(flat: np.ndarray):
        """(residual, state, objective) with +inf objective off-domain, so
        line searches back away instead of raising."""
        if np.any(flat[nd:nd + N_SCALE_SLOTS] <= 0.0) or not np.isfinite(flat).all():
            return None, None, np.inf
        rr, st = residuals(flat)
        ff = 0.5 * float(rr @ rr)
        if not np.isfinite(ff):
            return None, None, np.inf
        return rr, st, ff

    def objective(r: np.ndarray) -> float:
        return 0.5 * float(r @ r)

    def report_errors(state):
        je = float(np.mean(np.linalg.norm(
            state.joint_positions - joints_gt, axis=1)))
        if vertices_gt is None:
            return je, 0.0
        ve = float(np.mean(np.linalg.norm(state.vertices - vertices_gt, axis=1)))
        return je, ve

    r, state = residuals(x)
    if not np.isfinite(r).all():
        raise FitDivergedError("non-finite loss at initial point", init)
    f = objective(r)
    history = [f]
    damping = opts.damping_init
    fallback_steps = 0
    converged = False
    iterations = 0
    prev_x = None
    prev_g = None
    je, ve = report_errors(state)
    if je <= opts.tolerance_mm and (vertices_gt is None or ve <= opts.tolerance_mm):
        converged = True

    for it in range(opts.max_iterations):
        if converged:
            break
        iterations = it + 1
        jac = _stacked_jacobian(model, ParamVector.from_flat(model, x),
                                state, res_v is not None,
                                sqrt_prior * prior_rows, nd)
        jac = jac[:, mask]
        grad_full = np.zeros(x.size)
        grad_full[mask] = jac.T @ r

        use_gd = opts.method == "gradient-descent"
        step = None
        if not use_gd:
            # Jacobi-equilibrated damped normal equations: mixed units
            # (mm, rad, dimensionless) make the raw normal matrix look
            # ill-conditioned even when the problem is healthy.
            jtj = jac.T @ jac
            scale = np.sqrt(np.maximum(np.diag(jtj), 1e-12))
            d = 1.0 / scale
            normal = (jtj * d[None, :]) * d[:, None] + damping * np.eye(jtj.shape[0])
            if np.linalg.cond(normal) > opts.condition_limit:
                use_gd = True
                fallback_steps += 1
            else:
                delta = d * np.linalg.solve(normal, -(d * (jac.T @ r)))
                step = np.zeros(x.size)
                step[mask] = delta

        accepted = False
        if step is not None:
            x_new = x + step
            if opts.project_bounds:
                x_new = _project(model, x_new, opts)
            r_new, state_new, f_new = try_point(x_new)
            if f_new < f:
                accepted = True
                damping = max(damping / opts.damping_down, 1e-12)
            else:
                damping *= opts.damping_up

        if not accepted and use_gd:
            # Diagonally preconditioned descent with a Barzilai-Borwein
            # step length and Armijo backtracking; raw fixed-step descent
            # cannot cross the conditioning of mixed mm/rad/dimensionless
            # parameters.
            g = grad_full
            precond = np.ones(x.size)
            precond[mask] = 1.0 / np.maximum(np.einsum("ij,ij->j", jac, jac), 1e-12)
            t = 1.0
            if prev_g is not None:
                s = x - prev_x
                y = g - prev_g
                sy = float(s @ y)
                if sy > 0:
                    t = float(np.sum(s * s / precond)) / sy
            prev_x, prev_g = x.copy(), g.copy()
            direction = -precond * g
            for _ in range(opts.max_backtracks):
                x_new = x + t * direction
                if opts.project_bounds:
                    x_new = _project(model, x_new, opts)
                r_new, state_new, f_new = try_point(x_new)
                if f_new < f + 1e-4 * t * float(g @ direction):
                    accepted = True
                    break
                t *= opts.backtrack

        if accepted:
            f_prev = f
            x, r, state = x_new, r_new, state_new
            f = objective(r)
            history.append(f)
            je, ve = report_errors(state)
            if je <= opts.tolerance_mm and (
                vertices_gt is None or ve <= opts.tolerance_mm
            ):
                converged = True
            elif f_prev - f <= 4e-16 * f_prev:
                break  # progress stalled at float resolution of the objective
        elif step is not None and not use_gd:
            continue  # rejected Gauss-Newton step: retry with more damping
        else:
            break  # no progress possible

    final = ParamVector.from_flat(model, x)
    state_final = hpsl_forward(model, final)
    lj = 0.5 * float(np.sum((state_final.joint_positions - joints_gt) ** 2))
    lv = (0.5 * float(np.sum((state_final.vertices - vertices_gt) ** 2))
          if vertices_gt is not None else 0.0)
    je, ve = report_errors(state_final)
    return FitResult(
        params=final,
        joint_loss=lj,
        vertex_loss=lv,
        loss_history=tuple(history),
        converged=converged,
        iterations=iterations,
        mean_joint_error_mm=je,
        mean_vertex_error_mm=ve,
        prior_weight=opts.prior_weight,
        fallback_steps=fallback_steps,
        notes=tuple(notes),
    )


def _stacked_jacobian(model, params, state, with_vertices, prior_diag, nd):
    jj = joint_jacobians(model, params)
    blocks = [np.hstack([jj.d_delta_theta, jj.d_alpha,
                         np.zeros((3 * model.n_joints, model.n_morph_targets))])]
    if with_vertices:
        vj = vertex_jacobians(model, state.kin, state.xforms, params.beta)
        blocks.append(np.hstack([vj.d_delta_theta, vj.d_alpha, vj.d_beta]))
    prior = np.zeros((nd, nd + N_SCALE_SLOTS + model.n_morph_targets))
    prior[:, :nd] = np.diag(prior_diag)
    blocks.append(prior)
    return np.vstack(blocks)

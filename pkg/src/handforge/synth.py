"""Synthetic depth data generation.

A pinhole camera renders the posed hand mesh into a z-buffered depth
raster with per-pixel part labels; pose, scale, shape, and viewpoint are
drawn from configurable ranges by a counter-based generator, so any sample
is a pure function of (seed, index) regardless of worker scheduling.
"""

from __future__ import annotations

import hashlib
import json
import math
import multiprocessing
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fileio
from .hpsl import hpsl_forward
from .kinematics import N_SCALE_SLOTS, ParamVector
from .model import HandModel
from .rng import CounterRng

MANIFEST_TAG = "handforge-manifest"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class CameraIntrinsics:
    """Ideal pinhole camera; lengths in mm, pixels for image quantities."""

    width: int = 320
    height: int = 240
    fx: float = 0.0
    fy: float = 0.0
    cx: float = 160.0
    cy: float = 120.0
    near: float = 150.0
    far: float = 1500.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal length must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if not (0 < self.near < self.far):
            raise ValueError("near/far planes must satisfy 0 < near < far")


def default_camera() -> CameraIntrinsics:
    """320x240 sensor with a 74-degree diagonal field of view."""
    diag = math.hypot(320.0, 240.0)
    f = (diag / 2.0) / math.tan(math.radians(74.0) / 2.0)
    return CameraIntrinsics(fx=f, fy=f)


def project(points: np.ndarray, cam: CameraIntrinsics):
    """Perspective projection to pixel coordinates plus depth in mm.
    Points behind the camera are an error; off-image pixels are returned
    as-is (clipping is the rasterizer's concern)."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    z = pts[:, 2]
    if np.any(z <= 0.0):
        raise ValueError("point behind camera")
    u = cam.fx * pts[:, 0] / z + cam.cx
    v = cam.fy * pts[:, 1] / z + cam.cy
    if single:
        return float(u[0]), float(v[0]), float(z[0])
    return np.stack([u, v], axis=1), z.copy()


def backproject(u, v, depth, cam: CameraIntrinsics) -> np.ndarray:
    """Pixel + depth back to camera-frame mm (inverse of project)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    x = (u - cam.cx) * depth / cam.fx
    y = (v - cam.cy) * depth / cam.fy
    return np.stack(np.broadcast_arrays(x, y, depth), axis=-1)


@dataclass(frozen=True)
class GroundTruth:
    params: ParamVector
    joints: np.ndarray
    vertices: np.ndarray


@dataclass(frozen=True)
class DepthFrame:
    """Depth raster (mm, 0 = background), part labels (0 = background),
    intrinsics, and optionally the generating ground truth."""

    depth: np.ndarray
    labels: np.ndarray
    camera: CameraIntrinsics
    truth: Optional[GroundTruth] = None


def render_depth(vertices: np.ndarray, faces: np.ndarray,
                 part_labels: np.ndarray, cam: CameraIntrinsics,
                 truth: Optional[GroundTruth] = None) -> DepthFrame:
    """Z-buffer rasterization with perspective-correct depth.

    Pixel sample points sit at integer coordinates. Triangles with any
    vertex nearer than the near plane are skipped whole (hands never
    straddle it in generated data); fragments beyond the far plane are
    dropped. No backface culling: interior walls are real surfaces here.

    All candidate fragments are generated flat and resolved in one sorting
    pass; ties at equal depth resolve to the smaller part label, so the
    result never depends on face order.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces)
    height, width = cam.height, cam.width
    depth_out = np.zeros((height, width))
    labels = np.zeros((height, width), dtype=np.uint8)
    frame = DepthFrame(depth=depth_out, labels=labels, camera=cam, truth=truth)
    if faces.size == 0:
        return frame

    z = vertices[:, 2]
    safe_z = np.where(z > 0, z, 1.0)
    us = cam.fx * vertices[:, 0] / safe_z + cam.cx
    vs = cam.fy * vertices[:, 1] / safe_z + cam.cy
    invz = 1.0 / safe_z

    fl = np.asarray(part_labels)[faces]
    f_lab = np.where(fl[:, 1] == fl[:, 2], fl[:, 1], fl[:, 0]).astype(np.uint8)

    ax, ay = us[faces[:, 0]], vs[faces[:, 0]]
    bx, by = us[faces[:, 1]], vs[faces[:, 1]]
    cx_, cy_ = us[faces[:, 2]], vs[faces[:, 2]]
    area = (bx - ax) * (cy_ - ay) - (by - ay) * (cx_ - ax)

    x0 = np.clip(np.ceil(np.minimum(np.minimum(ax, bx), cx_)), 0, width).astype(np.int64)
    x1 = np.clip(np.floor(np.maximum(np.maximum(ax, bx), cx_)), -1, width - 1).astype(np.int64)
    y0 = np.clip(np.ceil(np.minimum(np.minimum(ay, by), cy_)), 0, height).astype(np.int64)
    y1 = np.clip(np.floor(np.maximum(np.maximum(ay, by), cy_)), -1, height - 1).astype(np.int64)

    ok = ((z[faces] > cam.near).all(axis=1) & (area != 0.0)
          & (x0 <= x1) & (y0 <= y1))
    if not ok.any():
        return frame
    fsel = np.nonzero(ok)[0]

    w = (x1 - x0 + 1)[fsel]
    h = (y1 - y0 + 1)[fsel]
    counts = w * h
    total = int(counts.sum())
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    fidx = np.repeat(np.arange(len(fsel)), counts)
    local = np.arange(total, dtype=np.int64) - starts[fidx]
    px = (x0[fsel][fidx] + local % w[fidx]).astype(np.float64)
    py = (y0[fsel][fidx] + local // w[fidx]).astype(np.float64)

    face = fsel[fidx]
    e0 = (cx_[face] - bx[face]) * (py - by[face]) - (cy_[face] - by[face]) * (px - bx[face])
    e1 = (ax[face] - cx_[face]) * (py - cy_[face]) - (ay[face] - cy_[face]) * (px - cx_[face])
    e2 = (bx[face] - ax[face]) * (py - ay[face]) - (by[face] - ay[face]) * (px - ax[face])
    sgn = np.sign(area[face])
    inside = (e0 * sgn >= 0) & (e1 * sgn >= 0) & (e2 * sgn >= 0)

    lam = (e0 * invz[faces[face, 0]] + e1 * invz[faces[face, 1]]
           + e2 * invz[faces[face, 2]]) / area[face]
    with np.errstate(divide="ignore"):
        depth = 1.0 / lam
    keep = inside & (depth >= cam.near) & (depth <= cam.far)
    if not keep.any():
        return frame

    pix = (py[keep].astype(np.int64) * width + px[keep].astype(np.int64))
    dep = depth[keep]
    lab = f_lab[face[keep]]
    # one composite key: pixel | quantized depth | label; sorting it puts
    # the winning fragment first per pixel (label breaks exact-depth ties)
    quant = ((dep - cam.near) / (cam.far - cam.near)
             * float((1 << 39) - 1)).astype(np.int64)
    order = np.argsort((pix << 47) | (quant << 8) | lab.astype(np.int64))
    pix, dep, lab = pix[order], dep[order], lab[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    depth_out.reshape(-1)[pix[first]] = dep[first]
    labels.reshape(-1)[pix[first]] = lab[first]
    return frame


# ---------------------------------------------------------------------------
# Sampling


def _default_viewpoint() -> tuple:
    # (rz, ry, rx): full roll about the finger axis, half elsewhere
    return ((-math.pi / 2, math.pi / 2),
            (-math.pi, math.pi),
            (-math.pi / 2, math.pi / 2))


# How strongly each shape target stretches the bones of each scale slot
# (rows: shape targets, cols: palm, index, middle, ring, pinky, thumb).
# Mirrors the default asset's morph gains so that sampled skeletons track
# sampled meshes; a character generator varies both together.
_DEFAULT_SHAPE_SCALE_COUPLING = (
    (0.09, 0.10, 0.10, 0.10, 0.10, 0.056),   # Length
    (0.005, 0.0, 0.0, 0.0, 0.0, 0.022),      # Mass
    (0.10, 0.10, 0.10, 0.10, 0.10, 0.10),    # Size
    (0.117, 0.0, 0.0, 0.0, 0.0, 0.0),        # Palm Length
    (0.008, 0.0, 0.0, 0.0, 0.0, 0.0),        # Fingers Inter-distance
    (0.0, 0.15, 0.15, 0.15, 0.15, 0.15),     # Fingers Length
    (0.0, 0.0, 0.0, 0.0, 0.0, 0.0),          # Fingers Tip-Size
)


@dataclass(frozen=True)
class SampleConfig:
    """Ranges for the procedural modulation of pose, shape, and viewpoint.

    ``pose_ranges`` (rad) covers articulation DoFs in layout order; None
    falls back to each DoF's anatomical bounds. Draws are always clamped
    to the model's bounds.

    With ``shape_scale_coupling`` set (the default), bone scales follow
    the sampled shape weights so skeleton and mesh describe the same hand,
    and ``alpha_ranges`` act as multiplicative jitter around the derived
    scales; with coupling None, ``alpha_ranges`` are absolute draw ranges.

    ``twist_coupling`` is reserved: deriving finger roll from abduction
    needs twist channels the skeleton does not carry, so only zero is
    accepted."""

    count: int = 100
    seed: int = 0
    pose_ranges: Optional[tuple] = None
    viewpoint_ranges: tuple = field(default_factory=_default_viewpoint)
    lateral_x_range: tuple = (-30.0, 30.0)
    lateral_y_range: tuple = (-20.0, 40.0)
    distance_range: tuple = (350.0, 600.0)
    alpha_ranges: tuple = tuple(((0.98, 1.02),) * N_SCALE_SLOTS)
    beta_ranges: tuple = tuple(((-1.0, 1.0),) * 7)
    shape_scale_coupling: Optional[tuple] = _DEFAULT_SHAPE_SCALE_COUPLING
    twist_coupling: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("count must be positive")
        for pair in self._all_ranges():
            if len(pair) != 2 or not (pair[0] <= pair[1]):
                raise ValueError(f"range {pair} is not ordered")
        if any(c != 0.0 for c in self.twist_coupling):
            raise ValueError("twist_coupling is reserved and must be zero")

    def _all_ranges(self):
        out = list(self.viewpoint_ranges)
        out += [self.lateral_x_range, self.lateral_y_range, self.distance_range]
        out += list(self.alpha_ranges) + list(self.beta_ranges)
        if self.pose_ranges is not None:
            out += list(self.pose_ranges)
        return out

    def to_json(self) -> str:
        payload = {
            "count": self.count,
            "seed": self.seed,
            "pose_ranges": self.pose_ranges,
            "viewpoint_ranges": self.viewpoint_ranges,
            "lateral_x_range": self.lateral_x_range,
            "lateral_y_range": self.lateral_y_range,
            "distance_range": self.distance_range,
            "alpha_ranges": self.alpha_ranges,
            "beta_ranges": self.beta_ranges,
            "shape_scale_coupling": self.shape_scale_coupling,
            "twist_coupling": self.twist_coupling,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SampleConfig":
        raw = json.loads(text)

        def tup(x):
            if x is None:
                return None
            return tuple(tup(v) if isinstance(v, list) else v for v in x)

        return cls(**{k: tup(v) if isinstance(v, list) else v
                      for k, v in raw.items()})

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def sample(model: HandModel, config: SampleConfig, index: int) -> ParamVector:
    """Deterministic draw for one sample index: articulated pose within
    anatomical ranges, viewpoint as root rotation, camera distance as root
    translation, scales and shape weights within their ranges."""
    if not (0 <= index < config.count):
        raise ValueError("index out of range")
    rng = CounterRng(config.seed, stream=index)
    bounds = model.dof_bounds
    delta = np.zeros(model.n_dofs)

    art = range(6, model.n_dofs)
    for slot, p in enumerate(art):
        lo, hi = bounds[p]
        if config.pose_ranges is not None:
            lo, hi = config.pose_ranges[slot]
        theta = rng.uniform(lo, hi)
        theta = min(max(theta, bounds[p][0]), bounds[p][1])
        delta[p] = theta - model.theta_init[p]

    for k, rng_pair in enumerate(config.viewpoint_ranges):
        delta[3 + k] = rng.uniform(*rng_pair)
    delta[0] = rng.uniform(*config.lateral_x_range)
    delta[1] = rng.uniform(*config.lateral_y_range)
    delta[2] = rng.uniform(*config.distance_range)

    beta = np.array([rng.uniform(*config.beta_ranges[t])
                     for t in range(model.n_morph_targets)])
    alpha = np.array([rng.uniform(*config.alpha_ranges[s])
                      for s in range(N_SCALE_SLOTS)])
    if config.shape_scale_coupling is not None:
        gains = np.asarray(config.shape_scale_coupling, dtype=np.float64)
        base = np.prod(1.0 + gains[:len(beta)] * beta[:, None], axis=0)
        alpha = np.clip(alpha * base, 0.5, 2.0)
    return ParamVector(delta, alpha, beta)


# ---------------------------------------------------------------------------
# Dataset generation

_worker_ctx: dict = {}


def _init_worker(model, config, out_dir, cam):
    _worker_ctx.update(model=model, config=config, out_dir=out_dir, cam=cam)


def _sample_files(index: int) -> dict[str, str]:
    stem = f"{index:06d}"
    return {
        "depth": f"depth_{stem}.pgm",
        "label": f"label_{stem}.pgm",
        "params": f"params_{stem}.csv",
        "mesh": f"mesh_{stem}.obj",
    }


def render_sample(model: HandModel, config: SampleConfig, index: int,
                  cam: CameraIntrinsics) -> DepthFrame:
    params = sample(model, config, index)
    state = hpsl_forward(model, params)
    truth = GroundTruth(params=params, joints=state.joint_positions,
                        vertices=state.vertices)
    return render_depth(state.vertices, model.faces, model.part_labels, cam,
                        truth=truth)


def _write_sample(index: int) -> tuple[int, list[str]]:
    model = _worker_ctx["model"]
    config = _worker_ctx["config"]
    out_dir = _worker_ctx["out_dir"]
    cam = _worker_ctx["cam"]
    try:
        frame = render_sample(model, config, index, cam)
        names = _sample_files(index)
        fileio.write_pgm16(os.path.join(out_dir, names["depth"]), frame.depth)
        fileio.write_pgm8(os.path.join(out_dir, names["label"]), frame.labels)
        truth = frame.truth
        fileio.write_params_csv(
            os.path.join(out_dir, names["params"]),
            truth.params.delta_theta, truth.params.alpha, truth.params.beta,
            joints=truth.joints,
        )
        fileio.write_obj(os.path.join(out_dir, names["mesh"]),
                         truth.vertices, model.faces)
    except Exception as e:
        raise RuntimeError(f"sample {index}: {e}") from e
    return index, [names[k] for k in ("depth", "label", "params", "mesh")]


def generate_dataset(model: HandModel, config: SampleConfig, out_dir,
                     cam: Optional[CameraIntrinsics] = None,
                     jobs: Optional[int] = None) -> dict:
    """Write depth/label/params/mesh files for every sample plus a
    manifest; the manifest lands last. Bit-identical across reruns and
    worker counts."""
    cam = cam or default_camera()
    jobs = jobs or os.cpu_count() or 1
    os.makedirs(out_dir, exist_ok=True)

    indices = list(range(config.count))
    if jobs > 1 and config.count > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(jobs, initializer=_init_worker,
                      initargs=(model, config, out_dir, cam)) as pool:
            results = pool.map(_write_sample, indices, chunksize=4)
    else:
        _init_worker(model, config, out_dir, cam)
        results = [_write_sample(i) for i in indices]
    results.sort()

    part_names = {}
    for v in range(model.n_vertices):
        part_names.setdefault(int(model.part_labels[v]), None)
    labels_line = " ".join(str(k) for k in sorted(part_names))

    lines = [
        f"{MANIFEST_TAG} {MANIFEST_VERSION}",
        f"seed {config.seed}",
        f"count {config.count}",
        f"config_hash {config.digest()}",
        f"camera {cam.width} {cam.height} {cam.fx!r} {cam.fy!r} "
        f"{cam.cx!r} {cam.cy!r} {cam.near!r} {cam.far!r}",
        f"part_ids {labels_line}",
    ]
    for _, files in results:
        for name in files:
            lines.append(f"file {name}")
    manifest_path = os.path.join(out_dir, "manifest.txt")
    with open(manifest_path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    return {
        "manifest": manifest_path,
        "count": config.count,
        "seed": config.seed,
        "config_hash": config.digest(),
        "files": [f for _, files in results for f in files],
    }


def read_manifest_camera(path) -> CameraIntrinsics:
    """Recover intrinsics from a dataset manifest."""
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if parts and parts[0] == "camera":
                w, h = int(parts[1]), int(parts[2])
                fx, fy, cx, cy, near, far = (float(x) for x in parts[3:9])
                return CameraIntrinsics(w, h, fx, fy, cx, cy, near, far)
    raise ValueError("manifest has no camera line")

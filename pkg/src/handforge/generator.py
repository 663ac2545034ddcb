"""Procedural default hand asset.

Builds a low-poly right hand in camera-style coordinates (x right, y down,
z away from the viewer; fingers point along -y, palm faces -z). The surface
is a quilt of elliptical cylinder bands - one per phalanx, a stack for the
palm - plus small raised detail patches (finger nails, knuckle pads). Band
boundary rings are duplicated where pieces abut, like texture-seam vertices
in authored assets.

With the default configuration the mesh lands on exactly 1193 vertices and
1184 triangles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import (
    Dof,
    HandModel,
    Joint,
    KIND_ROTATION,
    KIND_TRANSLATION,
    MORPH_TARGET_NAMES,
    AssetError,
    make_model,
)
from .rng import CounterRng


class GenerationError(AssetError):
    """Configuration produced degenerate geometry."""


@dataclass(frozen=True)
class GenConfig:
    """Proportions and tessellation of the generated asset. Lengths scale
    with ``scale``; tessellation counts control mesh resolution."""

    scale: float = 1.0
    finger_sides: int = 12
    palm_sides: int = 47
    palm_bands: int = 8
    seed: int = 0


FINGER_NAMES = ("index", "middle", "ring", "pinky", "thumb")

# Per finger: MCP position (mm), phalanx lengths (proximal, middle, distal),
# band radius at the knuckle.
_FINGERS = {
    "index": ((-22.0, -72.0, 0.0), (42.0, 25.0, 23.0), 8.0),
    "middle": ((0.0, -76.0, 0.0), (46.0, 28.0, 25.0), 8.4),
    "ring": ((20.0, -72.0, 0.0), (43.0, 26.0, 24.0), 7.8),
    "pinky": ((36.0, -62.0, 0.0), (33.0, 21.0, 19.0), 6.6),
    "thumb": ((-32.0, -18.0, 0.0), (34.0, 30.0, 26.0), 9.6),
}

_PALM_CENTER_OFFSET = (0.0, -40.0, 0.0)
_PALM_TOP_Y = 6.0     # heel, just below the wrist joint
_PALM_BOT_Y = -78.0   # knuckle line
_RING_TAPER = (1.0, 0.92, 0.84, 0.66)  # radius factors at mcp/pip/dip/tip

_DEG = math.pi / 180.0


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n <= 0.0:
        raise GenerationError("zero-length bone")
    return v / n


def _finger_frame(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal (u, w) spanning the ring plane of a finger axis."""
    u = _unit((-direction[1], direction[0], 0.0))
    w = np.array([0.0, 0.0, 1.0])
    return u, w


def _skeleton(cfg: GenConfig):
    """Joints, dofs, bones, and rest joint positions."""
    s = cfg.scale
    joints = [Joint("root", -1, -1)]
    bone_dirs: list[np.ndarray] = []
    bone_lengths: list[float] = []
    bone_slots: list[int] = []
    rest = [np.zeros(3)]

    def add_joint(name: str, parent: int, offset: np.ndarray, slot: int) -> int:
        length = float(np.linalg.norm(offset))
        if length <= 0.0:
            raise GenerationError("zero-length bone")
        bone_dirs.append(offset / length)
        bone_lengths.append(length)
        bone_slots.append(slot)
        joints.append(Joint(name, parent, len(bone_lengths) - 1))
        rest.append(rest[parent] + offset)
        return len(joints) - 1

    add_joint("palm_center", 0, np.array(_PALM_CENTER_OFFSET) * s, 0)

    dofs = [
        Dof(0, KIND_TRANSLATION, np.array([1.0, 0.0, 0.0]), -1e4, 1e4, 0.0),
        Dof(0, KIND_TRANSLATION, np.array([0.0, 1.0, 0.0]), -1e4, 1e4, 0.0),
        Dof(0, KIND_TRANSLATION, np.array([0.0, 0.0, 1.0]), -1e4, 1e4, 0.0),
        Dof(0, KIND_ROTATION, np.array([0.0, 0.0, 1.0]), -math.pi, math.pi, 0.0),
        Dof(0, KIND_ROTATION, np.array([0.0, 1.0, 0.0]), -math.pi, math.pi, 0.0),
        Dof(0, KIND_ROTATION, np.array([1.0, 0.0, 0.0]), -math.pi, math.pi, 0.0),
    ]

    finger_meta = {}
    for fi, name in enumerate(FINGER_NAMES):
        mcp_pos, lengths, radius = _FINGERS[name]
        mcp_pos = np.array(mcp_pos) * s
        if name == "thumb":
            direction = _unit((-0.66, -0.75, 0.0))
            widen = 1.2
        else:
            direction = np.array([0.0, -1.0, 0.0])
            widen = 1.0
        slot = fi + 1

        mcp = add_joint(f"{name}_mcp", 0, mcp_pos, 0)
        pip = add_joint(f"{name}_pip", mcp, direction * lengths[0] * s, slot)
        dip = add_joint(f"{name}_dip", pip, direction * lengths[1] * s, slot)
        tip = add_joint(f"{name}_tip", dip, direction * lengths[2] * s, slot)

        abd_axis = np.array([0.0, 0.0, 1.0])
        flex_axis = _unit((-direction[1], direction[0], 0.0))
        dofs.append(Dof(mcp, KIND_ROTATION, abd_axis,
                        -20 * _DEG * widen, 20 * _DEG * widen, 0.0))
        dofs.append(Dof(mcp, KIND_ROTATION, flex_axis,
                        -30 * _DEG * widen, 100 * _DEG * widen, 0.0))
        dofs.append(Dof(pip, KIND_ROTATION, flex_axis, 0.0, 110 * _DEG * widen, 0.0))
        dofs.append(Dof(dip, KIND_ROTATION, flex_axis, 0.0, 90 * _DEG * widen, 0.0))

        finger_meta[name] = {
            "joints": (mcp, pip, dip, tip),
            "direction": direction,
            "radius": radius * s,
            "lengths": tuple(x * s for x in lengths),
        }

    return joints, dofs, bone_dirs, bone_lengths, bone_slots, np.array(rest), finger_meta


class _MeshBuilder:
    def __init__(self):
        self.verts: list[np.ndarray] = []
        self.faces: list[tuple[int, int, int]] = []
        self.labels: list[int] = []
        self.finger_id: list[int] = []   # -1 = palm
        self.segment: list[int] = []     # 0/1/2 phalanx, -1 = palm

    def add_band(self, c0, c1, u, w, ru0, rw0, ru1, rw1, sides, phase,
                 label, finger, segment):
        base = len(self.verts)
        for (c, ru, rw) in ((c0, ru0, rw0), (c1, ru1, rw1)):
            for k in range(sides):
                a = 2.0 * math.pi * k / sides + phase
                self.verts.append(c + u * (ru * math.cos(a)) + w * (rw * math.sin(a)))
        for k in range(sides):
            a, b = base + k, base + (k + 1) % sides
            c_, d = a + sides, b + sides
            self.faces.append((a, b, c_))
            self.faces.append((b, d, c_))
        self.labels.extend([label] * (2 * sides))
        self.finger_id.extend([finger] * (2 * sides))
        self.segment.extend([segment] * (2 * sides))

    def add_patch(self, center, eu, ev, label, finger, segment):
        """3x3 vertex grid patch spanning +-eu and +-ev around center."""
        base = len(self.verts)
        for r in (-1.0, 0.0, 1.0):
            for c in (-1.0, 0.0, 1.0):
                self.verts.append(center + eu * c + ev * r)
        for r in range(2):
            for c in range(2):
                a = base + 3 * r + c
                b, cc, d = a + 1, a + 3, a + 4
                self.faces.append((a, b, cc))
                self.faces.append((b, d, cc))
        self.labels.extend([label] * 9)
        self.finger_id.extend([finger] * 9)
        self.segment.extend([segment] * 9)


def _palm_half_width(t: float, s: float) -> float:
    return (27.0 + 16.0 * t ** 0.8) * s


def _palm_half_thickness(t: float, s: float) -> float:
    return (13.0 - 2.0 * t) * s


def _build_mesh(cfg: GenConfig, rest: np.ndarray, meta: dict):
    rng = CounterRng(cfg.seed, stream=0)
    b = _MeshBuilder()
    s = cfg.scale

    for fi, name in enumerate(FINGER_NAMES):
        info = meta[name]
        mcp, pip, dip, tip = info["joints"]
        u, w = _finger_frame(info["direction"])
        r = info["radius"] * (1.0 + rng.uniform(-0.02, 0.02))
        phase = rng.uniform(0.0, math.pi / cfg.finger_sides)
        d = info["direction"]
        # fingertip flesh extends a little past the end of the bone
        tip_pad = d * (0.8 * r * _RING_TAPER[3])
        stations = (rest[mcp], rest[pip], rest[dip], rest[tip] + tip_pad)
        for seg in range(3):
            r0 = r * _RING_TAPER[seg]
            r1 = r * _RING_TAPER[seg + 1]
            label = 2 + 3 * fi + seg
            # bands overlap across the joints so bending never opens a
            # wedge gap on the outer side of a knuckle
            c0 = stations[seg] - d * (0.75 * r0)
            c1 = stations[seg + 1] + (d * (0.75 * r1) if seg < 2 else 0.0)
            b.add_band(c0, c1, u, w,
                       r0, r0 * 0.9, r1, r1 * 0.9,
                       cfg.finger_sides, phase, label, fi, seg)

    levels = np.linspace(_PALM_TOP_Y * s, _PALM_BOT_Y * s, cfg.palm_bands + 1)
    phase = rng.uniform(0.0, math.pi / cfg.palm_sides)
    wob = 1.0 + rng.uniform(-0.02, 0.02)
    u = np.array([1.0, 0.0, 0.0])
    w = np.array([0.0, 0.0, 1.0])
    for k in range(cfg.palm_bands):
        pieces = []
        for y in (levels[k], levels[k + 1]):
            t = (y - levels[0]) / (levels[-1] - levels[0])
            pieces.append((np.array([0.0, y, 0.0]),
                           _palm_half_width(t, s) * wob,
                           _palm_half_thickness(t, s)))
        (c0, ru0, rw0), (c1, ru1, rw1) = pieces
        b.add_band(c0, c1, u, w, ru0, rw0, ru1, rw1,
                   cfg.palm_sides, phase, 1, -1, -1)

    # Nail patches ride on the back (+z) of each distal phalanx.
    for fi, name in enumerate(FINGER_NAMES):
        info = meta[name]
        _, _, dip, tip = info["joints"]
        d = info["direction"]
        u, _ = _finger_frame(d)
        r_dist = info["radius"] * _RING_TAPER[3]
        center = rest[dip] + (rest[tip] - rest[dip]) * 0.55
        center = center + np.array([0.0, 0.0, r_dist * 0.9 * 0.9 + 0.4 * s])
        b.add_patch(center, u * (r_dist * 0.45), d * (info["lengths"][2] * 0.28),
                    2 + 3 * fi + 2, fi, 2)

    # Knuckle pads on the back of the palm, one per non-thumb finger.
    for name in ("index", "middle", "ring", "pinky"):
        info = meta[name]
        mcp = info["joints"][0]
        t = (rest[mcp][1] - levels[0]) / (levels[-1] - levels[0])
        z = _palm_half_thickness(min(max(t, 0.0), 1.0), s) * 0.9 + 0.4 * s
        center = rest[mcp] + np.array([0.0, 6.0 * s, z])
        b.add_patch(center, np.array([3.2 * s, 0.0, 0.0]),
                    np.array([0.0, 3.2 * s, 0.0]), 1, -1, -1)

    return b


def _morph_deltas(verts: np.ndarray, finger_id: np.ndarray, segment: np.ndarray,
                  rest: np.ndarray, meta: dict) -> np.ndarray:
    """Offsets of each named shape target from the neutral shape."""
    nv = verts.shape[0]
    deltas = np.zeros((len(MORPH_TARGET_NAMES), nv, 3))

    # Length: stretch along the hand axis about the wrist.
    deltas[0, :, 1] = 0.10 * verts[:, 1]
    # Mass: thickness-dominant inflate (distinct x/z gains keep the morph
    # basis full rank against Length + Size; the small x gain keeps finger
    # meshes near their bones when scales track shape).
    deltas[1, :, 0] = 0.05 * verts[:, 0]
    deltas[1, :, 2] = 0.12 * verts[:, 2]
    # Size: uniform scale about the wrist.
    deltas[2] = 0.10 * verts

    for fi, name in enumerate(FINGER_NAMES):
        info = meta[name]
        mcp, pip, dip, tip = info["joints"]
        d = info["direction"]
        on = finger_id == fi
        # Palm Length: stretch the palm, carry fingers along rigidly.
        deltas[3, on, 1] = 0.13 * rest[mcp][1]
        # Fingers Inter-distance: spread fingers away from the middle axis.
        # Gain small enough that finger meshes stay on their bones.
        deltas[4, on, 0] = 0.05 * rest[mcp][0]
        # Fingers Length: stretch along the finger axis from the knuckle.
        t = np.maximum((verts[on] - rest[mcp]) @ d, 0.0)
        deltas[5, on] = 0.15 * t[:, None] * d[None, :]
        # Fingers Tip-Size: inflate the distal phalanx radially.
        dist = finger_id == fi
        dist = dist & (segment == 2)
        seg_len = info["lengths"][2]
        t = np.clip((verts[dist] - rest[dip]) @ d, 0.0, seg_len)
        proj = rest[dip] + t[:, None] * d[None, :]
        deltas[6, dist] = 0.18 * (verts[dist] - proj)
    deltas[3, finger_id < 0, 1] = 0.13 * verts[finger_id < 0, 1]
    return deltas


def _point_segment_dist(p: np.ndarray, a: np.ndarray, bb: np.ndarray) -> np.ndarray:
    ab = bb - a
    denom = float(ab @ ab)
    t = np.clip((p - a) @ ab / denom, 0.0, 1.0) if denom > 0 else np.zeros(len(p))
    closest = a + t[:, None] * ab[None, :]
    return np.linalg.norm(p - closest, axis=1)


def _skin_weights(verts: np.ndarray, rest: np.ndarray, joints, meta: dict,
                  finger_id: np.ndarray, segment: np.ndarray):
    """Skin binding: palm vertices blend root and knuckle transforms by
    distance-to-bone falloff; finger band vertices bind rigidly to their
    own phalanx joint. Rigid bands plus the overlap pads articulate like
    armor plates, which keeps joints covered at full flexion where blended
    tubes pinch away from the bone."""
    segments: list[tuple[int, np.ndarray, np.ndarray]] = []
    segments.append((0, rest[0], rest[1]))  # root -> palm center
    for name in FINGER_NAMES:
        mcp, pip, dip, tip = meta[name]["joints"]
        segments.append((0, rest[0], rest[mcp]))
        segments.append((mcp, rest[mcp], rest[pip]))
        segments.append((pip, rest[pip], rest[dip]))
        segments.append((dip, rest[dip], rest[tip]))

    nv = verts.shape[0]
    dists = np.full((nv, len(joints)), np.inf)
    for j, a, bb in segments:
        dists[:, j] = np.minimum(dists[:, j], _point_segment_dist(verts, a, bb))

    raw = np.where(np.isfinite(dists), 1.0 / (dists + 2.0) ** 4, 0.0)
    order = np.argsort(-raw, axis=1)[:, :4]
    influences = []
    for v in range(nv):
        fi = int(finger_id[v])
        if fi >= 0:
            own = meta[FINGER_NAMES[fi]]["joints"][int(segment[v])]
            influences.append([(int(own), 1.0)])
            continue
        pairs = [(int(j), float(raw[v, j])) for j in order[v] if raw[v, j] > 0.0]
        total = sum(w for _, w in pairs)
        influences.append([(j, w / total) for j, w in pairs])
    return influences


def generate_default_model(config: GenConfig | None = None) -> HandModel:
    """Build the procedural asset. Deterministic: identical configs (and
    seeds) produce bit-identical models."""
    cfg = config or GenConfig()
    if cfg.scale <= 0.0:
        raise GenerationError("scale must be positive")
    if cfg.finger_sides < 3 or cfg.palm_sides < 3 or cfg.palm_bands < 1:
        raise GenerationError("tessellation too coarse")

    joints, dofs, bone_dirs, bone_lengths, bone_slots, rest, meta = _skeleton(cfg)
    b = _build_mesh(cfg, rest, meta)

    verts = np.array(b.verts)
    finger_id = np.array(b.finger_id)
    segment = np.array(b.segment)
    deltas = _morph_deltas(verts, finger_id, segment, rest, meta)
    targets = verts[None, :, :] + deltas
    influences = _skin_weights(verts, rest, joints, meta, finger_id, segment)

    return make_model(
        joints, dofs, bone_dirs, bone_lengths, bone_slots,
        verts, targets, influences, np.array(b.faces), np.array(b.labels),
    )


def default_config_with_seed(seed: int) -> GenConfig:
    return replace(GenConfig(), seed=seed)

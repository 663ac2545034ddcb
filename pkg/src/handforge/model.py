"""Hand model asset: skeleton, degrees of freedom, morphable mesh, skinning data.

A HandModel is immutable after load or generation and safe to share across
threads and processes. All lengths are millimeters, all angles radians.

The on-disk asset format is a versioned plain-text document with named
sections (see ``save_model``); floats are written with shortest round-trip
precision so save/load is bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

FORMAT_TAG = "handforge-asset"
FORMAT_VERSION = 1

SCALE_SLOTS = ("palm", "index", "middle", "ring", "pinky", "thumb")

MORPH_TARGET_NAMES = (
    "Length",
    "Mass",
    "Size",
    "Palm Length",
    "Fingers Inter-distance",
    "Fingers Length",
    "Fingers Tip-Size",
)

ROOT_DOF_COUNT = 6
MAX_INFLUENCES = 4

KIND_ROTATION = "r"
KIND_TRANSLATION = "t"


class AssetError(Exception):
    """Base class for asset load/generate failures."""


class AssetParseError(AssetError):
    """Malformed asset file."""


class AssetValidationError(AssetError):
    """Structurally parseable asset violating a model invariant."""


@dataclass(frozen=True)
class Joint:
    """One skeleton joint. ``parent`` and ``bone`` are -1 for the root."""

    name: str
    parent: int
    bone: int


@dataclass(frozen=True)
class Dof:
    """One pose parameter: rotation about, or translation along, a fixed
    local axis of its owner joint. ``init`` is the rest-pose value."""

    owner: int
    kind: str
    axis: np.ndarray
    lower: float
    upper: float
    init: float


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class HandModel:
    """Immutable hand asset.

    Mesh vertices are bound at the rest pose; skin weight lists are convex
    (positive, summing to one) with at most MAX_INFLUENCES entries per
    vertex, stored padded with zero weights.
    """

    joints: tuple[Joint, ...]
    dofs: tuple[Dof, ...]
    bone_dirs: np.ndarray      # (B, 3) unit direction in the parent joint frame
    bone_lengths: np.ndarray   # (B,) mm
    bone_slots: np.ndarray     # (B,) scale slot per bone, 0..5
    neutral_shape: np.ndarray  # (V, 3) mm
    morph_targets: np.ndarray  # (7, V, 3) mm, absolute target shapes
    skin_joints: np.ndarray    # (V, MAX_INFLUENCES) joint indices, padded 0
    skin_weights: np.ndarray   # (V, MAX_INFLUENCES) weights, padded 0.0
    faces: np.ndarray          # (F, 3) vertex indices
    part_labels: np.ndarray    # (V,) part id, >= 1

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def n_dofs(self) -> int:
        return len(self.dofs)

    @property
    def n_vertices(self) -> int:
        return self.neutral_shape.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def n_morph_targets(self) -> int:
        return self.morph_targets.shape[0]

    @cached_property
    def theta_init(self) -> np.ndarray:
        return _frozen([d.init for d in self.dofs], np.float64)

    @cached_property
    def dof_bounds(self) -> np.ndarray:
        return _frozen([(d.lower, d.upper) for d in self.dofs], np.float64)

    @cached_property
    def joint_dofs(self) -> tuple[tuple[int, ...], ...]:
        """DoF indices owned by each joint, in layout order."""
        owned: list[list[int]] = [[] for _ in self.joints]
        for i, d in enumerate(self.dofs):
            owned[d.owner].append(i)
        return tuple(tuple(o) for o in owned)

    @cached_property
    def chains(self) -> tuple[tuple[int, ...], ...]:
        """Joint index chain from the root down to each joint, inclusive."""
        out: list[tuple[int, ...]] = []
        for j, joint in enumerate(self.joints):
            if joint.parent < 0:
                out.append((j,))
            else:
                out.append(out[joint.parent] + (j,))
        return tuple(out)

    @cached_property
    def face_labels(self) -> np.ndarray:
        """Per-face part id: majority label of the face's vertices."""
        v = self.part_labels[self.faces]  # (F, 3)
        lab = np.where(v[:, 1] == v[:, 2], v[:, 1], v[:, 0])
        return _frozen(lab, np.int32)


def make_model(
    joints: Sequence[Joint],
    dofs: Sequence[Dof],
    bone_dirs,
    bone_lengths,
    bone_slots,
    neutral_shape,
    morph_targets,
    skin_influences: Sequence[Sequence[tuple[int, float]]],
    faces,
    part_labels,
    validate: bool = True,
) -> HandModel:
    """Assemble, freeze, and (by default) validate a HandModel.

    ``skin_influences`` is the sparse per-vertex list of (joint, weight)
    pairs; zero-weight entries are stripped before padding.
    """
    nv = len(skin_influences)
    sj = np.zeros((nv, MAX_INFLUENCES), dtype=np.int32)
    sw = np.zeros((nv, MAX_INFLUENCES), dtype=np.float64)
    for v, pairs in enumerate(skin_influences):
        live = [(j, w) for j, w in pairs if w != 0.0]
        if len(live) > MAX_INFLUENCES:
            raise AssetValidationError(
                f"more than {MAX_INFLUENCES} skin influences at vertex {v}"
            )
        for k, (j, w) in enumerate(live):
            sj[v, k] = j
            sw[v, k] = w
    model = HandModel(
        joints=tuple(joints),
        dofs=tuple(
            Dof(d.owner, d.kind, _frozen(d.axis, np.float64), d.lower, d.upper, d.init)
            for d in dofs
        ),
        bone_dirs=_frozen(bone_dirs, np.float64),
        bone_lengths=_frozen(bone_lengths, np.float64),
        bone_slots=_frozen(bone_slots, np.int32),
        neutral_shape=_frozen(neutral_shape, np.float64),
        morph_targets=_frozen(morph_targets, np.float64),
        skin_joints=_frozen(sj, np.int32),
        skin_weights=_frozen(sw, np.float64),
        faces=_frozen(faces, np.int32),
        part_labels=_frozen(part_labels, np.int32),
    )
    if validate:
        validate_model(model)
    return model


def validate_model(model: HandModel) -> None:
    """Check every structural invariant; raise AssetValidationError naming
    the first violation found."""
    nj = model.n_joints
    roots = [j for j, joint in enumerate(model.joints) if joint.parent < 0]
    if len(roots) != 1 or roots[0] != 0:
        raise AssetValidationError("joint graph not a tree")
    for j, joint in enumerate(model.joints[1:], start=1):
        if not (0 <= joint.parent < j):
            raise AssetValidationError("joint graph not a tree")
        if not (0 <= joint.bone < model.bone_lengths.shape[0]):
            raise AssetValidationError(f"bad bone index at joint {j}")

    root_dofs = model.joint_dofs[0]
    if len(root_dofs) != ROOT_DOF_COUNT:
        raise AssetValidationError(
            f"root joint must own {ROOT_DOF_COUNT} DoFs, has {len(root_dofs)}"
        )
    kinds = [model.dofs[i].kind for i in root_dofs]
    if kinds.count(KIND_TRANSLATION) != 3 or kinds.count(KIND_ROTATION) != 3:
        raise AssetValidationError("root DoFs must be 3 translations + 3 rotations")
    for i, d in enumerate(model.dofs):
        if d.kind not in (KIND_ROTATION, KIND_TRANSLATION):
            raise AssetValidationError(f"unknown DoF kind at dof {i}")
        if d.owner != 0 and d.kind != KIND_ROTATION:
            raise AssetValidationError(f"non-root DoF {i} must be a rotation")
        if not (0 <= d.owner < nj):
            raise AssetValidationError(f"DoF {i} owner out of range")
        if abs(np.linalg.norm(d.axis) - 1.0) > 1e-9:
            raise AssetValidationError(f"DoF axis not unit length at dof {i}")
        if not (d.lower <= d.init <= d.upper):
            raise AssetValidationError(f"rest value outside bounds at dof {i}")

    if np.any(model.bone_lengths <= 0.0):
        k = int(np.argmax(model.bone_lengths <= 0.0))
        raise AssetValidationError(f"bone length must be positive at bone {k}")
    norms = np.linalg.norm(model.bone_dirs, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        k = int(np.argmax(np.abs(norms - 1.0) > 1e-9))
        raise AssetValidationError(f"bone direction not unit length at bone {k}")
    if np.any(model.bone_slots < 0) or np.any(model.bone_slots >= len(SCALE_SLOTS)):
        k = int(np.argmax((model.bone_slots < 0) | (model.bone_slots >= len(SCALE_SLOTS))))
        raise AssetValidationError(f"scale slot out of range at bone {k}")

    nv = model.n_vertices
    if model.morph_targets.shape[1:] != (nv, 3):
        raise AssetValidationError("morph target vertex count mismatch")
    if np.any(model.skin_weights < 0.0):
        v = int(np.argmax(np.any(model.skin_weights < 0.0, axis=1)))
        raise AssetValidationError(f"non-convex skin weights at vertex {v}")
    sums = model.skin_weights.sum(axis=1)
    bad = np.abs(sums - 1.0) > 1e-9
    if np.any(bad):
        raise AssetValidationError(f"non-convex skin weights at vertex {int(np.argmax(bad))}")
    live_any = (model.skin_weights > 0.0).any(axis=1)
    if not np.all(live_any):
        raise AssetValidationError(
            f"non-convex skin weights at vertex {int(np.argmax(~live_any))}"
        )
    if np.any(model.skin_joints < 0) or np.any(model.skin_joints >= nj):
        v = int(np.argmax(np.any((model.skin_joints < 0) | (model.skin_joints >= nj), axis=1)))
        raise AssetValidationError(f"skin joint index out of range at vertex {v}")

    if model.faces.size and (model.faces.min() < 0 or model.faces.max() >= nv):
        bad_face = int(np.argmax(np.any((model.faces < 0) | (model.faces >= nv), axis=1)))
        raise AssetValidationError(f"face index out of range at face {bad_face}")
    if model.part_labels.shape != (nv,):
        raise AssetValidationError("part label count mismatch")
    if np.any(model.part_labels < 1) or np.any(model.part_labels > 255):
        raise AssetValidationError("part labels must be in 1..255")


def morph(model: HandModel, beta: np.ndarray) -> np.ndarray:
    """Morphed rest-pose vertex positions: the neutral shape plus the
    beta-weighted offsets of each target from the neutral shape."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (model.n_morph_targets,):
        raise ValueError(f"beta must have shape ({model.n_morph_targets},)")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    deltas = model.morph_targets - model.neutral_shape[None, :, :]
    return model.neutral_shape + np.einsum("t,tvc->vc", beta, deltas)


# ---------------------------------------------------------------------------
# Asset text format


def _fmt(x: float) -> str:
    return repr(float(x))


def save_model(model: HandModel, path) -> None:
    """Write the asset document. Sections appear in a fixed order; float
    fields use shortest round-trip formatting."""
    lines: list[str] = [f"{FORMAT_TAG} {FORMAT_VERSION}"]

    lines.append("[joints]")
    for j in model.joints:
        lines.append(f"{j.name} {j.parent} {j.bone}")

    lines.append("[dof_layout]")
    for d in model.dofs:
        ax = " ".join(_fmt(a) for a in d.axis)
        lines.append(
            f"{d.owner} {d.kind} {ax} {_fmt(d.lower)} {_fmt(d.upper)} {_fmt(d.init)}"
        )

    lines.append("[bone_lengths]")
    for k in range(model.bone_lengths.shape[0]):
        d = model.bone_dirs[k]
        lines.append(
            f"{_fmt(model.bone_lengths[k])} {_fmt(d[0])} {_fmt(d[1])} {_fmt(d[2])}"
        )

    lines.append("[scale_groups]")
    for s in model.bone_slots:
        lines.append(str(int(s)))

    lines.append("[vertices]")
    lines.append(str(model.n_vertices))
    for v in model.neutral_shape:
        lines.append(f"{_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")

    lines.append("[morph_targets]")
    for t, name in enumerate(MORPH_TARGET_NAMES):
        lines.append(f"target {name}")
        for v in model.morph_targets[t]:
            lines.append(f"{_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")

    lines.append("[weights]")
    for v in range(model.n_vertices):
        pairs = []
        for k in range(MAX_INFLUENCES):
            w = model.skin_weights[v, k]
            if w != 0.0:
                pairs.append(f"{int(model.skin_joints[v, k])} {_fmt(w)}")
        lines.append(" ".join(pairs))

    lines.append("[faces]")
    lines.append(str(model.n_faces))
    for f in model.faces:
        lines.append(f"{int(f[0])} {int(f[1])} {int(f[2])}")

    lines.append("[part_labels]")
    for p in model.part_labels:
        lines.append(str(int(p)))

    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


class _Reader:
    def __init__(self, path):
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read().splitlines()
        self.lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw)
                      if ln.strip() and not ln.strip().startswith("#")]
        self.pos = 0

    def peek(self):
        return self.lines[self.pos] if self.pos < len(self.lines) else (None, None)

    def next(self, what: str) -> tuple[int, str]:
        if self.pos >= len(self.lines):
            raise AssetParseError(f"unexpected end of file, expected {what}")
        item = self.lines[self.pos]
        self.pos += 1
        return item

    def at_section(self) -> bool:
        _, ln = self.peek()
        return ln is not None and ln.startswith("[")

    def expect_section(self, name: str) -> None:
        no, ln = self.next(f"[{name}]")
        if ln != f"[{name}]":
            raise AssetParseError(f"line {no}: expected section [{name}], got {ln!r}")

    def body(self) -> list[tuple[int, str]]:
        out = []
        while self.pos < len(self.lines) and not self.at_section():
            out.append(self.next("section body"))
        return out


def _floats(no: int, ln: str, n: int) -> list[float]:
    parts = ln.split()
    if len(parts) != n:
        raise AssetParseError(f"line {no}: expected {n} values, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as e:
        raise AssetParseError(f"line {no}: {e}") from None


def load_model(path) -> HandModel:
    """Parse and validate an asset document."""
    r = _Reader(path)
    no, header = r.next("format header")
    parts = header.split()
    if len(parts) != 2 or parts[0] != FORMAT_TAG:
        raise AssetParseError(f"line {no}: not a {FORMAT_TAG} file")
    if int(parts[1]) != FORMAT_VERSION:
        raise AssetParseError(f"line {no}: unsupported format version {parts[1]}")

    r.expect_section("joints")
    joints = []
    for no, ln in r.body():
        parts = ln.split()
        if len(parts) != 3:
            raise AssetParseError(f"line {no}: joint record needs name parent bone")
        joints.append(Joint(parts[0], int(parts[1]), int(parts[2])))

    r.expect_section("dof_layout")
    dofs = []
    for no, ln in r.body():
        parts = ln.split()
        if len(parts) != 8:
            raise AssetParseError(f"line {no}: dof record needs 8 fields")
        vals = _floats(no, " ".join(parts[2:]), 6)
        dofs.append(
            Dof(int(parts[0]), parts[1], np.array(vals[0:3]), vals[3], vals[4], vals[5])
        )

    r.expect_section("bone_lengths")
    bl, bd = [], []
    for no, ln in r.body():
        vals = _floats(no, ln, 4)
        bl.append(vals[0])
        bd.append(vals[1:4])

    r.expect_section("scale_groups")
    slots = [int(ln) for _, ln in r.body()]
    if len(slots) != len(bl):
        raise AssetParseError("scale_groups count does not match bone_lengths")

    r.expect_section("vertices")
    no, ln = r.next("vertex count")
    nv = int(ln)
    verts = np.empty((nv, 3))
    for v in range(nv):
        no, ln = r.next("vertex")
        verts[v] = _floats(no, ln, 3)

    r.expect_section("morph_targets")
    targets = np.empty((len(MORPH_TARGET_NAMES), nv, 3))
    for t, name in enumerate(MORPH_TARGET_NAMES):
        no, ln = r.next("morph target header")
        if not ln.startswith("target ") or ln[7:] != name:
            raise AssetParseError(f"line {no}: expected morph target {name!r}")
        for v in range(nv):
            no, ln = r.next("morph vertex")
            targets[t, v] = _floats(no, ln, 3)

    r.expect_section("weights")
    influences: list[list[tuple[int, float]]] = []
    for no, ln in r.body():
        parts = ln.split()
        if len(parts) % 2 != 0 or not parts:
            raise AssetParseError(f"line {no}: weight list must be joint/weight pairs")
        pairs = [(int(parts[i]), float(parts[i + 1])) for i in range(0, len(parts), 2)]
        influences.append(pairs)
    if len(influences) != nv:
        raise AssetParseError("weights count does not match vertices")

    r.expect_section("faces")
    no, ln = r.next("face count")
    nf = int(ln)
    faces = np.empty((nf, 3), dtype=np.int64)
    for f in range(nf):
        no, ln = r.next("face")
        parts = ln.split()
        if len(parts) != 3:
            raise AssetParseError(f"line {no}: face needs 3 indices")
        faces[f] = [int(p) for p in parts]

    r.expect_section("part_labels")
    labels = [int(ln) for _, ln in r.body()]
    if len(labels) != nv:
        raise AssetParseError("part_labels count does not match vertices")

    return make_model(
        joints, dofs, bd, bl, slots, verts, targets, influences, faces, labels
    )

"""File formats for dataset artifacts: binary PGM images, OBJ meshes,
parameter/annotation CSVs, and normalized-depth float blobs.

Everything here writes deterministically: fixed float formatting, fixed
ordering, no timestamps, so identical inputs produce identical bytes.
"""

from __future__ import annotations

import io
from typing import Optional

import numpy as np

BLOB_MAGIC = b"HFD1"


def write_pgm16(path, image: np.ndarray) -> None:
    """16-bit binary PGM, big-endian samples, values in integer mm."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("image must be 2-D")
    data = np.clip(np.rint(img), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def write_pgm8(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("image must be 2-D")
    data = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_pgm_header(fh) -> tuple[int, int, int]:
    def token():
        out = b""
        while True:
            ch = fh.read(1)
            if not ch:
                raise ValueError("truncated PGM header")
            if ch.isspace():
                if out:
                    return out
                continue
            if ch == b"#":
                fh.readline()
                continue
            out += ch

    magic = token()
    if magic != b"P5":
        raise ValueError("not a binary PGM file")
    width = int(token())
    height = int(token())
    maxval = int(token())
    return width, height, maxval


def read_pgm(path) -> np.ndarray:
    """Either depth (uint16 -> float mm) or labels (uint8) depending on
    the stored maxval."""
    with open(path, "rb") as fh:
        width, height, maxval = _read_pgm_header(fh)
        if maxval == 65535:
            raw = np.frombuffer(fh.read(width * height * 2), dtype=">u2")
            return raw.reshape(height, width).astype(np.float64)
        raw = np.frombuffer(fh.read(width * height), dtype=np.uint8)
        return raw.reshape(height, width).copy()


def write_obj(path, vertices: np.ndarray, faces: np.ndarray) -> None:
    """Wavefront OBJ, millimeter units. 12 significant digits keep
    round-trip error below 1e-9 mm for hand-scale coordinates."""
    buf = io.StringIO()
    for row in np.asarray(vertices, dtype=np.float64).tolist():
        buf.write("v %.12g %.12g %.12g\n" % (row[0], row[1], row[2]))
    for row in np.asarray(faces).tolist():
        buf.write("f %d %d %d\n" % (row[0] + 1, row[1] + 1, row[2] + 1))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(buf.getvalue())


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return np.array(verts), np.array(faces, dtype=np.int64)


def write_params_csv(path, delta_theta, alpha, beta,
                     joints: Optional[np.ndarray] = None) -> None:
    """Long-format CSV: name,index,axis,value. Angles in radians,
    positions in mm."""
    lines = ["name,index,axis,value"]
    for i, v in enumerate(np.asarray(delta_theta, dtype=np.float64)):
        lines.append(f"delta_theta,{i},,{float(v)!r}")
    for i, v in enumerate(np.asarray(alpha, dtype=np.float64)):
        lines.append(f"alpha,{i},,{float(v)!r}")
    for i, v in enumerate(np.asarray(beta, dtype=np.float64)):
        lines.append(f"beta,{i},,{float(v)!r}")
    if joints is not None:
        for i, row in enumerate(np.asarray(joints, dtype=np.float64)):
            for axis, v in zip("xyz", row):
                lines.append(f"joint,{i},{axis},{float(v)!r}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_params_csv(path) -> dict:
    """Inverse of write_params_csv. Returns arrays keyed by name; joints
    come back as (J, 3)."""
    rows: dict[str, dict] = {}
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "name,index,axis,value":
            raise ValueError("unrecognized parameter CSV header")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, index, axis, value = line.split(",")
            rows.setdefault(name, {})[(int(index), axis)] = float(value)
    out: dict[str, np.ndarray] = {}
    for name, cells in rows.items():
        if name == "joint":
            n = 1 + max(i for i, _ in cells)
            arr = np.zeros((n, 3))
            for (i, axis), v in cells.items():
                arr[i, "xyz".index(axis)] = v
            out[name] = arr
        else:
            n = 1 + max(i for i, _ in cells)
            arr = np.zeros(n)
            for (i, _), v in cells.items():
                arr[i] = v
            out[name] = arr
    return out


def write_float_blob(path, image: np.ndarray) -> None:
    """float32 image blob: 8-byte header (magic, u16 width, u16 height,
    little-endian) then row-major float32 samples."""
    img = np.ascontiguousarray(image, dtype="<f4")
    if img.ndim != 2:
        raise ValueError("image must be 2-D")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(BLOB_MAGIC)
        fh.write(int(w).to_bytes(2, "little"))
        fh.write(int(h).to_bytes(2, "little"))
        fh.write(img.tobytes())


def read_float_blob(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BLOB_MAGIC:
            raise ValueError("not a normalized-depth blob")
        w = int.from_bytes(fh.read(2), "little")
        h = int.from_bytes(fh.read(2), "little")
        raw = np.frombuffer(fh.read(4 * w * h), dtype="<f4")
        return raw.reshape(h, w).astype(np.float64)

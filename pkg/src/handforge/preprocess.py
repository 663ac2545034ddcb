"""Depth-frame standardization for training consumption.

A frame is centered on the hand centroid, cropped to the projection of a
metric cube around it, resampled to 96x96, and normalized so depths and
annotations live in [-1, 1]. Annotation normalization inverts exactly for
points inside the cube; the image path inverts up to resampling error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .synth import CameraIntrinsics, DepthFrame, backproject

OUT_SIZE = 96
DEFAULT_HALF_EXTENT = 150.0
BACKGROUND_VALUE = 1.0


class EmptyFrameError(ValueError):
    """Depth frame contains no foreground pixels."""


@dataclass(frozen=True)
class CropMeta:
    """Everything needed to invert the crop: cube center (camera mm), cube
    half-extent (mm), source intrinsics, and the crop rectangle in source
    pixels (u0, v0, u1, v1; may extend past the image, padding recorded
    implicitly by clamping at resample time)."""

    center: np.ndarray
    half_extent: float
    camera: CameraIntrinsics
    rect: tuple[float, float, float, float]

    def to_csv(self) -> str:
        c = self.center
        cam = self.camera
        lines = [
            "key,value",
            f"center_x,{float(c[0])!r}",
            f"center_y,{float(c[1])!r}",
            f"center_z,{float(c[2])!r}",
            f"half_extent,{float(self.half_extent)!r}",
            f"width,{cam.width}",
            f"height,{cam.height}",
            f"fx,{float(cam.fx)!r}",
            f"fy,{float(cam.fy)!r}",
            f"cx,{float(cam.cx)!r}",
            f"cy,{float(cam.cy)!r}",
            f"near,{float(cam.near)!r}",
            f"far,{float(cam.far)!r}",
            f"rect_u0,{float(self.rect[0])!r}",
            f"rect_v0,{float(self.rect[1])!r}",
            f"rect_u1,{float(self.rect[2])!r}",
            f"rect_v1,{float(self.rect[3])!r}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "CropMeta":
        vals: dict[str, float] = {}
        lines = text.strip().splitlines()
        if lines[0] != "key,value":
            raise ValueError("unrecognized crop metadata header")
        for line in lines[1:]:
            k, v = line.split(",")
            vals[k] = float(v)
        cam = CameraIntrinsics(
            int(vals["width"]), int(vals["height"]), vals["fx"], vals["fy"],
            vals["cx"], vals["cy"], vals["near"], vals["far"],
        )
        return cls(
            center=np.array([vals["center_x"], vals["center_y"], vals["center_z"]]),
            half_extent=vals["half_extent"],
            camera=cam,
            rect=(vals["rect_u0"], vals["rect_v0"], vals["rect_u1"], vals["rect_v1"]),
        )


def hand_centroid(frame: DepthFrame, foreground_mode: str = "nonzero",
                  band_mm: float = 250.0) -> np.ndarray:
    """Mean of the back-projected foreground pixels.

    ``nonzero`` treats every nonzero depth as hand (right for synthetic
    frames). ``near-band`` keeps pixels within ``band_mm`` of the nearest
    depth, a documented heuristic for real sensor frames where the hand is
    the closest object.
    """
    depth = frame.depth
    if foreground_mode == "nonzero":
        mask = depth > 0
    elif foreground_mode == "near-band":
        nz = depth[depth > 0]
        if nz.size == 0:
            raise EmptyFrameError("no foreground pixels")
        zmin = float(nz.min())
        mask = (depth > 0) & (depth <= zmin + band_mm)
    else:
        raise ValueError(f"unknown foreground mode {foreground_mode!r}")
    if not mask.any():
        raise EmptyFrameError("no foreground pixels")
    vs, us = np.nonzero(mask)
    pts = backproject(us.astype(np.float64), vs.astype(np.float64),
                      depth[mask], frame.camera)
    return pts.mean(axis=0)


def crop_meta(frame_or_camera, center: np.ndarray,
              half_extent: float = DEFAULT_HALF_EXTENT) -> CropMeta:
    """Crop rectangle for the cube [center +- half_extent]: the rectangle
    side in pixels follows from the intrinsics, f * 2e / center_z."""
    cam = (frame_or_camera.camera if isinstance(frame_or_camera, DepthFrame)
           else frame_or_camera)
    center = np.asarray(center, dtype=np.float64)
    if center[2] - half_extent <= 0:
        raise ValueError("crop cube reaches behind the camera")
    if half_extent <= 0:
        raise ValueError("half extent must be positive")
    u_c = cam.fx * center[0] / center[2] + cam.cx
    v_c = cam.fy * center[1] / center[2] + cam.cy
    half_u = cam.fx * half_extent / center[2]
    half_v = cam.fy * half_extent / center[2]
    return CropMeta(
        center=center,
        half_extent=float(half_extent),
        camera=cam,
        rect=(u_c - half_u, v_c - half_v, u_c + half_u, v_c + half_v),
    )


def _normalize_depth_image(depth: np.ndarray, center_z: float,
                           half_extent: float) -> np.ndarray:
    out = np.clip((depth - center_z) / half_extent, -1.0, 1.0)
    return np.where(depth > 0, out, BACKGROUND_VALUE)


def crop_normalize(frame: DepthFrame, meta: Optional[CropMeta] = None,
                   half_extent: float = DEFAULT_HALF_EXTENT,
                   foreground_mode: str = "nonzero"):
    """96x96 normalized crop plus the metadata that inverts it.

    Background and beyond-cube pixels map to +1 (far); depths map to
    (d - center_z) / half_extent clipped to [-1, 1]. Resampling is
    bilinear on the normalized image with corner-aligned output pixels, so
    output values stay in [-1, 1].
    """
    if meta is None:
        center = hand_centroid(frame, foreground_mode=foreground_mode)
        meta = crop_meta(frame, center, half_extent)
    cam = meta.camera

    normalized = _normalize_depth_image(frame.depth, float(meta.center[2]),
                                        meta.half_extent)
    u0, v0, u1, v1 = meta.rect
    gu = u0 + (u1 - u0) * np.arange(OUT_SIZE) / (OUT_SIZE - 1)
    gv = v0 + (v1 - v0) * np.arange(OUT_SIZE) / (OUT_SIZE - 1)
    uu, vv = np.meshgrid(gu, gv)

    iu = np.floor(uu).astype(np.int64)
    iv = np.floor(vv).astype(np.int64)
    fu = uu - iu
    fv = vv - iv

    def at(ix, iy):
        inside = (ix >= 0) & (ix < cam.width) & (iy >= 0) & (iy < cam.height)
        vals = np.full(ix.shape, BACKGROUND_VALUE)
        vals[inside] = normalized[iy[inside], ix[inside]]
        return vals

    out = ((1 - fu) * (1 - fv) * at(iu, iv)
           + fu * (1 - fv) * at(iu + 1, iv)
           + (1 - fu) * fv * at(iu, iv + 1)
           + fu * fv * at(iu + 1, iv + 1))
    return out, meta


def normalize_annotations(points: np.ndarray, meta: CropMeta) -> np.ndarray:
    """(P - center) / half_extent per coordinate, clipped to [-1, 1]."""
    pts = np.asarray(points, dtype=np.float64)
    return np.clip((pts - meta.center) / meta.half_extent, -1.0, 1.0)


def denormalize_annotations(normalized: np.ndarray, meta: CropMeta) -> np.ndarray:
    """Exact inverse of normalize_annotations for unclipped values."""
    return np.asarray(normalized, dtype=np.float64) * meta.half_extent + meta.center


def denormalize_depth(normalized: np.ndarray, meta: CropMeta) -> np.ndarray:
    """Map normalized crop values back to millimeters; +1 stays ambiguous
    between background and the far cube face and is returned as the far
    face depth."""
    return np.asarray(normalized, dtype=np.float64) * meta.half_extent + float(meta.center[2])

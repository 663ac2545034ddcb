"""Length-prefixed binary protocol over stdin/stdout for embedding the
layer in other runtimes.

Frames are little-endian. Request: u32 payload length, u8 opcode, payload.
Response: u32 payload length, u8 status, payload (error payloads carry a
UTF-8 message). Arrays are row-major float64. Parameter rows are laid out
as [pose deltas | 6 scales | shape weights]; joints and vertices flatten
as (count, 3) row-major, units mm and radians.

Opcodes: 0 version, 1 model_load, 2 model_free, 3 batch_forward,
4 batch_backward, 5 jacobians, 6 stats, 7 shutdown.
Status: 0 ok, 1 protocol error, 2 bad handle, 3 shape error, 4 runtime
error. The server never terminates on a handler error, only on EOF or
shutdown.

model_load: path -> u32 handle, u32 joints, u32 vertices, u32 dofs,
u32 shape targets. Loading the same path twice yields distinct handles
over one shared parsed asset; model_free is idempotent.
"""

from __future__ import annotations

import struct
import sys

import numpy as np

from . import __version__
from .hpsl import hpsl_backward, hpsl_forward, jacobian_set
from .kinematics import N_SCALE_SLOTS, ParamVector
from .model import load_model

OP_VERSION = 0
OP_MODEL_LOAD = 1
OP_MODEL_FREE = 2
OP_BATCH_FORWARD = 3
OP_BATCH_BACKWARD = 4
OP_JACOBIANS = 5
OP_STATS = 6
OP_SHUTDOWN = 7

ST_OK = 0
ST_PROTOCOL = 1
ST_BAD_HANDLE = 2
ST_SHAPE = 3
ST_RUNTIME = 4


class _ShapeError(ValueError):
    pass


class Server:
    def __init__(self):
        self._assets: dict[str, object] = {}
        self._handles: dict[int, object] = {}
        self._next = 1

    # -- handlers -----------------------------------------------------

    def _load(self, payload: bytes) -> bytes:
        path = payload.decode("utf-8")
        model = self._assets.get(path)
        if model is None:
            model = load_model(path)
            self._assets[path] = model
        handle = self._next
        self._next += 1
        self._handles[handle] = model
        return struct.pack("<5I", handle, model.n_joints, model.n_vertices,
                           model.n_dofs, model.n_morph_targets)

    def _free(self, payload: bytes) -> bytes:
        (handle,) = struct.unpack("<I", payload)
        self._handles.pop(handle, None)
        return b""

    def _model(self, payload: bytes):
        if len(payload) < 4:
            raise _ShapeError("missing handle")
        (handle,) = struct.unpack("<I", payload[:4])
        model = self._handles.get(handle)
        if model is None:
            raise KeyError(f"unknown model handle {handle}")
        return model, payload[4:]

    def _params_row(self, model, row: np.ndarray) -> ParamVector:
        return ParamVector.from_flat(model, row)

    def _forward(self, payload: bytes) -> bytes:
        model, rest = self._model(payload)
        if len(rest) < 4:
            raise _ShapeError("missing batch size")
        (n,) = struct.unpack("<I", rest[:4])
        width = model.n_dofs + N_SCALE_SLOTS + model.n_morph_targets
        body = rest[4:]
        if n < 1 or len(body) != 8 * n * width:
            raise _ShapeError(
                f"expected {n} rows of {width} float64 parameters, "
                f"got {len(body)} payload bytes"
            )
        rows = np.frombuffer(body, dtype="<f8").reshape(n, width)
        joints = np.empty((n, 3 * model.n_joints))
        verts = np.empty((n, 3 * model.n_vertices))
        for i in range(n):
            state = hpsl_forward(model, self._params_row(model, rows[i]))
            joints[i] = state.joint_positions.reshape(-1)
            verts[i] = state.vertices.reshape(-1)
        return joints.astype("<f8").tobytes() + verts.astype("<f8").tobytes()

    def _backward(self, payload: bytes) -> bytes:
        model, rest = self._model(payload)
        if len(rest) < 5:
            raise _ShapeError("missing batch header")
        n, has_v = struct.unpack("<IB", rest[:5])
        width = model.n_dofs + N_SCALE_SLOTS + model.n_morph_targets
        nj = 3 * model.n_joints
        nv = 3 * model.n_vertices
        body = rest[5:]
        expect = 8 * n * (width + nj + (nv if has_v else 0))
        if n < 1 or has_v not in (0, 1) or len(body) != expect:
            raise _ShapeError(
                f"expected {expect} payload bytes for batch of {n}, "
                f"got {len(body)}"
            )
        rows = np.frombuffer(body[:8 * n * width], dtype="<f8").reshape(n, width)
        off = 8 * n * width
        p_gt = np.frombuffer(body[off:off + 8 * n * nj], dtype="<f8").reshape(n, nj)
        off += 8 * n * nj
        v_gt = None
        if has_v:
            v_gt = np.frombuffer(body[off:], dtype="<f8").reshape(n, nv)
        grads = np.empty((n, width))
        for i in range(n):
            params = self._params_row(model, rows[i])
            state = hpsl_forward(model, params)
            g = hpsl_backward(
                model, params, state,
                p_gt[i].reshape(model.n_joints, 3),
                v_gt[i].reshape(model.n_vertices, 3) if has_v else None,
            )
            grads[i] = g.to_flat()
        return grads.astype("<f8").tobytes()

    def _jacobians(self, payload: bytes) -> bytes:
        model, rest = self._model(payload)
        width = model.n_dofs + N_SCALE_SLOTS + model.n_morph_targets
        if len(rest) != 8 * width:
            raise _ShapeError(f"expected {width} float64 parameters")
        params = self._params_row(model, np.frombuffer(rest, dtype="<f8"))
        js = jacobian_set(model, params)
        blocks = (js.joints.d_delta_theta, js.joints.d_alpha,
                  js.vertices.d_delta_theta, js.vertices.d_alpha,
                  js.vertices.d_beta)
        return b"".join(np.ascontiguousarray(b, dtype="<f8").tobytes()
                        for b in blocks)

    def _stats(self, payload: bytes) -> bytes:
        return struct.pack("<II", len(self._handles), len(self._assets))

    # -- loop ---------------------------------------------------------

    def handle(self, opcode: int, payload: bytes) -> tuple[int, bytes, bool]:
        """(status, payload, keep_running)"""
        try:
            if opcode == OP_VERSION:
                return ST_OK, __version__.encode(), True
            if opcode == OP_MODEL_LOAD:
                return ST_OK, self._load(payload), True
            if opcode == OP_MODEL_FREE:
                return ST_OK, self._free(payload), True
            if opcode == OP_BATCH_FORWARD:
                return ST_OK, self._forward(payload), True
            if opcode == OP_BATCH_BACKWARD:
                return ST_OK, self._backward(payload), True
            if opcode == OP_JACOBIANS:
                return ST_OK, self._jacobians(payload), True
            if opcode == OP_STATS:
                return ST_OK, self._stats(payload), True
            if opcode == OP_SHUTDOWN:
                return ST_OK, b"", False
            return ST_PROTOCOL, f"unknown opcode {opcode}".encode(), True
        except _ShapeError as e:
            return ST_SHAPE, str(e).encode(), True
        except KeyError as e:
            return ST_BAD_HANDLE, str(e).encode(), True
        except Exception as e:  # noqa: BLE001 - errors cross as codes
            return ST_RUNTIME, f"{type(e).__name__}: {e}".encode(), True


def serve(stdin=None, stdout=None) -> int:
    """Run the request loop until EOF or shutdown."""
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    server = Server()
    while True:
        header = stdin.read(5)
        if len(header) < 5:
            return 0
        length, opcode = struct.unpack("<IB", header)
        payload = stdin.read(length) if length else b""
        if len(payload) != length:
            return 0
        status, body, keep = server.handle(opcode, payload)
        stdout.write(struct.pack("<IB", len(body), status))
        stdout.write(body)
        stdout.flush()
        if not keep:
            return 0

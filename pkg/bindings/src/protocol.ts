/**
 * Wire format of the handforge embedding protocol.
 *
 * Little-endian, length-prefixed frames over a byte stream:
 *   request:  u32 payload length | u8 opcode | payload
 *   response: u32 payload length | u8 status | payload
 *
 * Arrays are row-major float64; parameter rows are laid out as
 * [pose deltas | 6 bone scales | shape weights] (mm and radians).
 */

export enum Opcode {
  Version = 0,
  ModelLoad = 1,
  ModelFree = 2,
  BatchForward = 3,
  BatchBackward = 4,
  Jacobians = 5,
  Stats = 6,
  Shutdown = 7,
}

export enum Status {
  Ok = 0,
  Protocol = 1,
  BadHandle = 2,
  Shape = 3,
  Runtime = 4,
}

export function encodeFrame(opcode: Opcode, payload: Buffer): Buffer {
  const header = Buffer.allocUnsafe(5);
  header.writeUInt32LE(payload.length, 0);
  header.writeUInt8(opcode, 4);
  return Buffer.concat([header, payload]);
}

export interface Response {
  status: Status;
  payload: Buffer;
}

/** Incremental response decoder over an arbitrary chunking of the stream. */
export class FrameReader {
  private buffer: Buffer = Buffer.alloc(0);

  push(chunk: Buffer): Response[] {
    this.buffer = this.buffer.length
      ? Buffer.concat([this.buffer, chunk])
      : chunk;
    const out: Response[] = [];
    for (;;) {
      if (this.buffer.length < 5) break;
      const length = this.buffer.readUInt32LE(0);
      if (this.buffer.length < 5 + length) break;
      out.push({
        status: this.buffer.readUInt8(4) as Status,
        payload: this.buffer.subarray(5, 5 + length),
      });
      this.buffer = this.buffer.subarray(5 + length);
    }
    return out;
  }
}

/** Copy bytes into a fresh aligned Float64Array (buffers from the stream
 * are not guaranteed 8-byte aligned). */
export function toFloat64(buf: Buffer): Float64Array {
  const aligned = new ArrayBuffer(buf.length);
  Buffer.from(aligned).set(buf);
  return new Float64Array(aligned);
}

export function fromFloat64(arr: Float64Array): Buffer {
  return Buffer.from(arr.buffer, arr.byteOffset, arr.byteLength);
}

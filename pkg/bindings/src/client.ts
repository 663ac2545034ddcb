/**
 * Client for the handforge embedding protocol.
 *
 * Spawns the layer's protocol server as a child process and exposes
 * batched forward/backward evaluation and dense Jacobian blocks over flat
 * Float64Arrays. One request is in flight at a time; calls queue. Server
 * errors surface as ServeError values carrying the protocol status code -
 * they never terminate the host process or the server.
 */

import { ChildProcess, spawn } from "node:child_process";
import path from "node:path";
import { fileURLToPath } from "node:url";

import {
  FrameReader,
  Opcode,
  Status,
  encodeFrame,
  fromFloat64,
  toFloat64,
} from "./protocol.js";

export class ServeError extends Error {
  constructor(
    readonly code: Status,
    message: string,
  ) {
    super(message);
    this.name = "ServeError";
  }
}

export interface SpawnOptions {
  /** Executable and arguments; defaults to `python3 -m handforge serve`. */
  command?: string[];
  /** Extra environment; PYTHONPATH defaults to the sibling src/ tree so a
   * repository checkout works without installing the package. */
  env?: Record<string, string>;
}

export interface ModelHandle {
  readonly id: number;
  readonly joints: number;
  readonly vertices: number;
  readonly dofs: number;
  readonly shapeTargets: number;
  /** Parameter row width: dofs + 6 scales + shapeTargets. */
  readonly paramWidth: number;
}

export interface ForwardResult {
  /** (n, 3*joints) row-major mm. */
  joints: Float64Array;
  /** (n, 3*vertices) row-major mm. */
  vertices: Float64Array;
}

export interface JacobianBlocks {
  jointsPose: Float64Array; // (3J, dofs)
  jointsScale: Float64Array; // (3J, 6)
  verticesPose: Float64Array; // (3V, dofs)
  verticesScale: Float64Array; // (3V, 6)
  verticesShape: Float64Array; // (3V, targets)
}

export interface Stats {
  liveHandles: number;
  cachedAssets: number;
}

function defaultCommand(): string[] {
  return ["python3", "-m", "handforge", "serve"];
}

function repositorySrc(): string {
  const here = path.dirname(fileURLToPath(import.meta.url));
  // dist/src/client.js -> package root -> repository src tree
  return path.resolve(here, "..", "..", "..", "src");
}

export class HandLayer {
  private readonly reader = new FrameReader();
  private queue: Array<{
    resolve: (r: { status: Status; payload: Buffer }) => void;
    reject: (e: Error) => void;
  }> = [];
  private closed = false;

  private constructor(private readonly child: ChildProcess) {
    child.stdout!.on("data", (chunk: Buffer) => {
      for (const response of this.reader.push(chunk)) {
        const waiter = this.queue.shift();
        waiter?.resolve(response);
      }
    });
    const fail = (reason: string) => {
      this.closed = true;
      for (const waiter of this.queue.splice(0)) {
        waiter.reject(new ServeError(Status.Runtime, reason));
      }
    };
    child.on("error", (e) => fail(`server failed to start: ${e.message}`));
    child.on("exit", (code) => {
      if (this.queue.length) fail(`server exited with code ${code}`);
      this.closed = true;
    });
  }

  static async spawn(options: SpawnOptions = {}): Promise<HandLayer> {
    const command = options.command ?? defaultCommand();
    const env = {
      ...process.env,
      PYTHONPATH: repositorySrc(),
      ...options.env,
    };
    const child = spawn(command[0], command.slice(1), {
      stdio: ["pipe", "pipe", "inherit"],
      env,
    });
    const layer = new HandLayer(child);
    await layer.version(); // readiness check
    return layer;
  }

  /** Raw request; exposed for protocol tests. */
  request(opcode: Opcode, payload: Buffer): Promise<Buffer> {
    if (this.closed) {
      return Promise.reject(new ServeError(Status.Runtime, "server closed"));
    }
    return new Promise((resolve, reject) => {
      this.queue.push({
        resolve: ({ status, payload: body }) => {
          if (status === Status.Ok) resolve(Buffer.from(body));
          else reject(new ServeError(status, body.toString("utf-8")));
        },
        reject,
      });
      this.child.stdin!.write(encodeFrame(opcode, payload));
    });
  }

  async version(): Promise<string> {
    const body = await this.request(Opcode.Version, Buffer.alloc(0));
    return body.toString("utf-8");
  }

  async modelLoad(assetPath: string): Promise<ModelHandle> {
    const body = await this.request(
      Opcode.ModelLoad,
      Buffer.from(assetPath, "utf-8"),
    );
    const id = body.readUInt32LE(0);
    const joints = body.readUInt32LE(4);
    const vertices = body.readUInt32LE(8);
    const dofs = body.readUInt32LE(12);
    const shapeTargets = body.readUInt32LE(16);
    return {
      id,
      joints,
      vertices,
      dofs,
      shapeTargets,
      paramWidth: dofs + 6 + shapeTargets,
    };
  }

  async modelFree(handle: ModelHandle): Promise<void> {
    const payload = Buffer.allocUnsafe(4);
    payload.writeUInt32LE(handle.id, 0);
    await this.request(Opcode.ModelFree, payload);
  }

  private checkRows(
    handle: ModelHandle,
    params: Float64Array,
    n: number,
  ): void {
    if (n < 1 || !Number.isInteger(n)) {
      throw new ServeError(Status.Shape, `batch size must be >= 1, got ${n}`);
    }
    if (params.length !== n * handle.paramWidth) {
      throw new ServeError(
        Status.Shape,
        `params must hold ${n} rows of ${handle.paramWidth}, got length ${params.length}`,
      );
    }
  }

  async batchForward(
    handle: ModelHandle,
    params: Float64Array,
    n: number,
  ): Promise<ForwardResult> {
    this.checkRows(handle, params, n);
    const head = Buffer.allocUnsafe(8);
    head.writeUInt32LE(handle.id, 0);
    head.writeUInt32LE(n, 4);
    const body = await this.request(
      Opcode.BatchForward,
      Buffer.concat([head, fromFloat64(params)]),
    );
    const jointBytes = 8 * n * 3 * handle.joints;
    return {
      joints: toFloat64(body.subarray(0, jointBytes)),
      vertices: toFloat64(body.subarray(jointBytes)),
    };
  }

  async batchBackward(
    handle: ModelHandle,
    params: Float64Array,
    n: number,
    jointsGt: Float64Array,
    verticesGt: Float64Array | null,
  ): Promise<Float64Array> {
    this.checkRows(handle, params, n);
    if (jointsGt.length !== n * 3 * handle.joints) {
      throw new ServeError(
        Status.Shape,
        `joint targets must hold ${n * 3 * handle.joints} values`,
      );
    }
    if (verticesGt !== null && verticesGt.length !== n * 3 * handle.vertices) {
      throw new ServeError(
        Status.Shape,
        `vertex targets must hold ${n * 3 * handle.vertices} values`,
      );
    }
    const head = Buffer.allocUnsafe(9);
    head.writeUInt32LE(handle.id, 0);
    head.writeUInt32LE(n, 4);
    head.writeUInt8(verticesGt === null ? 0 : 1, 8);
    const parts = [head, fromFloat64(params), fromFloat64(jointsGt)];
    if (verticesGt !== null) parts.push(fromFloat64(verticesGt));
    const body = await this.request(Opcode.BatchBackward, Buffer.concat(parts));
    return toFloat64(body);
  }

  async jacobians(
    handle: ModelHandle,
    params: Float64Array,
  ): Promise<JacobianBlocks> {
    this.checkRows(handle, params, 1);
    const head = Buffer.allocUnsafe(4);
    head.writeUInt32LE(handle.id, 0);
    const body = await this.request(
      Opcode.Jacobians,
      Buffer.concat([head, fromFloat64(params)]),
    );
    const j3 = 3 * handle.joints;
    const v3 = 3 * handle.vertices;
    const d = handle.dofs;
    const t = handle.shapeTargets;
    const sizes = [j3 * d, j3 * 6, v3 * d, v3 * 6, v3 * t];
    let offset = 0;
    const blocks: Float64Array[] = sizes.map((size) => {
      const block = toFloat64(body.subarray(offset, offset + 8 * size));
      offset += 8 * size;
      return block;
    });
    return {
      jointsPose: blocks[0],
      jointsScale: blocks[1],
      verticesPose: blocks[2],
      verticesScale: blocks[3],
      verticesShape: blocks[4],
    };
  }

  async stats(): Promise<Stats> {
    const body = await this.request(Opcode.Stats, Buffer.alloc(0));
    return {
      liveHandles: body.readUInt32LE(0),
      cachedAssets: body.readUInt32LE(4),
    };
  }

  async close(): Promise<void> {
    if (this.closed) return;
    try {
      await this.request(Opcode.Shutdown, Buffer.alloc(0));
    } catch {
      // server already gone
    }
    this.closed = true;
    this.child.stdin!.end();
    await new Promise<void>((resolve) => {
      if (this.child.exitCode !== null) resolve();
      else this.child.once("exit", () => resolve());
    });
  }
}

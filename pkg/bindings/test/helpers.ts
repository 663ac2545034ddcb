import { execFileSync } from "node:child_process";
import { mkdtempSync } from "node:fs";
import os from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";

import { HandLayer } from "../src/client.js";

const here = path.dirname(fileURLToPath(import.meta.url));
// dist/test/helpers.js -> bindings/ -> repository root
const repoRoot = path.resolve(here, "..", "..", "..");
export const pythonSrc = path.join(repoRoot, "src");

let cachedAsset: string | null = null;

/** Generate the default asset once per test run. */
export function assetPath(): string {
  if (cachedAsset) return cachedAsset;
  const dir = mkdtempSync(path.join(os.tmpdir(), "handforge-"));
  const out = path.join(dir, "hand.hfa");
  execFileSync("python3", ["-m", "handforge", "model", "gen", "--out", out], {
    env: { ...process.env, PYTHONPATH: pythonSrc },
    stdio: ["ignore", "ignore", "inherit"],
  });
  cachedAsset = out;
  return out;
}

export async function spawnLayer(): Promise<HandLayer> {
  return HandLayer.spawn({ env: { PYTHONPATH: pythonSrc } });
}

/** Deterministic 32-bit generator for reproducible test inputs. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Random parameter rows in moderate ranges (n x paramWidth). */
export function randomRows(
  n: number,
  width: number,
  dofs: number,
  seed: number,
): Float64Array {
  const rand = mulberry32(seed);
  const rows = new Float64Array(n * width);
  for (let i = 0; i < n; i++) {
    const base = i * width;
    for (let p = 0; p < 3; p++) rows[base + p] = (rand() - 0.5) * 80;
    for (let p = 3; p < 6; p++) rows[base + p] = (rand() - 0.5) * 1.2;
    for (let p = 6; p < dofs; p++) rows[base + p] = rand() * 0.6 - 0.1;
    for (let p = dofs; p < dofs + 6; p++) rows[base + p] = 0.7 + rand() * 0.7;
    for (let p = dofs + 6; p < width; p++) rows[base + p] = (rand() - 0.5) * 1.6;
  }
  return rows;
}

export function bytesEqual(a: Float64Array, b: Float64Array): boolean {
  if (a.length !== b.length) return false;
  const ba = Buffer.from(a.buffer, a.byteOffset, a.byteLength);
  const bb = Buffer.from(b.buffer, b.byteOffset, b.byteLength);
  return ba.equals(bb);
}

/** Writer for the neutral model-asset directory: ``manifest.json`` + ``payload.bin``.
 *
 * Payload layout: the six arrays concatenated in a fixed order, floats as
 * little-endian f32 and index arrays as little-endian i32, all row-major.
 * The manifest records the shapes and byte offsets. Output bytes are a
 * deterministic function of the input arrays.
 */

import { createHash } from "node:crypto";
import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { InvariantError } from "./errors.js";

export interface NeutralModel {
  /** (K, 3) rest-pose vertices. */
  template: Float64Array;
  /** (3K, s) shape basis, row index = vertex * 3 + axis. */
  shapeBasis: Float64Array;
  /** (K, J) skinning weights, rows sum to 1. */
  blendWeights: Float64Array;
  /** (J, K) joint regressor, rows sum to 1. */
  jointRegressor: Float64Array;
  /** (J,) parent joint per joint, -1 at the single root. */
  parents: Int32Array;
  /** (F, 3) triangle vertex indices. */
  faces: Int32Array;
  numVertices: number;
  numJoints: number;
  numCoeffs: number;
}

const ROOT_SENTINEL = -1;

/** Check every structural invariant the neutral loader will enforce.
 *
 * Floats are rounded through f32 first so the checks see exactly what a
 * reader of the emitted payload will see.
 */
export function validateNeutral(model: NeutralModel): void {
  const { numVertices: k, numJoints: j, numCoeffs: s } = model;
  const expect = (name: string, arr: { length: number }, len: number) => {
    if (arr.length !== len) {
      throw new InvariantError(name, `expected ${len} values, got ${arr.length}`);
    }
  };
  expect("template", model.template, k * 3);
  expect("shape_basis", model.shapeBasis, 3 * k * s);
  expect("blend_weights", model.blendWeights, k * j);
  expect("joint_regressor", model.jointRegressor, j * k);
  expect("parents", model.parents, j);
  if (model.faces.length % 3 !== 0) {
    throw new InvariantError("faces", `expected triangles, got ${model.faces.length} indices`);
  }

  const weights = Float32Array.from(model.blendWeights);
  for (let v = 0; v < k; v++) {
    let sum = 0;
    for (let q = 0; q < j; q++) {
      const w = weights[v * j + q];
      if (w < 0) throw new InvariantError("blend_weights", `negative entry at vertex ${v}`);
      sum += w;
    }
    if (Math.abs(sum - 1) > 1e-6) {
      throw new InvariantError(
        "blend_weights",
        `row ${v} sums to ${sum} (must be 1 within 1e-6)`
      );
    }
  }
  const regressor = Float32Array.from(model.jointRegressor);
  for (let q = 0; q < j; q++) {
    let sum = 0;
    for (let v = 0; v < k; v++) sum += regressor[q * k + v];
    if (Math.abs(sum - 1) > 1e-5) {
      throw new InvariantError(
        "joint_regressor",
        `row ${q} sums to ${sum} (must be 1 within 1e-5)`
      );
    }
  }

  let roots = 0;
  for (let q = 0; q < j; q++) {
    const p = model.parents[q];
    if (p === ROOT_SENTINEL) roots += 1;
    else if (p < 0 || p >= j) {
      throw new InvariantError("parents", `joint ${q} has out-of-range parent ${p}`);
    }
  }
  if (roots !== 1) {
    throw new InvariantError("parents", `expected exactly one root, found ${roots}`);
  }
  for (let q = 0; q < j; q++) {
    let cur = q;
    let steps = 0;
    while (model.parents[cur] !== ROOT_SENTINEL) {
      cur = model.parents[cur];
      if (++steps > j) {
        throw new InvariantError("parents", `cycle detected walking up from joint ${q}`);
      }
    }
  }
  for (let i = 0; i < model.faces.length; i++) {
    const v = model.faces[i];
    if (v < 0 || v >= k) {
      throw new InvariantError("faces", `vertex index ${v} out of range [0,${k})`);
    }
  }

  const finite = (name: string, arr: Float64Array) => {
    for (let i = 0; i < arr.length; i++) {
      if (!Number.isFinite(arr[i])) {
        throw new InvariantError(name, `non-finite value at flat index ${i}`);
      }
    }
  };
  finite("template", model.template);
  finite("shape_basis", model.shapeBasis);
}

interface ArrayEntry {
  name: string;
  shape: number[];
  offset: number;
}

function payloadParts(model: NeutralModel): { entries: ArrayEntry[]; parts: Buffer[] } {
  const k = model.numVertices;
  const j = model.numJoints;
  const s = model.numCoeffs;
  const f = model.faces.length / 3;
  const floats: [string, number[], Float64Array][] = [
    ["template", [k, 3], model.template],
    ["shape_basis", [3 * k, s], model.shapeBasis],
    ["blend_weights", [k, j], model.blendWeights],
    ["joint_regressor", [j, k], model.jointRegressor],
  ];
  const ints: [string, number[], Int32Array][] = [
    ["parents", [j], model.parents],
    ["faces", [f, 3], model.faces],
  ];
  const entries: ArrayEntry[] = [];
  const parts: Buffer[] = [];
  let offset = 0;
  for (const [name, shape, values] of floats) {
    const out = Float32Array.from(values);
    const buf = Buffer.from(out.buffer, out.byteOffset, out.byteLength);
    entries.push({ name, shape, offset });
    parts.push(buf);
    offset += buf.length;
  }
  for (const [name, shape, values] of ints) {
    const out = Int32Array.from(values);
    const buf = Buffer.from(out.buffer, out.byteOffset, out.byteLength);
    entries.push({ name, shape, offset });
    parts.push(buf);
    offset += buf.length;
  }
  return { entries, parts };
}

/** JSON with 2-space indent and recursively sorted object keys. */
export function stableJson(value: unknown): string {
  const sorted = (v: unknown): unknown => {
    if (Array.isArray(v)) return v.map(sorted);
    if (v !== null && typeof v === "object") {
      const out: Record<string, unknown> = {};
      for (const key of Object.keys(v as Record<string, unknown>).sort()) {
        out[key] = sorted((v as Record<string, unknown>)[key]);
      }
      return out;
    }
    return v;
  };
  return JSON.stringify(sorted(value), null, 2) + "\n";
}

export interface WrittenAsset {
  /** sha256 hex digest of payload.bin. */
  checksum: string;
  /** Array name -> shape, as recorded in the manifest. */
  shapes: Record<string, number[]>;
}

/** Validate and write the neutral directory; returns the payload checksum. */
export function writeNeutral(model: NeutralModel, outDir: string): WrittenAsset {
  validateNeutral(model);
  const { entries, parts } = payloadParts(model);
  const payload = Buffer.concat(parts);
  const manifest = {
    arrays: entries,
    byte_order: "little",
    dtype: "f32",
    f: model.faces.length / 3,
    j: model.numJoints,
    k: model.numVertices,
    s: model.numCoeffs,
  };
  mkdirSync(outDir, { recursive: true });
  writeFileSync(join(outDir, "manifest.json"), stableJson(manifest), "utf-8");
  writeFileSync(join(outDir, "payload.bin"), payload);
  const shapes: Record<string, number[]> = {};
  for (const entry of entries) shapes[entry.name] = entry.shape;
  return { checksum: createHash("sha256").update(payload).digest("hex"), shapes };
}

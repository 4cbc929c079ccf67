/** Extraction of the neutral model arrays from upstream checkpoint archives.
 *
 * Both supported families store the same core arrays under the same keys:
 * ``v_template`` (K,3), ``shapedirs`` (K,3,S), ``weights`` (K,J),
 * ``J_regressor`` (J,K) dense - or as a data/indices/indptr CSR triple -
 * ``kintree_table`` (2,J) and ``f`` (F,3). They differ in topology size
 * and in the extra hand/face arrays only the larger family carries.
 */

import { MissingFieldError, UnsupportedLayoutError } from "./errors.js";
import type { NpyArray } from "./npy.js";
import type { NpzArchive } from "./npz.js";
import type { NeutralModel } from "./neutral.js";

export type Family = "smpl" | "smplx";

/** Maximum number of shape columns kept in the neutral asset. */
export const MAX_COEFFS = 10;

const SMPLX_ONLY_KEYS = [
  "hands_componentsl",
  "hands_componentsr",
  "hands_meanl",
  "hands_meanr",
  "lmk_faces_idx",
  "lmk_bary_coords",
  "dynamic_lmk_faces_idx",
];

export function detectFamily(archive: NpzArchive): Family {
  return SMPLX_ONLY_KEYS.some((key) => archive.has(key)) ? "smplx" : "smpl";
}

function required(archive: NpzArchive, key: string): NpyArray {
  const arr = archive.array(key);
  if (arr === undefined) {
    throw new MissingFieldError(key, `archive holds ${archive.keys().join(", ")}`);
  }
  return arr;
}

function expectShape(name: string, arr: NpyArray, shape: (number | null)[]): void {
  const ok =
    arr.shape.length === shape.length &&
    shape.every((want, i) => want === null || arr.shape[i] === want);
  if (!ok) {
    throw new UnsupportedLayoutError(
      name,
      `expected shape (${shape.map((v) => v ?? "*").join(", ")}), got (${arr.shape.join(", ")})`
    );
  }
}

/** (K,3,S) shape displacements -> (3K, s) basis with row = vertex*3 + axis. */
function basisFromShapedirs(shapedirs: NpyArray, k: number): {
  basis: Float64Array;
  coeffs: number;
} {
  expectShape("shapedirs", shapedirs, [k, 3, null]);
  const total = shapedirs.shape[2];
  const coeffs = Math.min(total, MAX_COEFFS);
  if (coeffs === 0) {
    throw new UnsupportedLayoutError("shapedirs", "no shape columns");
  }
  const basis = new Float64Array(3 * k * coeffs);
  for (let v = 0; v < k; v++) {
    for (let axis = 0; axis < 3; axis++) {
      const srcRow = (v * 3 + axis) * total;
      const dstRow = (v * 3 + axis) * coeffs;
      for (let c = 0; c < coeffs; c++) basis[dstRow + c] = shapedirs.data[srcRow + c];
    }
  }
  return { basis, coeffs };
}

/** Dense (J,K) regressor, or reassembled from a scipy CSR triple. */
function regressorArray(archive: NpzArchive, j: number, k: number): Float64Array {
  const dense = archive.array("J_regressor");
  if (dense !== undefined) {
    expectShape("J_regressor", dense, [j, k]);
    return dense.data;
  }
  const data = archive.array("J_regressor_data");
  const indices = archive.array("J_regressor_indices");
  const indptr = archive.array("J_regressor_indptr");
  if (data === undefined || indices === undefined || indptr === undefined) {
    throw new MissingFieldError("J_regressor");
  }
  if (indptr.data.length !== j + 1) {
    throw new UnsupportedLayoutError(
      "J_regressor_indptr",
      `expected ${j + 1} row pointers, got ${indptr.data.length}`
    );
  }
  const out = new Float64Array(j * k);
  for (let row = 0; row < j; row++) {
    const start = indptr.data[row];
    const end = indptr.data[row + 1];
    for (let at = start; at < end; at++) {
      const col = indices.data[at];
      if (col < 0 || col >= k) {
        throw new UnsupportedLayoutError("J_regressor_indices", `column ${col} out of range`);
      }
      out[row * k + col] = data.data[at];
    }
  }
  return out;
}

/** Row 0 of kintree_table with upstream root markers mapped to -1. */
function parentsFromKintree(kintree: NpyArray, j: number): Int32Array {
  expectShape("kintree_table", kintree, [2, j]);
  const parents = new Int32Array(j);
  for (let q = 0; q < j; q++) {
    const raw = kintree.data[q];
    // Upstream marks the root with uint32 -1 (4294967295) or a negative.
    parents[q] = raw < 0 || raw >= j ? -1 : raw;
  }
  return parents;
}

export function extractModel(archive: NpzArchive): NeutralModel {
  const template = required(archive, "v_template");
  expectShape("v_template", template, [null, 3]);
  const k = template.shape[0];

  const weights = required(archive, "weights");
  expectShape("weights", weights, [k, null]);
  const j = weights.shape[1];

  const { basis, coeffs } = basisFromShapedirs(required(archive, "shapedirs"), k);
  const regressor = regressorArray(archive, j, k);
  const parents = parentsFromKintree(required(archive, "kintree_table"), j);

  const facesArr = required(archive, "f");
  expectShape("f", facesArr, [null, 3]);
  const faces = new Int32Array(facesArr.data.length);
  for (let i = 0; i < faces.length; i++) {
    const v = facesArr.data[i];
    if (!Number.isInteger(v)) {
      throw new UnsupportedLayoutError("f", `non-integer vertex index ${v}`);
    }
    faces[i] = v;
  }

  return {
    template: template.data,
    shapeBasis: basis,
    blendWeights: weights.data,
    jointRegressor: regressor,
    parents,
    faces,
    numVertices: k,
    numJoints: j,
    numCoeffs: coeffs,
  };
}

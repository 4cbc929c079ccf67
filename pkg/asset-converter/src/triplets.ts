/** Conversion of sparse point-regressor assets to 'row col value' triplet text.
 *
 * Accepts a scipy sparse archive (csr, csc, or coo layout, as written by
 * ``save_npz``) or a dense 2-D ``.npy`` matrix. Output lines are sorted by
 * (row, col), duplicate coordinates are summed (coo semantics), and the
 * values are shortest round-trip decimals, so the bytes are a
 * deterministic function of the input matrix.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { MissingFieldError, UnsupportedLayoutError } from "./errors.js";
import { parseNpy, type NpyArray } from "./npy.js";
import { NpzArchive } from "./npz.js";

export interface SparseMatrix {
  rows: number;
  cols: number;
  /** key = row * cols + col */
  entries: Map<number, number>;
}

function emptyMatrix(rows: number, cols: number): SparseMatrix {
  if (rows <= 0 || cols <= 0) {
    throw new UnsupportedLayoutError("shape", `matrix shape (${rows}, ${cols}) is empty`);
  }
  return { rows, cols, entries: new Map() };
}

function addEntry(m: SparseMatrix, row: number, col: number, value: number, name: string): void {
  if (row < 0 || row >= m.rows || col < 0 || col >= m.cols) {
    throw new UnsupportedLayoutError(name, `entry (${row}, ${col}) outside (${m.rows}, ${m.cols})`);
  }
  if (!Number.isFinite(value)) {
    throw new UnsupportedLayoutError(name, `non-finite value at (${row}, ${col})`);
  }
  if (value === 0) return;
  const key = row * m.cols + col;
  const next = (m.entries.get(key) ?? 0) + value;
  if (next === 0) m.entries.delete(key);
  else m.entries.set(key, next);
}

function requireKey(archive: NpzArchive, key: string): NpyArray {
  const arr = archive.array(key);
  if (arr === undefined) {
    throw new MissingFieldError(key, `archive holds ${archive.keys().join(", ")}`);
  }
  return arr;
}

function fromCompressed(archive: NpzArchive, byRows: boolean): SparseMatrix {
  const shape = requireKey(archive, "shape").data;
  const m = emptyMatrix(shape[0], shape[1]);
  const data = requireKey(archive, "data").data;
  const indices = requireKey(archive, "indices").data;
  const indptr = requireKey(archive, "indptr").data;
  const outer = byRows ? m.rows : m.cols;
  if (indptr.length !== outer + 1) {
    throw new UnsupportedLayoutError("indptr", `expected ${outer + 1} pointers, got ${indptr.length}`);
  }
  for (let o = 0; o < outer; o++) {
    for (let at = indptr[o]; at < indptr[o + 1]; at++) {
      const inner = indices[at];
      if (byRows) addEntry(m, o, inner, data[at], "data");
      else addEntry(m, inner, o, data[at], "data");
    }
  }
  return m;
}

function fromCoo(archive: NpzArchive): SparseMatrix {
  const shape = requireKey(archive, "shape").data;
  const m = emptyMatrix(shape[0], shape[1]);
  const data = requireKey(archive, "data").data;
  const row = requireKey(archive, "row").data;
  const col = requireKey(archive, "col").data;
  if (row.length !== data.length || col.length !== data.length) {
    throw new UnsupportedLayoutError("data", "row/col/data lengths disagree");
  }
  for (let i = 0; i < data.length; i++) addEntry(m, row[i], col[i], data[i], "data");
  return m;
}

function fromDense(arr: NpyArray): SparseMatrix {
  if (arr.shape.length !== 2) {
    throw new UnsupportedLayoutError("matrix", `expected 2-D, got shape (${arr.shape.join(", ")})`);
  }
  const m = emptyMatrix(arr.shape[0], arr.shape[1]);
  for (let r = 0; r < m.rows; r++) {
    for (let c = 0; c < m.cols; c++) addEntry(m, r, c, arr.data[r * m.cols + c], "matrix");
  }
  return m;
}

const NPY_MAGIC = Buffer.from("\x93NUMPY", "latin1");
const ZIP_MAGIC = Buffer.from("PK");

export async function readSparseMatrix(srcPath: string): Promise<SparseMatrix> {
  const buf = readFileSync(srcPath);
  if (buf.subarray(0, 6).equals(NPY_MAGIC)) {
    return fromDense(parseNpy(buf, srcPath));
  }
  if (!buf.subarray(0, 2).equals(ZIP_MAGIC)) {
    throw new UnsupportedLayoutError(srcPath, "neither an .npy matrix nor an .npz archive");
  }
  const archive = await NpzArchive.open(buf, srcPath);
  const format = archive.has("format") ? archive.strings("format")!.data[0] : "csr";
  switch (format) {
    case "csr":
      return fromCompressed(archive, true);
    case "csc":
      return fromCompressed(archive, false);
    case "coo":
      return fromCoo(archive);
    default:
      throw new UnsupportedLayoutError("format", `sparse layout ${JSON.stringify(format)} not supported`);
  }
}

/** Render sorted 'row col value' lines; rejects matrices the consumer would. */
export function tripletText(m: SparseMatrix): string {
  if (m.entries.size === 0) {
    throw new UnsupportedLayoutError("matrix", "no nonzero entries");
  }
  const perRow = new Uint32Array(m.rows);
  const keys = [...m.entries.keys()].sort((a, b) => a - b);
  const lines: string[] = [];
  for (const key of keys) {
    const row = Math.floor(key / m.cols);
    const col = key % m.cols;
    perRow[row] += 1;
    lines.push(`${row} ${col} ${String(m.entries.get(key)!)}`);
  }
  for (let r = 0; r < m.rows; r++) {
    if (perRow[r] === 0) {
      throw new UnsupportedLayoutError("matrix", `row ${r} has no nonzero entries`);
    }
  }
  return lines.join("\n") + "\n";
}

/** Convert a sparse-regressor asset to a triplet file; returns the row count p. */
export async function convertRegressor(srcPath: string, dstPath: string): Promise<number> {
  const matrix = await readSparseMatrix(srcPath);
  writeFileSync(dstPath, tripletText(matrix), "utf-8");
  return matrix.rows;
}

/** Reader for the numpy ``.npy`` serialization format (versions 1.0-3.0).
 *
 * Numeric arrays come back as Float64Array in C (row-major) order whatever
 * the stored order was; every supported integer dtype fits a double
 * exactly or the parser refuses. Byte-string arrays ("|S..") come back as
 * decoded strings, which is enough for the ``format`` tag scipy stores in
 * sparse-matrix archives.
 */

import { UnsupportedLayoutError } from "./errors.js";

const MAGIC = Buffer.from("\x93NUMPY", "latin1");

export interface NpyArray {
  shape: number[];
  /** Row-major values; integers are exact (checked against 2^53). */
  data: Float64Array;
  /** Original dtype character: f, i, u, b. */
  kind: string;
}

export interface NpyStrings {
  shape: number[];
  data: string[];
}

interface Header {
  descr: string;
  fortranOrder: boolean;
  shape: number[];
  dataOffset: number;
}

function parseHeader(buf: Buffer, name: string): Header {
  if (buf.length < 10 || !buf.subarray(0, 6).equals(MAGIC)) {
    throw new UnsupportedLayoutError(name, "not an npy file (bad magic)");
  }
  const major = buf[6];
  let headerLen: number;
  let headerStart: number;
  if (major === 1) {
    headerLen = buf.readUInt16LE(8);
    headerStart = 10;
  } else if (major === 2 || major === 3) {
    headerLen = buf.readUInt32LE(8);
    headerStart = 12;
  } else {
    throw new UnsupportedLayoutError(name, `npy version ${major} not supported`);
  }
  const dataOffset = headerStart + headerLen;
  if (dataOffset > buf.length) {
    throw new UnsupportedLayoutError(name, "truncated npy header");
  }
  const header = buf.subarray(headerStart, dataOffset).toString("latin1");

  const descrMatch = header.match(/'descr'\s*:\s*'([^']+)'/);
  const orderMatch = header.match(/'fortran_order'\s*:\s*(True|False)/);
  const shapeMatch = header.match(/'shape'\s*:\s*\(([^)]*)\)/);
  if (!descrMatch || !orderMatch || !shapeMatch) {
    throw new UnsupportedLayoutError(name, `malformed npy header: ${header.trim()}`);
  }
  const shape = shapeMatch[1]
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => {
      const v = Number(s);
      if (!Number.isInteger(v) || v < 0) {
        throw new UnsupportedLayoutError(name, `bad shape entry ${JSON.stringify(s)}`);
      }
      return v;
    });
  return {
    descr: descrMatch[1],
    fortranOrder: orderMatch[1] === "True",
    shape,
    dataOffset,
  };
}

function numElements(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

/** Reorder column-major values into row-major for an arbitrary rank. */
function fortranToC(values: Float64Array, shape: number[]): Float64Array {
  const n = numElements(shape);
  const rank = shape.length;
  if (rank <= 1) return values;
  // Column-major strides of the source layout.
  const strides = new Array<number>(rank);
  strides[0] = 1;
  for (let d = 1; d < rank; d++) strides[d] = strides[d - 1] * shape[d - 1];
  const out = new Float64Array(n);
  const index = new Array<number>(rank).fill(0);
  for (let flat = 0; flat < n; flat++) {
    let src = 0;
    for (let d = 0; d < rank; d++) src += index[d] * strides[d];
    out[flat] = values[src];
    // Advance the row-major (last axis fastest) counter.
    for (let d = rank - 1; d >= 0; d--) {
      if (++index[d] < shape[d]) break;
      index[d] = 0;
    }
  }
  return out;
}

function decodeNumeric(
  buf: Buffer,
  header: Header,
  name: string
): { data: Float64Array; kind: string } {
  const m = header.descr.match(/^([<>|=]?)([a-zA-Z])(\d+)$/);
  if (!m) {
    throw new UnsupportedLayoutError(name, `dtype ${JSON.stringify(header.descr)} not supported`);
  }
  const [, byteOrder, kind, sizeStr] = m;
  if (byteOrder === ">") {
    throw new UnsupportedLayoutError(name, "big-endian payload not supported");
  }
  const itemSize = Number(sizeStr);
  const n = numElements(header.shape);
  const body = buf.subarray(header.dataOffset);
  if (body.length < n * itemSize) {
    throw new UnsupportedLayoutError(
      name,
      `payload holds ${body.length} bytes, expected ${n * itemSize}`
    );
  }
  const view = new DataView(body.buffer, body.byteOffset, n * itemSize);
  const out = new Float64Array(n);
  const read = (i: number): number => {
    const at = i * itemSize;
    switch (kind + itemSize) {
      case "f8":
        return view.getFloat64(at, true);
      case "f4":
        return view.getFloat32(at, true);
      case "i1":
        return view.getInt8(at);
      case "i2":
        return view.getInt16(at, true);
      case "i4":
        return view.getInt32(at, true);
      case "u1":
      case "b1":
        return view.getUint8(at);
      case "u2":
        return view.getUint16(at, true);
      case "u4":
        return view.getUint32(at, true);
      case "i8": {
        const v = view.getBigInt64(at, true);
        if (v > BigInt(Number.MAX_SAFE_INTEGER) || v < -BigInt(Number.MAX_SAFE_INTEGER)) {
          throw new UnsupportedLayoutError(name, `int64 value ${v} exceeds exact double range`);
        }
        return Number(v);
      }
      case "u8": {
        const v = view.getBigUint64(at, true);
        if (v > BigInt(Number.MAX_SAFE_INTEGER)) {
          throw new UnsupportedLayoutError(name, `uint64 value ${v} exceeds exact double range`);
        }
        return Number(v);
      }
      default:
        throw new UnsupportedLayoutError(
          name,
          `dtype ${JSON.stringify(header.descr)} not supported`
        );
    }
  };
  for (let i = 0; i < n; i++) out[i] = read(i);
  return { data: header.fortranOrder ? fortranToC(out, header.shape) : out, kind };
}

/** Parse one numeric .npy buffer; ``name`` labels errors. */
export function parseNpy(buf: Buffer, name = "npy"): NpyArray {
  const header = parseHeader(buf, name);
  const { data, kind } = decodeNumeric(buf, header, name);
  return { shape: header.shape, data, kind };
}

/** Parse a byte-string (``|S..``) .npy buffer into decoded strings. */
export function parseNpyStrings(buf: Buffer, name = "npy"): NpyStrings {
  const header = parseHeader(buf, name);
  const m = header.descr.match(/^\|?S(\d+)$/);
  if (!m) {
    throw new UnsupportedLayoutError(
      name,
      `expected byte strings, got dtype ${JSON.stringify(header.descr)}`
    );
  }
  const itemSize = Number(m[1]);
  const n = numElements(header.shape);
  const body = buf.subarray(header.dataOffset);
  if (body.length < n * itemSize) {
    throw new UnsupportedLayoutError(name, "truncated string payload");
  }
  const data: string[] = [];
  for (let i = 0; i < n; i++) {
    const raw = body.subarray(i * itemSize, (i + 1) * itemSize);
    const end = raw.indexOf(0);
    data.push(raw.subarray(0, end < 0 ? itemSize : end).toString("latin1"));
  }
  return { shape: header.shape, data };
}

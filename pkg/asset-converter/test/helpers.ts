/** Fixture builders: hand-rolled .npy buffers and jszip-packed .npz archives. */

import JSZip from "jszip";

export interface NpySpec {
  descr: string;
  shape: number[];
  /** Flat values, in the order implied by fortranOrder. */
  values: number[];
  fortranOrder?: boolean;
  /** Write a version 2.0 header instead of 1.0. */
  v2?: boolean;
}

function headerBody(spec: NpySpec): string {
  const shape =
    spec.shape.length === 1 ? `(${spec.shape[0]},)` : `(${spec.shape.join(", ")})`;
  return (
    `{'descr': '${spec.descr}', 'fortran_order': ${spec.fortranOrder ? "True" : "False"}, ` +
    `'shape': ${shape}, }`
  );
}

function encodeValues(descr: string, values: number[]): Buffer {
  const m = descr.match(/^([<>|=]?)([a-zA-Z])(\d+)$/);
  if (!m) throw new Error(`test helper: bad descr ${descr}`);
  const [, , kind, sizeStr] = m;
  const itemSize = Number(sizeStr);
  const buf = Buffer.alloc(values.length * itemSize);
  values.forEach((v, i) => {
    const at = i * itemSize;
    switch (kind + itemSize) {
      case "f8":
        buf.writeDoubleLE(v, at);
        break;
      case "f4":
        buf.writeFloatLE(v, at);
        break;
      case "i4":
        buf.writeInt32LE(v, at);
        break;
      case "i8":
        buf.writeBigInt64LE(BigInt(v), at);
        break;
      case "u4":
        buf.writeUInt32LE(v, at);
        break;
      case "u8":
        buf.writeBigUInt64LE(BigInt(v), at);
        break;
      default:
        throw new Error(`test helper: dtype ${descr} not implemented`);
    }
  });
  return buf;
}

export function makeNpy(spec: NpySpec): Buffer {
  const magic = Buffer.from("\x93NUMPY", "latin1");
  let body = headerBody(spec);
  const preludeLen = spec.v2 ? 12 : 10;
  const pad = 64 - ((preludeLen + body.length + 1) % 64);
  body = body + " ".repeat(pad) + "\n";
  const prelude = Buffer.alloc(preludeLen);
  magic.copy(prelude);
  if (spec.v2) {
    prelude[6] = 2;
    prelude[7] = 0;
    prelude.writeUInt32LE(body.length, 8);
  } else {
    prelude[6] = 1;
    prelude[7] = 0;
    prelude.writeUInt16LE(body.length, 8);
  }
  return Buffer.concat([prelude, Buffer.from(body, "latin1"), encodeValues(spec.descr, spec.values)]);
}

export function makeStringNpy(shape: number[], itemSize: number, values: string[]): Buffer {
  const magic = Buffer.from("\x93NUMPY", "latin1");
  const shapeText = shape.length === 0 ? "()" : shape.length === 1 ? `(${shape[0]},)` : `(${shape.join(", ")})`;
  let body = `{'descr': '|S${itemSize}', 'fortran_order': False, 'shape': ${shapeText}, }`;
  const pad = 64 - ((10 + body.length + 1) % 64);
  body = body + " ".repeat(pad) + "\n";
  const prelude = Buffer.alloc(10);
  magic.copy(prelude);
  prelude[6] = 1;
  prelude.writeUInt16LE(body.length, 8);
  const data = Buffer.alloc(Math.max(values.length, 1) * itemSize);
  values.forEach((s, i) => data.write(s, i * itemSize, "latin1"));
  return Buffer.concat([prelude, Buffer.from(body, "latin1"), data]);
}

export async function makeNpz(members: Record<string, Buffer>): Promise<Buffer> {
  const zip = new JSZip();
  for (const [key, buf] of Object.entries(members)) zip.file(`${key}.npy`, buf);
  return zip.generateAsync({ type: "nodebuffer", compression: "DEFLATE" });
}

/** Synthetic checkpoint in the upstream layout: K=30 vertices, J=4 joints, S=12 shape columns. */
export const SYN = { K: 30, J: 4, S: 12, F: 2 };

export function syntheticTemplate(): number[] {
  return Array.from({ length: SYN.K * 3 }, (_, i) => ((i * 13) % 97) / 64);
}

export function syntheticShapedirs(): number[] {
  return Array.from({ length: SYN.K * 3 * SYN.S }, (_, i) => ((i * 7) % 89) / 128);
}

export function syntheticWeights(): number[] {
  const out = new Array<number>(SYN.K * SYN.J).fill(0);
  for (let v = 0; v < SYN.K; v++) {
    out[v * SYN.J + (v % SYN.J)] = 0.75;
    out[v * SYN.J + ((v + 1) % SYN.J)] = 0.25;
  }
  return out;
}

export function syntheticRegressor(): number[] {
  const out = new Array<number>(SYN.J * SYN.K).fill(0);
  for (let q = 0; q < SYN.J; q++) {
    // Four exactly-representable weights summing to exactly 1.
    const picks = [q * 7, q * 7 + 1, q * 7 + 2, q * 7 + 3];
    const vals = [0.5, 0.25, 0.125, 0.125];
    picks.forEach((v, idx) => (out[q * SYN.K + v] = vals[idx]));
  }
  return out;
}

export function syntheticKintree(): number[] {
  // Row 0: parents with the upstream uint32 root marker; row 1: joint ids.
  return [4294967295, 0, 1, 2, 0, 1, 2, 3];
}

export function syntheticFaces(): number[] {
  return [0, 1, 2, 3, 4, 5];
}

/** Full synthetic archive, with one irrelevant extra member. */
export async function syntheticArchive(
  overrides: Record<string, Buffer | null> = {}
): Promise<Buffer> {
  const members: Record<string, Buffer> = {
    v_template: makeNpy({ descr: "<f8", shape: [SYN.K, 3], values: syntheticTemplate() }),
    shapedirs: makeNpy({ descr: "<f8", shape: [SYN.K, 3, SYN.S], values: syntheticShapedirs() }),
    weights: makeNpy({ descr: "<f8", shape: [SYN.K, SYN.J], values: syntheticWeights() }),
    J_regressor: makeNpy({ descr: "<f8", shape: [SYN.J, SYN.K], values: syntheticRegressor() }),
    kintree_table: makeNpy({ descr: "<u4", shape: [2, SYN.J], values: syntheticKintree() }),
    f: makeNpy({ descr: "<i4", shape: [SYN.F, 3], values: syntheticFaces() }),
    posedirs: makeNpy({ descr: "<f8", shape: [2, 2], values: [0, 0, 0, 0] }),
  };
  for (const [key, buf] of Object.entries(overrides)) {
    if (buf === null) delete members[key];
    else members[key] = buf;
  }
  return makeNpz(members);
}

/** Reader for ``.npz`` archives (a zip of ``<key>.npy`` members). */

import JSZip from "jszip";

import { UnsupportedLayoutError } from "./errors.js";
import { parseNpy, parseNpyStrings, type NpyArray, type NpyStrings } from "./npy.js";

export class NpzArchive {
  private constructor(
    private readonly entries: Map<string, Buffer>,
    readonly sourceName: string
  ) {}

  static async open(buf: Buffer, sourceName = "npz"): Promise<NpzArchive> {
    let zip: JSZip;
    try {
      zip = await JSZip.loadAsync(buf);
    } catch (err) {
      throw new UnsupportedLayoutError(
        sourceName,
        `not a readable zip archive (${err instanceof Error ? err.message : String(err)})`
      );
    }
    const entries = new Map<string, Buffer>();
    for (const file of Object.values(zip.files)) {
      if (file.dir || !file.name.endsWith(".npy")) continue;
      const key = file.name.slice(0, -".npy".length);
      entries.set(key, Buffer.from(await file.async("arraybuffer")));
    }
    if (entries.size === 0) {
      throw new UnsupportedLayoutError(sourceName, "archive holds no .npy members");
    }
    return new NpzArchive(entries, sourceName);
  }

  keys(): string[] {
    return [...this.entries.keys()].sort();
  }

  has(key: string): boolean {
    return this.entries.has(key);
  }

  raw(key: string): Buffer | undefined {
    return this.entries.get(key);
  }

  array(key: string): NpyArray | undefined {
    const buf = this.entries.get(key);
    return buf === undefined ? undefined : parseNpy(buf, `${this.sourceName}:${key}`);
  }

  strings(key: string): NpyStrings | undefined {
    const buf = this.entries.get(key);
    return buf === undefined ? undefined : parseNpyStrings(buf, `${this.sourceName}:${key}`);
  }
}

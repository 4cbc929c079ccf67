#!/usr/bin/env node
/** CLI: convert an upstream body-model checkpoint archive to a neutral asset.
 *
 *     smpl2neutral MODEL_PATH OUT_DIR [--family auto|smpl|smplx]
 */

import { parseArgs } from "node:util";

import { convertModel, type FamilyChoice } from "./convert.js";
import { stableJson } from "./neutral.js";

const USAGE = "usage: smpl2neutral MODEL_PATH OUT_DIR [--family auto|smpl|smplx]";
const FAMILIES = new Set(["auto", "smpl", "smplx"]);

async function main(): Promise<number> {
  let positionals: string[];
  let family: string;
  try {
    const parsed = parseArgs({
      allowPositionals: true,
      options: { family: { type: "string", default: "auto" } },
    });
    positionals = parsed.positionals;
    family = parsed.values.family ?? "auto";
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : String(err)}`);
    console.error(USAGE);
    return 2;
  }
  if (positionals.length !== 2 || !FAMILIES.has(family)) {
    console.error(USAGE);
    return 2;
  }
  const [srcPath, outDir] = positionals;
  try {
    const manifest = await convertModel(srcPath, outDir, family as FamilyChoice);
    process.stdout.write(stableJson(manifest));
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : String(err)}`);
    return 1;
  }
}

process.exitCode = await main();

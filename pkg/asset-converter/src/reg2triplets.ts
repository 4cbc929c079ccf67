#!/usr/bin/env node
/** CLI: convert a sparse point-regressor asset to triplet text.
 *
 *     reg2triplets SRC OUT
 */

import { parseArgs } from "node:util";

import { convertRegressor } from "./triplets.js";

const USAGE = "usage: reg2triplets SRC OUT";

async function main(): Promise<number> {
  let positionals: string[];
  try {
    positionals = parseArgs({ allowPositionals: true, options: {} }).positionals;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : String(err)}`);
    console.error(USAGE);
    return 2;
  }
  if (positionals.length !== 2) {
    console.error(USAGE);
    return 2;
  }
  const [srcPath, dstPath] = positionals;
  try {
    const p = await convertRegressor(srcPath, dstPath);
    console.log(`wrote ${p} sample-point rows from ${srcPath} to ${dstPath}`);
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : String(err)}`);
    return 1;
  }
}

process.exitCode = await main();

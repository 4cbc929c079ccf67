/** One-shot conversion of an upstream checkpoint archive to a neutral asset. */

import { readFileSync } from "node:fs";

import { detectFamily, extractModel, type Family } from "./families.js";
import { NpzArchive } from "./npz.js";
import { writeNeutral } from "./neutral.js";
import { UnsupportedLayoutError } from "./errors.js";

export interface ConversionManifest {
  source: string;
  family: Family;
  shapes: Record<string, number[]>;
  payload_sha256: string;
}

export type FamilyChoice = Family | "auto";

const FAMILY_JOINTS: Record<Family, number> = { smpl: 24, smplx: 55 };

export async function convertModel(
  srcPath: string,
  outDir: string,
  familyChoice: FamilyChoice = "auto"
): Promise<ConversionManifest> {
  const archive = await NpzArchive.open(readFileSync(srcPath), srcPath);
  const family = familyChoice === "auto" ? detectFamily(archive) : familyChoice;
  const model = extractModel(archive);
  if (familyChoice !== "auto" && model.numJoints !== FAMILY_JOINTS[family]) {
    throw new UnsupportedLayoutError(
      "kintree_table",
      `${family} expects ${FAMILY_JOINTS[family]} joints, archive has ${model.numJoints}`
    );
  }
  const written = writeNeutral(model, outDir);
  return {
    source: srcPath,
    family,
    shapes: written.shapes,
    payload_sha256: written.checksum,
  };
}

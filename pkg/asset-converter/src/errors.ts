/** Named failure categories so callers and tests can tell them apart. */

/** A required array is absent from the source archive. */
export class MissingFieldError extends Error {
  readonly field: string;

  constructor(field: string, detail?: string) {
    super(`missing field ${JSON.stringify(field)}${detail ? `: ${detail}` : ""}`);
    this.name = "MissingFieldError";
    this.field = field;
  }
}

/** The source data is present but shaped or encoded in an unsupported way. */
export class UnsupportedLayoutError extends Error {
  readonly field: string;

  constructor(field: string, detail: string) {
    super(`unsupported layout in ${JSON.stringify(field)}: ${detail}`);
    this.name = "UnsupportedLayoutError";
    this.field = field;
  }
}

/** The extracted arrays violate a structural invariant of the output format. */
export class InvariantError extends Error {
  readonly field: string;

  constructor(field: string, detail: string) {
    super(`invariant violated in ${JSON.stringify(field)}: ${detail}`);
    this.name = "InvariantError";
    this.field = field;
  }
}

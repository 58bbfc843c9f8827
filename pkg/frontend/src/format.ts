/**
 * The CPCL binary feature-file format (shared contract with the Python
 * package): little-endian, magic "CPCL", u8 version = 1, u8 modality code
 * (0 video, 1 face, 2 audio, 3 text), u16 reserved = 0, u32 row count,
 * u32 dim, then n*dim IEEE-754 float32 values row-major.
 */

export const MAGIC = "CPCL";
export const VERSION = 1;
export const HEADER_SIZE = 16;

export type Modality = "video" | "face" | "audio" | "text";

export const MODALITY_CODES: Record<Modality, number> = {
  video: 0,
  face: 1,
  audio: 2,
  text: 3,
};

const CODE_TO_MODALITY: Record<number, Modality> = {
  0: "video",
  1: "face",
  2: "audio",
  3: "text",
};

export class FeatureFormatError extends Error {}
export class BadMagicError extends FeatureFormatError {}
export class UnsupportedVersionError extends FeatureFormatError {}
export class TruncatedPayloadError extends FeatureFormatError {}
export class NonFiniteValueError extends FeatureFormatError {}

export interface FeatureMatrix {
  modality: Modality;
  rows: number;
  dim: number;
  /** row-major, rows * dim entries */
  values: Float32Array;
}

export function encodeFeatureFile(matrix: FeatureMatrix): Buffer {
  const { modality, rows, dim, values } = matrix;
  if (dim < 1) throw new FeatureFormatError("dim must be positive");
  if (rows < 1 && modality !== "face") {
    throw new FeatureFormatError(`${modality} requires at least one row`);
  }
  if (values.length !== rows * dim) {
    throw new FeatureFormatError(
      `payload length ${values.length} != rows*dim ${rows * dim}`,
    );
  }
  for (const v of values) {
    if (!Number.isFinite(v)) throw new NonFiniteValueError("non-finite value");
  }
  const buffer = Buffer.alloc(HEADER_SIZE + 4 * rows * dim);
  buffer.write(MAGIC, 0, "ascii");
  buffer.writeUInt8(VERSION, 4);
  buffer.writeUInt8(MODALITY_CODES[modality], 5);
  buffer.writeUInt16LE(0, 6);
  buffer.writeUInt32LE(rows, 8);
  buffer.writeUInt32LE(dim, 12);
  for (let i = 0; i < values.length; i++) {
    buffer.writeFloatLE(values[i], HEADER_SIZE + 4 * i);
  }
  return buffer;
}

export function decodeFeatureFile(data: Buffer): FeatureMatrix {
  if (data.subarray(0, 4).toString("ascii") !== MAGIC) {
    throw new BadMagicError(`bad magic ${data.subarray(0, 4).toString("hex")}`);
  }
  if (data.length < HEADER_SIZE) {
    throw new TruncatedPayloadError(`header truncated (${data.length} bytes)`);
  }
  const version = data.readUInt8(4);
  if (version !== VERSION) {
    throw new UnsupportedVersionError(`unsupported version ${version}`);
  }
  const code = data.readUInt8(5);
  const modality = CODE_TO_MODALITY[code];
  if (modality === undefined) {
    throw new FeatureFormatError(`unknown modality code ${code}`);
  }
  if (data.readUInt16LE(6) !== 0) {
    throw new FeatureFormatError("reserved field must be zero");
  }
  const rows = data.readUInt32LE(8);
  const dim = data.readUInt32LE(12);
  const expected = HEADER_SIZE + 4 * rows * dim;
  if (data.length !== expected) {
    throw new TruncatedPayloadError(
      `expected ${expected} bytes, found ${data.length}`,
    );
  }
  const values = new Float32Array(rows * dim);
  for (let i = 0; i < values.length; i++) {
    values[i] = data.readFloatLE(HEADER_SIZE + 4 * i);
    if (!Number.isFinite(values[i])) {
      throw new NonFiniteValueError(`non-finite value at index ${i}`);
    }
  }
  return { modality, rows, dim, values };
}

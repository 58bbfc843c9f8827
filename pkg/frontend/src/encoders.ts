/**
 * Pluggable encoder interfaces plus deterministic stub implementations.
 *
 * Real pretrained encoders (a frame vision transformer, a face pipeline, a
 * speech-to-text model plus text encoder) plug in through these interfaces.
 * The stubs hash the input bytes into unit-norm vectors, which keeps every
 * export fully deterministic and lets the pipeline run without any model
 * weights; encoder name/version still land in the sidecar metadata so runs
 * are traceable either way.
 */

import { createHash } from "node:crypto";

export const TARGET_DIM = 768;

export interface EncoderInfo {
  name: string;
  version: string;
  deterministic: boolean;
}

export interface FrameEncoder extends EncoderInfo {
  dim: number;
  encodeFrame(frame: Buffer): Float32Array;
}

export interface FaceDetector extends EncoderInfo {
  /** Face embedding for the frame, or null when no face is detected. */
  detectAndEncode(frame: Buffer): Float32Array | null;
}

export interface Transcriber extends EncoderInfo {
  transcribe(audio: Buffer): string;
}

export interface TextTokenEncoder extends EncoderInfo {
  dim: number;
  tokenize(text: string): string[];
  encodeTokens(tokens: string[]): Float32Array[];
}

/** Expand a byte seed into `dim` floats in [-1, 1], L2-normalized. */
export function hashToVector(seed: Buffer, dim: number, salt: string): Float32Array {
  const out = new Float32Array(dim);
  let counter = 0;
  let offset = 0;
  let block = Buffer.alloc(0);
  for (let i = 0; i < dim; i++) {
    if (offset + 4 > block.length) {
      block = createHash("sha256")
        .update(salt)
        .update(seed)
        .update(String(counter++))
        .digest();
      offset = 0;
    }
    const raw = block.readUInt32LE(offset);
    offset += 4;
    out[i] = (raw / 0xffffffff) * 2 - 1;
  }
  let norm = 0;
  for (const v of out) norm += v * v;
  norm = Math.sqrt(norm);
  if (norm > 0) {
    for (let i = 0; i < dim; i++) out[i] /= norm;
  }
  return out;
}

export class StubFrameEncoder implements FrameEncoder {
  name = "stub-frame-encoder";
  version = "1.0.0";
  deterministic = true;

  constructor(public dim: number = TARGET_DIM) {}

  encodeFrame(frame: Buffer): Float32Array {
    return hashToVector(frame, this.dim, "frame");
  }
}

export class StubFaceDetector implements FaceDetector {
  name = "stub-face-detector";
  version = "1.0.0";
  deterministic = true;

  constructor(
    public dim: number = TARGET_DIM,
    /** Optional explicit detections: frame file name -> has face. */
    public detections?: Map<string, boolean>,
    private currentFrameName?: string,
  ) {}

  forFrame(name: string): StubFaceDetector {
    return new StubFaceDetector(this.dim, this.detections, name);
  }

  detectAndEncode(frame: Buffer): Float32Array | null {
    if (this.detections && this.currentFrameName !== undefined) {
      if (!this.detections.get(this.currentFrameName)) return null;
    } else {
      // content-deterministic rule: detect iff the digest's first byte is even
      const digest = createHash("sha256").update("face?").update(frame).digest();
      if (digest[0] % 2 === 1) return null;
    }
    return hashToVector(frame, this.dim, "face");
  }
}

export class StubTranscriber implements Transcriber {
  name = "stub-transcriber";
  version = "1.0.0";
  deterministic = true;

  transcribe(audio: Buffer): string {
    // stands in for speech recognition: audio fixtures carry their transcript
    // as UTF-8 text so exports stay reproducible
    return audio.toString("utf-8").trim();
  }
}

export class StubTextEncoder implements TextTokenEncoder {
  name = "stub-text-encoder";
  version = "1.0.0";
  deterministic = true;

  constructor(public dim: number = TARGET_DIM) {}

  tokenize(text: string): string[] {
    const tokens: string[] = [];
    let run = "";
    for (const ch of text) {
      if (/[A-Za-z0-9]/.test(ch)) {
        run += ch;
        continue;
      }
      if (run) {
        tokens.push(run);
        run = "";
      }
      if (!/\s/.test(ch)) tokens.push(ch);
    }
    if (run) tokens.push(run);
    return tokens;
  }

  encodeTokens(tokens: string[]): Float32Array[] {
    return tokens.map((t, i) =>
      hashToVector(Buffer.from(`${i}:${t}`, "utf-8"), this.dim, "text"),
    );
  }
}

/**
 * Export jobs: sample frames from a clip (a directory of frame images in
 * order), run the configured encoders, and write feature files in the
 * CPCL binary format together with a sidecar metadata JSON.
 */

import { readFileSync, readdirSync, writeFileSync, existsSync, statSync } from "node:fs";
import { join, basename } from "node:path";

import {
  FaceDetector,
  FrameEncoder,
  StubFaceDetector,
  StubFrameEncoder,
  StubTextEncoder,
  StubTranscriber,
  TARGET_DIM,
  TextTokenEncoder,
  Transcriber,
} from "./encoders.js";
import { FeatureMatrix, encodeFeatureFile } from "./format.js";

export class ExportError extends Error {}

export interface ExportJob {
  /** directory of frame images, lexicographic order = time order */
  framesDir?: string;
  /** audio file for the transcript pipeline */
  audioPath?: string;
  outDir: string;
  /** frames per second of the source clip */
  sourceFps: number;
  /** sampling rate for export (default 1 fps) */
  sampleFps: number;
  targetDim: number;
}

export function makeJob(partial: Partial<ExportJob> & { outDir: string }): ExportJob {
  return {
    sourceFps: 25,
    sampleFps: 1,
    targetDim: TARGET_DIM,
    ...partial,
  };
}

export interface ExportResult {
  featurePath: string;
  sidecarPath: string;
  rows: number;
  dim: number;
}

function listFrames(framesDir: string): string[] {
  if (!existsSync(framesDir) || !statSync(framesDir).isDirectory()) {
    throw new ExportError(`unreadable frame directory: ${framesDir}`);
  }
  const frames = readdirSync(framesDir)
    .filter((f) => !f.startsWith(".") && !f.endsWith(".json"))
    .sort();
  if (frames.length === 0) {
    throw new ExportError(`no frames in ${framesDir}`);
  }
  return frames;
}

/** Indices of the frames sampled at sampleFps from a sourceFps clip. */
export function sampledFrameIndices(
  frameCount: number,
  sourceFps: number,
  sampleFps: number,
): number[] {
  if (frameCount < 1) throw new ExportError("empty clip");
  if (sourceFps <= 0 || sampleFps <= 0) {
    throw new ExportError("frame rates must be positive");
  }
  const duration = frameCount / sourceFps;
  const n = Math.max(1, Math.floor(duration * sampleFps));
  const indices: number[] = [];
  for (let k = 0; k < n; k++) {
    indices.push(Math.min(Math.floor((k * sourceFps) / sampleFps), frameCount - 1));
  }
  return indices;
}

function writeSidecar(
  path: string,
  encoder: { name: string; version: string; deterministic: boolean },
  job: ExportJob,
  extra: Record<string, unknown>,
): void {
  const payload = {
    encoder: { name: encoder.name, version: encoder.version },
    deterministic: encoder.deterministic,
    samplingRate: job.sampleFps,
    sourceFps: job.sourceFps,
    ...extra,
  };
  writeFileSync(path, JSON.stringify(payload, null, 2) + "\n");
}

function writeMatrix(path: string, matrix: FeatureMatrix): void {
  writeFileSync(path, encodeFeatureFile(matrix));
}

export function exportVideoFeatures(
  job: ExportJob,
  encoder: FrameEncoder = new StubFrameEncoder(),
): ExportResult {
  if (!job.framesDir) throw new ExportError("job has no frame directory");
  const frames = listFrames(job.framesDir);
  const indices = sampledFrameIndices(frames.length, job.sourceFps, job.sampleFps);
  const values = new Float32Array(indices.length * encoder.dim);
  indices.forEach((frameIdx, row) => {
    const data = readFileSync(join(job.framesDir!, frames[frameIdx]));
    values.set(encoder.encodeFrame(data), row * encoder.dim);
  });
  const featurePath = join(job.outDir, "video.feat");
  writeMatrix(featurePath, {
    modality: "video",
    rows: indices.length,
    dim: encoder.dim,
    values,
  });
  const sidecarPath = join(job.outDir, "video.meta.json");
  writeSidecar(sidecarPath, encoder, job, {
    rows: indices.length,
    dim: encoder.dim,
    sampledFrames: indices.map((i) => frames[i]),
  });
  return { featurePath, sidecarPath, rows: indices.length, dim: encoder.dim };
}

export function exportFaceFeatures(
  job: ExportJob,
  detector: StubFaceDetector | FaceDetector = new StubFaceDetector(),
): ExportResult {
  if (!job.framesDir) throw new ExportError("job has no frame directory");
  const frames = listFrames(job.framesDir);
  const indices = sampledFrameIndices(frames.length, job.sourceFps, job.sampleFps);
  const dim = job.targetDim;
  const values = new Float32Array(indices.length * dim); // zero-filled
  let detected = 0;
  indices.forEach((frameIdx, row) => {
    const name = frames[frameIdx];
    const data = readFileSync(join(job.framesDir!, name));
    const perFrame =
      detector instanceof StubFaceDetector ? detector.forFrame(name) : detector;
    const face = perFrame.detectAndEncode(data);
    if (face !== null) {
      if (face.length !== dim) {
        throw new ExportError(`face encoder dim ${face.length} != ${dim}`);
      }
      values.set(face, row * dim);
      detected += 1;
    }
    // undetected frames keep their all-zero row
  });
  const featurePath = join(job.outDir, "face.feat");
  writeMatrix(featurePath, { modality: "face", rows: indices.length, dim, values });
  const sidecarPath = join(job.outDir, "face.meta.json");
  writeSidecar(sidecarPath, detector, job, {
    rows: indices.length,
    dim,
    framesWithFaces: detected,
  });
  return { featurePath, sidecarPath, rows: indices.length, dim };
}

export function exportTextFeatures(
  job: ExportJob,
  transcriber: Transcriber = new StubTranscriber(),
  encoder: TextTokenEncoder = new StubTextEncoder(),
): ExportResult & { transcriptPath: string } {
  if (!job.audioPath) throw new ExportError("job has no audio file");
  if (!existsSync(job.audioPath)) {
    throw new ExportError(`unreadable audio: ${job.audioPath}`);
  }
  const audio = readFileSync(job.audioPath);
  if (audio.length === 0) {
    throw new ExportError("empty audio: refusing to write an empty feature file");
  }
  const transcript = transcriber.transcribe(audio);
  if (!transcript) {
    throw new ExportError("empty transcript: refusing to write an empty feature file");
  }
  const tokens = encoder.tokenize(transcript);
  if (tokens.length === 0) {
    throw new ExportError("transcript produced no tokens");
  }
  const rows = encoder.encodeTokens(tokens);
  const values = new Float32Array(rows.length * encoder.dim);
  rows.forEach((vec, i) => values.set(vec, i * encoder.dim));

  const featurePath = join(job.outDir, "text.feat");
  writeMatrix(featurePath, {
    modality: "text",
    rows: rows.length,
    dim: encoder.dim,
    values,
  });
  const transcriptPath = join(job.outDir, "transcript.txt");
  writeFileSync(transcriptPath, transcript + "\n");
  const sidecarPath = join(job.outDir, "text.meta.json");
  writeSidecar(sidecarPath, encoder, job, {
    rows: rows.length,
    dim: encoder.dim,
    transcriber: { name: transcriber.name, version: transcriber.version },
    tokens: tokens.length,
    audio: basename(job.audioPath),
  });
  return { featurePath, sidecarPath, transcriptPath, rows: rows.length, dim: encoder.dim };
}

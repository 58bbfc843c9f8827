#!/usr/bin/env node
/**
 * cpcl-export <video|faces|text> --frames DIR | --audio FILE --out DIR
 *             [--source-fps N] [--sample-fps N]
 */

import { mkdirSync } from "node:fs";
import { parseArgs } from "node:util";

import { exportFaceFeatures, exportTextFeatures, exportVideoFeatures, makeJob } from "./export.js";

function main(argv: string[]): number {
  const [command, ...rest] = argv;
  if (!command || !["video", "faces", "text"].includes(command)) {
    console.error("usage: cpcl-export <video|faces|text> [options]");
    return 2;
  }
  const { values } = parseArgs({
    args: rest,
    options: {
      frames: { type: "string" },
      audio: { type: "string" },
      out: { type: "string" },
      "source-fps": { type: "string", default: "25" },
      "sample-fps": { type: "string", default: "1" },
    },
  });
  if (!values.out) {
    console.error("error: --out is required");
    return 2;
  }
  mkdirSync(values.out, { recursive: true });
  const job = makeJob({
    framesDir: values.frames,
    audioPath: values.audio,
    outDir: values.out,
    sourceFps: Number(values["source-fps"]),
    sampleFps: Number(values["sample-fps"]),
  });
  try {
    const result =
      command === "video"
        ? exportVideoFeatures(job)
        : command === "faces"
          ? exportFaceFeatures(job)
          : exportTextFeatures(job);
    console.log(JSON.stringify(result));
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

process.exit(main(process.argv.slice(2)));

export * from "./format.js";
export * from "./encoders.js";
export * from "./export.js";

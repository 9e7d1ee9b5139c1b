export * from "./api.js";
export * from "./colormap.js";
export * from "./viewer.js";

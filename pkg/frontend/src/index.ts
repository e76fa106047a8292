export * from "./protocol.js";
export * from "./badge.js";
export * from "./review.js";
export * from "./client.js";
export * from "./dom.js";
export * from "./app.js";

// jsdom has no raster canvas; make getContext return null quietly instead
// of logging a virtual-console error. Rendering code treats null as "skip
// drawing" and keeps its geometry accessors testable.
Object.defineProperty(HTMLCanvasElement.prototype, "getContext", {
  value: () => null,
});

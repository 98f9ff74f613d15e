// jsdom has no 2D canvas backend; return null instead of logging
// "Not implemented" on every paint.
if (typeof HTMLCanvasElement !== "undefined") {
  HTMLCanvasElement.prototype.getContext = (() => null) as never;
}

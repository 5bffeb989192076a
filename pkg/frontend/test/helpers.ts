/** Shared jsdom scaffolding for canvas interaction tests. */

import { StrokeCanvas } from "../src/canvas";
import { Drawing } from "../src/model";

export const SIZE = 480;

export function makeCanvas(): HTMLCanvasElement {
  const el = document.createElement("canvas");
  el.width = SIZE;
  el.height = SIZE;
  document.body.appendChild(el);
  return el;
}

export function makeStrokeCanvas(): { el: HTMLCanvasElement; drawing: Drawing; canvas: StrokeCanvas } {
  const el = makeCanvas();
  const drawing = new Drawing();
  const canvas = new StrokeCanvas(el, drawing);
  return { el, drawing, canvas };
}

function mouse(type: string, px: number, py: number): MouseEvent {
  // jsdom's getBoundingClientRect is all zeros, so client coords are
  // canvas-relative pixels.
  return new MouseEvent(type, { clientX: px, clientY: py, bubbles: true });
}

export function click(el: HTMLCanvasElement, px: number, py: number): void {
  el.dispatchEvent(mouse("pointerdown", px, py));
  el.dispatchEvent(mouse("pointerup", px, py));
}

export function drag(
  el: HTMLCanvasElement,
  from: [number, number],
  to: [number, number],
): void {
  el.dispatchEvent(mouse("pointerdown", from[0], from[1]));
  el.dispatchEvent(mouse("pointermove", (from[0] + to[0]) / 2, (from[1] + to[1]) / 2));
  el.dispatchEvent(mouse("pointermove", to[0], to[1]));
  el.dispatchEvent(mouse("pointerup", to[0], to[1]));
}

export function pressKey(doc: Document, key: string): void {
  doc.dispatchEvent(new KeyboardEvent("keydown", { key, bubbles: true }));
}

/** Pixel position of a normalized coordinate on a SIZE x SIZE canvas. */
export function px(x: number, y: number): [number, number] {
  return [((x + 1) / 2) * SIZE, ((1 - y) / 2) * SIZE];
}

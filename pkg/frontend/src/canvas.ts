/** Pointer and keyboard interaction for the stroke canvas.
 *
 * Click empty space to place a joint, click one joint then another to
 * connect them, click the selected joint (or press Escape) to deselect,
 * drag a joint to move it, Delete/Backspace to remove the selected joint.
 * Canvas pixels map to the [-1,1] square with y up.
 */

import { Drawing } from "./model";

const HIT_RADIUS_PX = 10;
const DRAG_THRESHOLD_PX = 4;

export interface CanvasCallbacks {
  onChange?: () => void;
}

export class StrokeCanvas {
  readonly drawing: Drawing;
  selected: number | null = null;
  private invalid = new Set<number>();
  private dragIndex: number | null = null;
  private dragMoved = false;
  private justAdded = false;
  private downAt: { x: number; y: number } | null = null;

  constructor(
    private readonly el: HTMLCanvasElement,
    drawing: Drawing,
    private readonly callbacks: CanvasCallbacks = {},
  ) {
    this.drawing = drawing;
    el.addEventListener("pointerdown", (ev) => this.onDown(ev as MouseEvent));
    el.addEventListener("pointermove", (ev) => this.onMove(ev as MouseEvent));
    el.addEventListener("pointerup", (ev) => this.onUp(ev as MouseEvent));
    el.ownerDocument.addEventListener("keydown", (ev) => this.onKey(ev));
    this.render();
  }

  /** Canvas pixel coordinates of a joint (for rendering and hit tests). */
  toPixels(x: number, y: number): { px: number; py: number } {
    const { w, h } = this.size();
    return { px: ((x + 1) / 2) * w, py: ((1 - y) / 2) * h };
  }

  toNormalized(px: number, py: number): { x: number; y: number } {
    const { w, h } = this.size();
    return { x: (2 * px) / w - 1, y: 1 - (2 * py) / h };
  }

  markInvalid(indices: Iterable<number>): void {
    this.invalid = new Set(indices);
    this.render();
  }

  private size(): { w: number; h: number } {
    const rect = this.el.getBoundingClientRect();
    return { w: rect.width || this.el.width, h: rect.height || this.el.height };
  }

  private eventPixels(ev: MouseEvent): { px: number; py: number } {
    const rect = this.el.getBoundingClientRect();
    return { px: ev.clientX - rect.left, py: ev.clientY - rect.top };
  }

  private hit(px: number, py: number): number | null {
    let best: number | null = null;
    let bestDist = HIT_RADIUS_PX;
    this.drawing.joints.forEach((j, i) => {
      const p = this.toPixels(j.x, j.y);
      const d = Math.hypot(p.px - px, p.py - py);
      if (d <= bestDist) {
        best = i;
        bestDist = d;
      }
    });
    return best;
  }

  private onDown(ev: MouseEvent): void {
    const { px, py } = this.eventPixels(ev);
    this.downAt = { x: px, y: py };
    this.dragMoved = false;
    this.justAdded = false;
    const hit = this.hit(px, py);
    if (hit === null) {
      const { x, y } = this.toNormalized(px, py);
      const added = this.drawing.addJoint(x, y);
      this.selected = added;
      this.dragIndex = added;
      this.justAdded = added !== null;
      this.changed();
      return;
    }
    this.dragIndex = hit;
  }

  private onMove(ev: MouseEvent): void {
    if (this.dragIndex === null || !this.downAt) return;
    const { px, py } = this.eventPixels(ev);
    if (!this.dragMoved &&
        Math.hypot(px - this.downAt.x, py - this.downAt.y) < DRAG_THRESHOLD_PX) {
      return;
    }
    this.dragMoved = true;
    const { x, y } = this.toNormalized(px, py);
    this.drawing.moveJoint(this.dragIndex, x, y);
    this.changed();
  }

  private onUp(ev: MouseEvent): void {
    const { px, py } = this.eventPixels(ev);
    const hit = this.hit(px, py);
    if (this.dragIndex !== null && this.dragMoved) {
      this.selected = this.dragIndex;
    } else if (hit !== null && !this.justAdded) {
      if (this.selected === null) {
        this.selected = hit;
      } else if (this.selected === hit) {
        this.selected = null; // clicking the selected joint deselects it
      } else {
        this.drawing.connect(this.selected, hit);
        this.selected = hit;
      }
    }
    this.dragIndex = null;
    this.downAt = null;
    this.dragMoved = false;
    this.justAdded = false;
    this.changed();
  }

  private onKey(ev: KeyboardEvent): void {
    if (ev.key === "Escape") {
      this.selected = null;
      this.render();
      return;
    }
    if (ev.key !== "Delete" && ev.key !== "Backspace") return;
    if (this.selected === null) return;
    const victim = this.selected;
    this.selected = null;
    this.invalid.delete(victim);
    this.drawing.deleteJoint(victim);
    this.invalid = new Set(
      [...this.invalid].map((i) => (i > victim ? i - 1 : i)),
    );
    this.changed();
  }

  private changed(): void {
    this.render();
    this.callbacks.onChange?.();
  }

  render(): void {
    const ctx = this.el.getContext("2d");
    if (!ctx) return; // headless test environments have no raster context
    const { w, h } = this.size();
    ctx.clearRect(0, 0, w, h);
    ctx.strokeStyle = "#556";
    ctx.lineWidth = 2;
    for (const [a, b] of this.drawing.edges) {
      const pa = this.toPixels(this.drawing.joints[a]!.x, this.drawing.joints[a]!.y);
      const pb = this.toPixels(this.drawing.joints[b]!.x, this.drawing.joints[b]!.y);
      ctx.beginPath();
      ctx.moveTo(pa.px, pa.py);
      ctx.lineTo(pb.px, pb.py);
      ctx.stroke();
    }
    this.drawing.joints.forEach((j, i) => {
      const { px, py } = this.toPixels(j.x, j.y);
      ctx.beginPath();
      ctx.arc(px, py, 6, 0, 2 * Math.PI);
      ctx.fillStyle = this.invalid.has(i)
        ? "#d33"
        : i === this.selected
          ? "#fa0"
          : "#2a6";
      ctx.fill();
    });
  }
}

/** Orbitable 3D skeleton view. Joints are colored by the service's depth
 * list on a near-to-far ramp; dragging orbits the camera. Orthographic:
 * the skeleton is recentered and uniformly scaled to fit the canvas. */

import type { SkeletonJson } from "./types";

const NEAR = { r: 0xff, g: 0x6b, b: 0x35 };
const FAR = { r: 0x2e, g: 0x6b, b: 0xff };

export function depthColor(t: number): string {
  const k = Math.max(0, Math.min(1, t));
  const r = Math.round(NEAR.r + (FAR.r - NEAR.r) * k);
  const g = Math.round(NEAR.g + (FAR.g - NEAR.g) * k);
  const b = Math.round(NEAR.b + (FAR.b - NEAR.b) * k);
  return `rgb(${r},${g},${b})`;
}

export class SkeletonViewer {
  private skeleton: SkeletonJson | null = null;
  private depth: number[] = [];
  private yaw = 0.5;
  private pitch = 0.3;
  private dragging = false;
  private last = { x: 0, y: 0 };

  constructor(private readonly el: HTMLCanvasElement) {
    el.addEventListener("pointerdown", (ev) => {
      this.dragging = true;
      this.last = { x: (ev as MouseEvent).clientX, y: (ev as MouseEvent).clientY };
    });
    el.addEventListener("pointermove", (ev) => {
      if (!this.dragging) return;
      const e = ev as MouseEvent;
      this.yaw += (e.clientX - this.last.x) * 0.01;
      this.pitch = Math.max(
        -1.4,
        Math.min(1.4, this.pitch + (e.clientY - this.last.y) * 0.01),
      );
      this.last = { x: e.clientX, y: e.clientY };
      this.render();
    });
    const stop = () => {
      this.dragging = false;
    };
    el.addEventListener("pointerup", stop);
    el.addEventListener("pointerleave", stop);
  }

  show(skeleton: SkeletonJson, depth: number[]): void {
    this.skeleton = skeleton;
    this.depth = depth;
    this.render();
  }

  get orientation(): { yaw: number; pitch: number } {
    return { yaw: this.yaw, pitch: this.pitch };
  }

  /** Edges of the skeleton currently shown, as sorted pairs. */
  renderedEdges(): [number, number][] {
    if (!this.skeleton) return [];
    return this.skeleton.edges
      .map(([a, b]) => (a < b ? [a, b] : [b, a]) as [number, number])
      .sort((p, q) => p[0] - q[0] || p[1] - q[1]);
  }

  /** Projected joint positions in canvas pixels, in joint order. */
  projected(): { px: number; py: number; color: string }[] {
    if (!this.skeleton) return [];
    const joints = this.skeleton.joints;
    const cy = Math.cos(this.yaw);
    const sy = Math.sin(this.yaw);
    const cp = Math.cos(this.pitch);
    const sp = Math.sin(this.pitch);
    const rotated = joints.map(([x, y, z]) => {
      const rx = cy * x + sy * z;
      const rz = -sy * x + cy * z;
      const ry = cp * y - sp * rz;
      return { x: rx, y: ry };
    });
    const xs = rotated.map((p) => p.x);
    const ys = rotated.map((p) => p.y);
    const cxm = (Math.min(...xs) + Math.max(...xs)) / 2;
    const cym = (Math.min(...ys) + Math.max(...ys)) / 2;
    const span = Math.max(
      Math.max(...xs) - Math.min(...xs),
      Math.max(...ys) - Math.min(...ys),
      1e-9,
    );
    const rect = this.el.getBoundingClientRect();
    const w = rect.width || this.el.width;
    const h = rect.height || this.el.height;
    const scale = (0.8 * Math.min(w, h)) / span;

    const dmin = this.depth.length ? Math.min(...this.depth) : 0;
    const dmax = this.depth.length ? Math.max(...this.depth) : 1;
    const dspan = dmax - dmin || 1;
    return rotated.map((p, i) => ({
      px: w / 2 + (p.x - cxm) * scale,
      py: h / 2 - (p.y - cym) * scale,
      color: depthColor(((this.depth[i] ?? dmin) - dmin) / dspan),
    }));
  }

  render(): void {
    const ctx = this.el.getContext("2d");
    if (!ctx) return;
    const rect = this.el.getBoundingClientRect();
    const w = rect.width || this.el.width;
    const h = rect.height || this.el.height;
    ctx.clearRect(0, 0, w, h);
    if (!this.skeleton) return;
    const pts = this.projected();
    ctx.strokeStyle = "#889";
    ctx.lineWidth = 2;
    for (const [a, b] of this.skeleton.edges) {
      const pa = pts[a];
      const pb = pts[b];
      if (!pa || !pb) continue;
      ctx.beginPath();
      ctx.moveTo(pa.px, pa.py);
      ctx.lineTo(pb.px, pb.py);
      ctx.stroke();
    }
    for (const p of pts) {
      ctx.beginPath();
      ctx.arc(p.px, p.py, 5, 0, 2 * Math.PI);
      ctx.fillStyle = p.color;
      ctx.fill();
    }
  }
}

/** Drawing state: joints in the [-1,1] square (y up) joined by bones.
 *
 * Pure data operations only; canvas.ts owns pixels and events. The delete
 * rule mirrors the service's joint-drop semantics: removing a degree-2
 * joint reconnects its two neighbors, any other degree just drops the
 * incident bones, and indices above the victim shift down by one.
 */

import type { StrokeJson, ViewTag } from "./types";

export const MAX_JOINTS = 30;

export interface Joint {
  x: number;
  y: number;
}

const clamp = (v: number) => Math.max(-1, Math.min(1, v));

const key = (a: number, b: number) => (a < b ? `${a}-${b}` : `${b}-${a}`);

export class Drawing {
  joints: Joint[] = [];
  private edgeSet = new Map<string, [number, number]>();

  get edges(): [number, number][] {
    return [...this.edgeSet.values()].sort(
      (p, q) => p[0] - q[0] || p[1] - q[1],
    );
  }

  /** Add a joint, clamped to the square. Returns its index, or null when
   * the drawing is full. */
  addJoint(x: number, y: number): number | null {
    if (this.joints.length >= MAX_JOINTS) return null;
    this.joints.push({ x: clamp(x), y: clamp(y) });
    return this.joints.length - 1;
  }

  moveJoint(i: number, x: number, y: number): void {
    const j = this.joints[i];
    if (!j) return;
    j.x = clamp(x);
    j.y = clamp(y);
  }

  /** Connect two joints. Self-loops and duplicates (either order) are
   * ignored. Returns whether an edge was added. */
  connect(a: number, b: number): boolean {
    if (a === b) return false;
    if (!this.joints[a] || !this.joints[b]) return false;
    const k = key(a, b);
    if (this.edgeSet.has(k)) return false;
    this.edgeSet.set(k, a < b ? [a, b] : [b, a]);
    return true;
  }

  hasEdge(a: number, b: number): boolean {
    return this.edgeSet.has(key(a, b));
  }

  neighbors(i: number): number[] {
    const out = new Set<number>();
    for (const [a, b] of this.edgeSet.values()) {
      if (a === i) out.add(b);
      if (b === i) out.add(a);
    }
    return [...out].sort((p, q) => p - q);
  }

  /** Remove a joint, contracting through it when it has exactly two
   * neighbors, then compact indices above it. */
  deleteJoint(victim: number): void {
    if (!this.joints[victim]) return;
    const nbrs = this.neighbors(victim);
    const survivors: [number, number][] = [];
    for (const [a, b] of this.edgeSet.values()) {
      if (a !== victim && b !== victim) survivors.push([a, b]);
    }
    if (nbrs.length === 2) {
      const a = nbrs[0]!;
      const b = nbrs[1]!;
      survivors.push(a < b ? [a, b] : [b, a]);
    }
    this.joints.splice(victim, 1);
    this.edgeSet = new Map();
    for (const [a, b] of survivors) {
      this.connect(a > victim ? a - 1 : a, b > victim ? b - 1 : b);
    }
  }

  clear(): void {
    this.joints = [];
    this.edgeSet = new Map();
  }

  toJson(view: ViewTag, text = ""): StrokeJson {
    const doc: StrokeJson = {
      joints2d: this.joints.map((j) => [j.x, j.y] as [number, number]),
      edges: this.edges,
      view,
    };
    if (text) doc.text = text;
    return doc;
  }

  /** Replace the drawing with an imported document. Throws on documents
   * that could not have come from toJson. */
  loadJson(doc: StrokeJson): void {
    if (!Array.isArray(doc.joints2d) || doc.joints2d.length < 1) {
      throw new Error("joints2d must be a non-empty array");
    }
    if (doc.joints2d.length > MAX_JOINTS) {
      throw new Error(`at most ${MAX_JOINTS} joints`);
    }
    const joints: Joint[] = doc.joints2d.map((p, i) => {
      if (!Array.isArray(p) || p.length !== 2) {
        throw new Error(`joint ${i} is not an [x, y] pair`);
      }
      const [x, y] = p;
      if (typeof x !== "number" || typeof y !== "number" ||
          !isFinite(x) || !isFinite(y) ||
          Math.abs(x) > 1 || Math.abs(y) > 1) {
        throw new Error(`joint ${i} outside the unit square`);
      }
      return { x, y };
    });
    const edges = doc.edges ?? [];
    for (const [i, e] of edges.entries()) {
      if (!Array.isArray(e) || e.length !== 2 ||
          !Number.isInteger(e[0]) || !Number.isInteger(e[1]) ||
          e[0]! < 0 || e[1]! < 0 ||
          e[0]! >= joints.length || e[1]! >= joints.length) {
        throw new Error(`edge ${i} refers outside the joint list`);
      }
    }
    this.joints = joints;
    this.edgeSet = new Map();
    for (const [a, b] of edges) this.connect(a, b);
  }
}

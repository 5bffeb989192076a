/** Wire formats shared with the generation service (see ../schemas/). */

export type ViewTag = "front" | "side" | "top" | "free";

export interface StrokeJson {
  joints2d: [number, number][];
  edges: [number, number][];
  view: ViewTag;
  text?: string;
}

export interface SkeletonJson {
  joints: [number, number, number][];
  edges: [number, number][];
  names?: string[];
  root?: number;
  category?: string;
}

export interface GenerateResponse {
  skeleton: SkeletonJson;
  depth: number[];
  meta: {
    seed: number;
    model_version: string;
    timings: Record<string, number>;
  };
}

export interface Violation {
  code: string;
  detail: string;
}

/** Typed client for the generation service. Stateless on the server side;
 * the client only enforces a single in-flight generate request. */

import type {
  GenerateResponse,
  SkeletonJson,
  StrokeJson,
  Violation,
  ViewTag,
} from "./types";

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
    readonly violations: Violation[] = [],
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function readError(res: Response): Promise<ApiError> {
  let violations: Violation[] = [];
  let message = `${res.status} ${res.statusText}`;
  try {
    const body = await res.json();
    if (Array.isArray(body.violations)) {
      violations = body.violations;
      message = violations.map((v) => `${v.code}: ${v.detail}`).join("; ");
    } else if (body.detail) {
      message = String(body.detail);
    }
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(message, res.status, violations);
}

export class ApiClient {
  private generating = false;

  constructor(readonly baseUrl: string) {}

  get busy(): boolean {
    return this.generating;
  }

  async health(): Promise<{ status: string; model_version: string | null }> {
    return this.getJson("/api/health");
  }

  async config(): Promise<Record<string, unknown>> {
    return this.getJson("/api/config");
  }

  async generate(
    stroke: StrokeJson,
    text: string,
    seed?: number,
    opts: { guidance?: number; steps?: number } = {},
  ): Promise<GenerateResponse> {
    if (this.generating) {
      throw new ApiError("a generate request is already in flight", 0);
    }
    this.generating = true;
    try {
      const body: Record<string, unknown> = { stroke, text };
      if (seed !== undefined) body.seed = seed;
      if (opts.guidance !== undefined) body.guidance = opts.guidance;
      if (opts.steps !== undefined) body.steps = opts.steps;
      return await this.postJson<GenerateResponse>("/api/generate", body);
    } finally {
      this.generating = false;
    }
  }

  async project(skeleton: SkeletonJson, view: ViewTag): Promise<StrokeJson> {
    return this.postJson<StrokeJson>("/api/project", { skeleton, view });
  }

  private async getJson<T>(path: string): Promise<T> {
    const res = await fetch(this.baseUrl + path);
    if (!res.ok) throw await readError(res);
    return (await res.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const res = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw await readError(res);
    return (await res.json()) as T;
  }
}

/** Joint indices named by validation messages, for inline highlighting.
 * Details look like "/joints2d/3/0: ..." or "/edges/1: ...". */
export function violationJoints(
  violations: Violation[],
  edges: [number, number][],
): number[] {
  const out = new Set<number>();
  for (const v of violations) {
    let m = v.detail.match(/\/joints2d\/(\d+)/);
    if (m) out.add(Number(m[1]));
    m = v.detail.match(/\/edges\/(\d+)/);
    if (m) {
      const e = edges[Number(m[1])];
      if (e) {
        out.add(e[0]);
        out.add(e[1]);
      }
    }
  }
  return [...out].sort((a, b) => a - b);
}

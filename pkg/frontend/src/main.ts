/** Page wiring: stroke canvas on the left, generated skeleton on the
 * right with the previous result kept beside it for comparison. */

import { ApiClient, ApiError, violationJoints } from "./api";
import { StrokeCanvas } from "./canvas";
import { Drawing } from "./model";
import type { GenerateResponse, ViewTag } from "./types";
import { SkeletonViewer } from "./viewer";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

export function setup(baseUrl: string): {
  drawing: Drawing;
  canvas: StrokeCanvas;
  current: SkeletonViewer;
  previous: SkeletonViewer;
  generate: () => Promise<void>;
} {
  const api = new ApiClient(baseUrl);
  const drawing = new Drawing();
  const canvas = new StrokeCanvas(byId<HTMLCanvasElement>("stroke"), drawing, {
    onChange: () => setStatus(""),
  });
  const current = new SkeletonViewer(byId<HTMLCanvasElement>("result"));
  const previous = new SkeletonViewer(byId<HTMLCanvasElement>("result-prev"));

  const promptEl = byId<HTMLInputElement>("prompt");
  const seedEl = byId<HTMLInputElement>("seed");
  const viewEl = byId<HTMLSelectElement>("view");
  const statusEl = byId<HTMLElement>("status");
  const generateBtn = byId<HTMLButtonElement>("generate");
  let lastResponse: GenerateResponse | null = null;

  function setStatus(text: string, isError = false): void {
    statusEl.textContent = text;
    statusEl.className = isError ? "error" : "";
  }

  function exportJson(): string {
    return JSON.stringify(
      drawing.toJson(viewEl.value as ViewTag, promptEl.value),
      null,
      2,
    );
  }

  async function generate(): Promise<void> {
    if (api.busy) return;
    canvas.markInvalid([]);
    generateBtn.disabled = true;
    setStatus("generating...");
    try {
      const stroke = drawing.toJson(viewEl.value as ViewTag);
      const seed = seedEl.value === "" ? undefined : Number(seedEl.value);
      const res = await api.generate(stroke, promptEl.value, seed);
      if (lastResponse) previous.show(lastResponse.skeleton, lastResponse.depth);
      current.show(res.skeleton, res.depth);
      lastResponse = res;
      setStatus(`seed ${res.meta.seed}, model ${res.meta.model_version}`);
    } catch (err) {
      if (err instanceof ApiError && err.violations.length) {
        canvas.markInvalid(violationJoints(err.violations, drawing.edges));
        setStatus(err.violations.map((v) => `${v.code}: ${v.detail}`).join("\n"), true);
      } else {
        setStatus(err instanceof Error ? err.message : String(err), true);
      }
    } finally {
      generateBtn.disabled = false;
    }
  }

  generateBtn.addEventListener("click", () => {
    void generate();
  });

  byId<HTMLButtonElement>("export").addEventListener("click", () => {
    const blob = new Blob([exportJson()], { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "stroke.json";
    a.click();
    URL.revokeObjectURL(a.href);
  });

  const importEl = byId<HTMLInputElement>("import");
  importEl.addEventListener("change", () => {
    const file = importEl.files && importEl.files[0];
    if (!file) return;
    const reader = new FileReader();
    reader.onerror = () => setStatus("import failed: unreadable file", true);
    reader.onload = () => {
      try {
        const doc = JSON.parse(String(reader.result)) as {
          view?: ViewTag;
          text?: string;
        };
        drawing.loadJson(doc as Parameters<Drawing["loadJson"]>[0]);
        if (doc.view) viewEl.value = doc.view;
        if (typeof doc.text === "string") promptEl.value = doc.text;
        canvas.markInvalid([]);
        canvas.render();
        setStatus(`loaded ${file.name}`);
      } catch (err) {
        setStatus(`import failed: ${err}`, true);
      }
    };
    reader.readAsText(file);
  });

  byId<HTMLButtonElement>("clear").addEventListener("click", () => {
    drawing.clear();
    canvas.markInvalid([]);
    canvas.render();
    setStatus("");
  });

  canvas.render();
  return { drawing, canvas, current, previous, generate };
}

declare global {
  interface Window {
    skelgen?: ReturnType<typeof setup>;
    SKELGEN_API?: string;
  }
}

if (typeof document !== "undefined" && document.getElementById("stroke")) {
  window.skelgen = setup(window.SKELGEN_API ?? "");
}

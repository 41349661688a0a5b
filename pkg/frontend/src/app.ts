/**
 * Wires the page together: photo selection (file picker or device
 * camera via the capture attribute), prediction display, and the
 * disease info panel for the tapped class.
 */

import { ApiClient } from "./api.js";
import {
  clear,
  renderDiseasePanel,
  renderError,
  renderIdle,
  renderPending,
  renderResult,
} from "./render.js";
import { PredictionController } from "./state.js";

export interface AppElements {
  fileInput: HTMLInputElement;
  preview: HTMLImageElement;
  results: HTMLElement;
  disease: HTMLElement;
}

export function initApp(elements: AppElements, api: ApiClient): PredictionController {
  const controller = new PredictionController(api);
  const { fileInput, preview, results, disease } = elements;

  renderIdle(results);

  controller.subscribe((snap) => {
    if (snap.status === "pending") {
      renderPending(results);
      clear(disease);
    } else if (snap.status === "done" && snap.result) {
      renderResult(results, snap.result);
      attachBarHandlers();
      void showDisease(snap.result.top);
    } else if (snap.status === "error" && snap.error) {
      const err = snap.error;
      renderError(
        results,
        { name: err.name, code: (err as { code?: string }).code, message: err.message },
        () => void controller.retry(),
      );
      clear(disease);
    }
  });

  fileInput.addEventListener("change", () => {
    const file = fileInput.files?.[0];
    if (!file) return;
    preview.src = URL.createObjectURL(file);
    preview.hidden = false;
    void controller.submit({ body: file, contentType: file.type || "image/jpeg" });
  });

  function attachBarHandlers(): void {
    for (const row of results.querySelectorAll<HTMLElement>(".bar-row")) {
      row.addEventListener("click", () => void showDisease(row.dataset.label!));
    }
  }

  async function showDisease(label: string): Promise<void> {
    try {
      renderDiseasePanel(disease, await api.diseaseInfo(label));
    } catch {
      renderDiseasePanel(disease, null);
    }
  }

  return controller;
}

/** Browser entry point (skipped under tests, which call initApp directly). */
export function bootstrap(): void {
  const byId = <T extends HTMLElement>(id: string) =>
    document.getElementById(id) as T;
  initApp(
    {
      fileInput: byId<HTMLInputElement>("photo-input"),
      preview: byId<HTMLImageElement>("preview"),
      results: byId("results"),
      disease: byId("disease"),
    },
    new ApiClient(),
  );
}

if (typeof document !== "undefined" && document.getElementById("photo-input")) {
  bootstrap();
}

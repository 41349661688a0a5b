/** DOM rendering. Percentages are probability x 100 at 1 decimal. */

import type { DiseaseInfo, PredictionResponse } from "./api.js";

export function formatPercent(probability: number): string {
  return `${(probability * 100).toFixed(1)}%`;
}

function prettyLabel(label: string): string {
  return label
    .split(/[_\s]+/)
    .map((w) => (w ? w[0].toUpperCase() + w.slice(1) : w))
    .join(" ");
}

/** One bar per class, widest-first bar scaling, top class highlighted. */
export function renderResult(root: HTMLElement, result: PredictionResponse): void {
  const rows = result.classes
    .map((c) => {
      const pct = formatPercent(c.probability);
      const isTop = c.label === result.top;
      return `
      <div class="bar-row${isTop ? " top" : ""}" data-label="${c.label}" role="button" tabindex="0">
        <span class="bar-label">${prettyLabel(c.label)}</span>
        <span class="bar-track"><span class="bar-fill" style="width:${(c.probability * 100).toFixed(1)}%"></span></span>
        <span class="bar-value">${pct}</span>
      </div>`;
    })
    .join("");
  root.innerHTML = `
    <div class="bars">${rows}</div>
    <p class="latency">top: <strong>${prettyLabel(result.top)}</strong>
      &middot; ${result.latency_ms.toFixed(1)} ms</p>`;
}

export function renderPending(root: HTMLElement): void {
  root.innerHTML = `<p class="status pending">analysing photo&hellip;</p>`;
}

export function renderIdle(root: HTMLElement): void {
  root.innerHTML = `<p class="status">Take or choose a photo of a rice leaf to begin.</p>`;
}

/** Human-readable error; offers a retry button for network failures. */
export function renderError(
  root: HTMLElement,
  error: { name: string; code?: string; message: string },
  onRetry?: () => void,
): void {
  const friendly: Record<string, string> = {
    decode_error: "That file could not be read as an image. Try a JPEG or PNG photo.",
    payload_too_large: "The photo is too large (limit 10 MiB). Try a smaller one.",
    model_not_loaded: "The service has no model loaded yet. Try again shortly.",
  };
  const code = error.code ?? "";
  const lead = friendly[code] ?? "The request failed.";
  const retry =
    error.name === "NetworkError" && onRetry
      ? `<button class="retry">Retry</button>`
      : "";
  root.innerHTML = `
    <div class="error" data-code="${code}">
      <p>${lead}</p>
      <p class="error-detail">${error.message}</p>
      ${retry}
    </div>`;
  if (retry && onRetry) {
    root.querySelector<HTMLButtonElement>(".retry")!.addEventListener("click", onRetry);
  }
}

export function renderDiseasePanel(root: HTMLElement, info: DiseaseInfo | null): void {
  if (info === null) {
    root.innerHTML = `<div class="disease-panel empty"><p>No information available.</p></div>`;
    return;
  }
  root.innerHTML = `
    <div class="disease-panel" data-label="${info.label}">
      <h2>${info.display_name}</h2>
      <p class="disease-description">${info.description}</p>
      <h3>What to do</h3>
      <p class="disease-advice">${info.management_advice}</p>
    </div>`;
}

export function clear(root: HTMLElement): void {
  root.innerHTML = "";
}

import type { ApiError } from "./api.js";
import { CLASS_LABELS, type ClassifyResponse, type HistoryEntry } from "./types.js";

export function formatPercent(p: number): string {
  return `${(p * 100).toFixed(1)}%`;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

/** Four labelled bars plus the predicted-class badge.  Every number shown is
 *  the server's value: the raw float rides along in data-value. */
export function renderProbabilities(container: HTMLElement, response: ClassifyResponse): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  const badge = el(doc, "div", "predicted-badge", `predicted: ${response.predicted}`);
  badge.dataset.predicted = response.predicted;
  container.appendChild(badge);
  for (const label of CLASS_LABELS) {
    const p = response.probabilities[label];
    const row = el(doc, "div", "prob-row");
    row.appendChild(el(doc, "span", "prob-label", label));
    const track = el(doc, "div", "prob-track");
    const bar = el(doc, "div", "prob-bar");
    bar.style.width = `${p * 100}%`;
    bar.dataset.value = String(p);
    bar.dataset.label = label;
    if (label === response.predicted) bar.classList.add("prob-bar-predicted");
    track.appendChild(bar);
    row.appendChild(track);
    row.appendChild(el(doc, "span", "prob-value", formatPercent(p)));
    container.appendChild(row);
  }
}

/** Base radiograph with the server's full-strength colormap stacked on top;
 *  the slider value becomes the overlay's CSS opacity, so alpha 0 shows the
 *  base image untouched. */
export function renderOverlay(
  container: HTMLElement,
  baseUrl: string | null,
  entry: HistoryEntry | null,
  alpha: number,
): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  const stack = el(doc, "div", "overlay-stack");
  const base = el(doc, "img", "overlay-base");
  if (baseUrl !== null) base.src = baseUrl;
  base.alt = "uploaded radiograph";
  stack.appendChild(base);
  if (entry !== null) {
    const heat = el(doc, "img", "overlay-heat");
    heat.src = `data:image/png;base64,${entry.response.overlay_png}`;
    heat.alt = `heat overlay (${entry.response.cam.method})`;
    heat.style.opacity = String(alpha);
    stack.appendChild(heat);
    const caption = el(
      doc, "div", "overlay-caption",
      `${entry.response.cam.method} on ${entry.response.cam.layer}` +
        ` -> ${entry.response.target}`,
    );
    container.appendChild(stack);
    container.appendChild(caption);
  } else {
    container.appendChild(stack);
  }
}

/** 400/415/503 and client-side failures become distinct readable banners. */
export function renderBanner(container: HTMLElement, error: ApiError | null, onRetry?: () => void): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  if (error === null) return;
  const banner = el(doc, "div", "banner");
  banner.dataset.status = String(error.status);
  banner.dataset.code = error.code;
  if (error.status === 503) {
    banner.classList.add("banner-unavailable");
    banner.appendChild(el(doc, "span", undefined, "service unavailable - the model is not loaded"));
    if (onRetry) {
      const retry = el(doc, "button", "banner-retry", "retry");
      retry.addEventListener("click", onRetry);
      banner.appendChild(retry);
    }
  } else if (error.status === 415) {
    banner.classList.add("banner-format");
    banner.appendChild(el(doc, "span", undefined, "unsupported image format - upload a PNG or JPEG"));
  } else if (error.status === 400) {
    banner.classList.add("banner-bad-request");
    banner.appendChild(el(doc, "span", undefined, `request rejected: ${error.message}`));
  } else {
    banner.classList.add("banner-client");
    banner.appendChild(el(doc, "span", undefined, error.message));
  }
  container.appendChild(banner);
}

function controlsSummary(entry: HistoryEntry): string {
  const c = entry.controls;
  const topK = c.topK === null ? "all" : String(c.topK);
  const target = c.target === null ? "predicted" : c.target;
  return `${c.method} target=${target} top_k=${topK} clip=${c.claheClip} ` +
    `grid=${c.claheGrid[0]}x${c.claheGrid[1]}`;
}

export function renderHistory(
  container: HTMLElement,
  history: HistoryEntry[],
  onReplay: (index: number) => void,
): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  history.forEach((entry, index) => {
    const row = el(doc, "div", "history-row");
    row.dataset.index = String(index);
    row.appendChild(el(doc, "span", "history-summary", `#${index + 1} ${controlsSummary(entry)}`));
    const replay = el(doc, "button", "history-replay", "replay");
    replay.addEventListener("click", () => onReplay(index));
    row.appendChild(replay);
    container.appendChild(row);
  });
}

/** Side-by-side overlays with their control states and per-class probability
 *  deltas computed from the two server responses. */
export function renderCompare(container: HTMLElement, a: HistoryEntry, b: HistoryEntry): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  for (const [tag, entry] of [["A", a], ["B", b]] as const) {
    const panel = el(doc, "div", "compare-panel");
    panel.appendChild(el(doc, "h3", undefined, `${tag}: ${controlsSummary(entry)}`));
    const img = el(doc, "img", "compare-overlay");
    img.src = `data:image/png;base64,${entry.response.overlay_png}`;
    img.alt = `overlay ${tag}`;
    panel.appendChild(img);
    panel.appendChild(el(doc, "div", "compare-clip",
      `clahe_clip=${entry.response.preprocessing.clahe_clip} ` +
      `grid=${entry.response.preprocessing.clahe_grid.join("x")}`));
    container.appendChild(panel);
  }
  const deltas = el(doc, "div", "compare-deltas");
  for (const label of CLASS_LABELS) {
    const diff = a.response.probabilities[label] - b.response.probabilities[label];
    const badge = el(doc, "span", "delta-badge",
      `${label}: ${(diff * 100).toFixed(1)} pp`);
    badge.dataset.label = label;
    badge.dataset.delta = String(diff);
    deltas.appendChild(badge);
  }
  container.appendChild(deltas);
}

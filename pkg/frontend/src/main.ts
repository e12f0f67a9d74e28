import { ApiError, ServiceClient } from "./api.js";
import { CLIP_FLOOR, CLIP_MAX, GRID_MAX, GRID_MIN } from "./controls.js";
import { CaseSession } from "./session.js";
import { CLASS_LABELS, type ClassLabel, type HistoryEntry } from "./types.js";
import { renderBanner, renderCompare, renderHistory, renderOverlay, renderProbabilities } from "./ui.js";

export interface ConsoleElements {
  fileInput: HTMLInputElement;
  methodSelect: HTMLSelectElement;
  targetSelect: HTMLSelectElement;
  topKInput: HTMLInputElement;
  alphaSlider: HTMLInputElement;
  clipInput: HTMLInputElement;
  gridXInput: HTMLInputElement;
  gridYInput: HTMLInputElement;
  probPanel: HTMLElement;
  overlayPanel: HTMLElement;
  bannerPanel: HTMLElement;
  historyPanel: HTMLElement;
  comparePanel: HTMLElement;
  statusLine: HTMLElement;
}

function build(root: HTMLElement): ConsoleElements {
  const doc = root.ownerDocument;
  root.innerHTML = `
    <header class="console-header">
      <h1>CXR console</h1>
      <span id="status-line" class="status-line"></span>
    </header>
    <div id="banner-panel"></div>
    <section class="upload-row">
      <label>radiograph <input id="file-input" type="file" accept="image/png,image/jpeg"></label>
    </section>
    <main class="console-main">
      <section class="viewer">
        <div id="overlay-panel" class="overlay-panel"></div>
        <label class="alpha-row">overlay opacity
          <input id="alpha-slider" type="range" min="0" max="1" step="0.05" value="0.5">
        </label>
      </section>
      <aside class="side">
        <div id="prob-panel" class="prob-panel"></div>
        <fieldset class="controls">
          <legend>explanation</legend>
          <label>method
            <select id="method-select">
              <option value="score_cam">score_cam</option>
              <option value="gap_head">gap_head</option>
            </select>
          </label>
          <label>target class
            <select id="target-select"><option value="">predicted</option></select>
          </label>
          <label>top-k channels <input id="topk-input" type="number" min="1" step="1"></label>
          <label>CLAHE clip
            <input id="clip-input" type="number" min="${CLIP_FLOOR}" max="${CLIP_MAX}" step="0.1" value="2">
          </label>
          <label>CLAHE grid
            <input id="grid-x" type="number" min="${GRID_MIN}" max="${GRID_MAX}" value="8">
            x
            <input id="grid-y" type="number" min="${GRID_MIN}" max="${GRID_MAX}" value="8">
          </label>
        </fieldset>
        <section>
          <h2>history</h2>
          <div id="history-panel"></div>
          <div id="compare-panel" class="compare"></div>
        </section>
      </aside>
    </main>`;
  for (const label of CLASS_LABELS) {
    const option = doc.createElement("option");
    option.value = label;
    option.textContent = label;
    root.querySelector<HTMLSelectElement>("#target-select")!.appendChild(option);
  }
  const pick = <T extends HTMLElement>(selector: string) => root.querySelector<T>(selector)!;
  return {
    fileInput: pick<HTMLInputElement>("#file-input"),
    methodSelect: pick<HTMLSelectElement>("#method-select"),
    targetSelect: pick<HTMLSelectElement>("#target-select"),
    topKInput: pick<HTMLInputElement>("#topk-input"),
    alphaSlider: pick<HTMLInputElement>("#alpha-slider"),
    clipInput: pick<HTMLInputElement>("#clip-input"),
    gridXInput: pick<HTMLInputElement>("#grid-x"),
    gridYInput: pick<HTMLInputElement>("#grid-y"),
    probPanel: pick("#prob-panel"),
    overlayPanel: pick("#overlay-panel"),
    bannerPanel: pick("#banner-panel"),
    historyPanel: pick("#history-panel"),
    comparePanel: pick("#compare-panel"),
    statusLine: pick("#status-line"),
  };
}

export interface ConsoleApp {
  session: CaseSession;
  elements: ConsoleElements;
  compareSelection: number[];
}

/** Assemble the console inside root; returns the wired pieces for tests. */
export function wireConsole(root: HTMLElement, client: ServiceClient): ConsoleApp {
  const elements = build(root);
  const compareSelection: number[] = [];

  const refreshOverlay = () => {
    const entry = session.latestExplain === null
      ? null
      : session.history.find((e) => e.response === session.latestExplain) ?? null;
    renderOverlay(elements.overlayPanel, session.imageUrl, entry,
      Number(elements.alphaSlider.value));
  };

  const refreshHistory = () => {
    renderHistory(elements.historyPanel, session.history, (index) => {
      session.replay(index);
      compareSelection.push(index);
      while (compareSelection.length > 2) compareSelection.shift();
      if (compareSelection.length === 2) {
        renderCompare(elements.comparePanel,
          session.history[compareSelection[0]], session.history[compareSelection[1]]);
      }
    });
  };

  const session = new CaseSession(client, {
    onClassify(response) {
      renderBanner(elements.bannerPanel, null);
      renderProbabilities(elements.probPanel, response);
      refreshOverlay();
    },
    onExplain(_entry: HistoryEntry) {
      renderBanner(elements.bannerPanel, null);
      renderProbabilities(elements.probPanel, session.latestClassify!);
      refreshOverlay();
      refreshHistory();
    },
    onError(error) {
      renderBanner(elements.bannerPanel, error, () => {
        if (session.image !== null) void session.uploadAndClassify(session.image);
      });
    },
    onBusy(busy) {
      elements.statusLine.textContent = busy ? "working..." : "";
    },
  });

  elements.fileInput.addEventListener("change", () => {
    const file = elements.fileInput.files?.[0];
    if (file) void session.uploadAndClassify(file);
  });

  const reflectControls = () => {
    // surface post-clamp values so out-of-range input is visibly corrected
    elements.clipInput.value = String(session.controls.claheClip);
    elements.gridXInput.value = String(session.controls.claheGrid[0]);
    elements.gridYInput.value = String(session.controls.claheGrid[1]);
    if (session.controls.topK !== null) {
      elements.topKInput.value = String(session.controls.topK);
    }
  };

  const steer = (patch: Parameters<CaseSession["steerExplanation"]>[0]) => {
    const pending = session.steerExplanation(patch);
    reflectControls(); // clamping happens synchronously
    void pending.then(reflectControls);
  };

  elements.methodSelect.addEventListener("change", () => {
    steer({ method: elements.methodSelect.value as "gap_head" | "score_cam" });
  });
  elements.targetSelect.addEventListener("change", () => {
    const value = elements.targetSelect.value;
    steer({ target: value === "" ? null : (value as ClassLabel) });
  });
  elements.topKInput.addEventListener("change", () => {
    const value = elements.topKInput.value;
    steer({ topK: value === "" ? null : Number(value) });
  });
  elements.clipInput.addEventListener("change", () => {
    steer({ claheClip: Number(elements.clipInput.value) });
  });
  const gridChanged = () => {
    steer({ claheGrid: [Number(elements.gridXInput.value), Number(elements.gridYInput.value)] });
  };
  elements.gridXInput.addEventListener("change", gridChanged);
  elements.gridYInput.addEventListener("change", gridChanged);
  elements.alphaSlider.addEventListener("input", () => {
    session.controls.overlayAlpha = Number(elements.alphaSlider.value);
    refreshOverlay(); // pure presentation: no server round trip
  });

  void client.health().then((h) => {
    if (h.status === "degraded") {
      renderBanner(elements.bannerPanel, new ApiError(503, "model_not_loaded",
        "service reports degraded health"));
    }
  }).catch(() => {
    renderBanner(elements.bannerPanel, new ApiError(0, "network_error",
      "cannot reach the classification service"));
  });

  return { session, elements, compareSelection };
}

declare global {
  interface Window {
    CXR_SERVICE_URL?: string;
  }
}

if (typeof document !== "undefined" && document.getElementById("cxr-console") !== null) {
  const base = window.CXR_SERVICE_URL ?? "http://127.0.0.1:8080";
  wireConsole(document.getElementById("cxr-console")!, new ServiceClient(base));
}

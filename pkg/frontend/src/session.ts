import { ApiError, ServiceClient } from "./api.js";
import { clampControls, DEFAULT_CONTROLS } from "./controls.js";
import type { ClassifyResponse, ControlState, ExplainResponse, HistoryEntry } from "./types.js";

export const MAX_UPLOAD_MB = 20;

export interface SessionEvents {
  onClassify(response: ClassifyResponse): void;
  onExplain(entry: HistoryEntry): void;
  onError(error: ApiError): void;
  onBusy(busy: boolean): void;
}

/** One case under review: the uploaded image, the latest server responses,
 *  the control state, and the (controls -> response) history.  At most one
 *  explain request is in flight; newer control changes abort and supersede
 *  older requests. */
export class CaseSession {
  image: Blob | null = null;
  imageUrl: string | null = null;
  controls: ControlState = { ...DEFAULT_CONTROLS };
  latestClassify: ClassifyResponse | null = null;
  latestExplain: ExplainResponse | null = null;
  history: HistoryEntry[] = [];

  private inFlight: AbortController | null = null;
  private requestSerial = 0;

  constructor(
    private client: ServiceClient,
    private events: SessionEvents,
  ) {}

  /** Client-side gate: an oversized file never reaches the network. */
  acceptableUpload(file: { size: number }): boolean {
    return file.size <= MAX_UPLOAD_MB * 1024 * 1024;
  }

  async uploadAndClassify(file: Blob): Promise<void> {
    if (!this.acceptableUpload(file)) {
      this.events.onError(new ApiError(0, "file_too_large",
        `file exceeds the ${MAX_UPLOAD_MB} MB upload limit`));
      return;
    }
    if (this.imageUrl !== null && typeof URL.revokeObjectURL === "function") {
      URL.revokeObjectURL(this.imageUrl);
    }
    this.image = file;
    this.imageUrl = typeof URL.createObjectURL === "function" ? URL.createObjectURL(file) : null;
    this.latestClassify = null;
    this.latestExplain = null;
    this.history = [];
    this.events.onBusy(true);
    try {
      const response = await this.client.classify(file, this.controls);
      this.latestClassify = response;
      this.events.onClassify(response);
    } catch (err) {
      if (err instanceof ApiError) this.events.onError(err);
      else throw err;
    } finally {
      this.events.onBusy(false);
    }
  }

  /** Apply new controls; round-trips to /v1/explain, superseding any pending
   *  request. Resolves to the history entry, or null when superseded. */
  async steerExplanation(raw: Partial<ControlState>): Promise<HistoryEntry | null> {
    if (this.image === null) {
      this.events.onError(new ApiError(0, "no_image", "upload an image first"));
      return null;
    }
    this.controls = clampControls({ ...this.controls, ...raw });
    const serial = ++this.requestSerial;
    this.inFlight?.abort();
    const controller = typeof AbortController === "function" ? new AbortController() : null;
    this.inFlight = controller;
    this.events.onBusy(true);
    try {
      const response = await this.client.explain(
        this.image, this.controls, controller?.signal);
      if (serial !== this.requestSerial) return null; // a newer request won
      const entry: HistoryEntry = {
        controls: { ...this.controls, claheGrid: [...this.controls.claheGrid] },
        response,
        at: Date.now(),
      };
      this.latestExplain = response;
      this.latestClassify = response; // probabilities come from the newest response
      this.history.push(entry);
      this.events.onExplain(entry);
      return entry;
    } catch (err) {
      if ((err as Error).name === "AbortError") return null;
      if (err instanceof ApiError) {
        if (serial === this.requestSerial) this.events.onError(err);
        return null;
      }
      throw err;
    } finally {
      if (serial === this.requestSerial) this.events.onBusy(false);
    }
  }

  /** Re-render a past entry without a network round trip; the server is
   *  deterministic, so the stored response is the replayed response. */
  replay(index: number): HistoryEntry {
    const entry = this.history[index];
    if (entry === undefined) throw new RangeError(`no history entry ${index}`);
    this.controls = { ...entry.controls, claheGrid: [...entry.controls.claheGrid] };
    this.latestExplain = entry.response;
    this.latestClassify = entry.response;
    this.events.onExplain(entry);
    return entry;
  }
}

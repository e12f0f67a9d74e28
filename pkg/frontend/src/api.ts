import type {
  ClassifyResponse,
  ControlState,
  ExplainResponse,
  HealthStatus,
  ModelInfo,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    detail: string,
  ) {
    super(detail);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let code = "unknown_error";
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (typeof body.error === "string") code = body.error;
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, code, detail);
}

/** Thin fetch wrapper around the four service endpoints. */
export class ServiceClient {
  constructor(
    public baseUrl: string = "",
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private async post<T>(path: string, form: FormData, signal?: AbortSignal): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`, {
        method: "POST",
        body: form,
        signal,
      });
    } catch (err) {
      if ((err as Error).name === "AbortError") throw err;
      throw new ApiError(0, "network_error", String(err));
    }
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  classify(image: Blob, controls: ControlState, signal?: AbortSignal): Promise<ClassifyResponse> {
    const form = new FormData();
    form.append("image", image, "upload.png");
    form.append("clahe_clip", String(controls.claheClip));
    form.append("clahe_grid", `${controls.claheGrid[0]},${controls.claheGrid[1]}`);
    return this.post<ClassifyResponse>("/v1/classify", form, signal);
  }

  explain(image: Blob, controls: ControlState, signal?: AbortSignal): Promise<ExplainResponse> {
    const form = new FormData();
    form.append("image", image, "upload.png");
    form.append("clahe_clip", String(controls.claheClip));
    form.append("clahe_grid", `${controls.claheGrid[0]},${controls.claheGrid[1]}`);
    form.append("method", controls.method);
    // the server always returns the full-strength colormap; opacity is a
    // client-side presentation concern
    form.append("alpha", "1.0");
    if (controls.target !== null) form.append("target", controls.target);
    if (controls.topK !== null) form.append("top_k", String(controls.topK));
    return this.post<ExplainResponse>("/v1/explain", form, signal);
  }

  async modelInfo(): Promise<ModelInfo> {
    const response = await this.fetchImpl(`${this.baseUrl}/v1/model`);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as ModelInfo;
  }

  async health(): Promise<HealthStatus> {
    const response = await this.fetchImpl(`${this.baseUrl}/healthz`);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as HealthStatus;
  }
}

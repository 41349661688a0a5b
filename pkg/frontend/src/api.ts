/**
 * Typed client for the inference service. The UI performs no inference
 * math of its own: every number it renders comes from these responses.
 */

export interface ClassProbability {
  label: string;
  probability: number;
}

export interface PredictionResponse {
  model_id: string;
  classes: ClassProbability[];
  top: string;
  latency_ms: number;
}

export interface DiseaseInfo {
  label: string;
  display_name: string;
  description: string;
  management_advice: string;
}

/** Error body the service attaches to every non-2xx response. */
export interface ServiceErrorBody {
  code: string;
  message: string;
}

/** A response the service answered with an error status. */
export class ServiceError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

/** The service could not be reached at all (offline, refused, timeout). */
export class NetworkError extends Error {
  constructor(cause: unknown) {
    super(cause instanceof Error ? cause.message : String(cause));
    this.name = "NetworkError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorFrom(response: Response): Promise<ServiceError> {
  let body: Partial<ServiceErrorBody> = {};
  try {
    body = (await response.json()) as Partial<ServiceErrorBody>;
  } catch {
    // non-JSON error body; keep the status-derived fallback
  }
  return new ServiceError(
    response.status,
    body.code ?? `http_${response.status}`,
    body.message ?? `request failed with status ${response.status}`,
  );
}

export class ApiClient {
  constructor(
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
    private readonly base: string = "",
  ) {}

  /** POST raw image bytes; resolves to the prediction or throws
   * ServiceError (error status) / NetworkError (unreachable). */
  async predict(body: Blob | ArrayBuffer, contentType: string): Promise<PredictionResponse> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.base}/api/predict`, {
        method: "POST",
        headers: { "content-type": contentType },
        body,
      });
    } catch (cause) {
      throw new NetworkError(cause);
    }
    if (!response.ok) throw await errorFrom(response);
    return (await response.json()) as PredictionResponse;
  }

  /** Disease background info; null when the service has no entry (404). */
  async diseaseInfo(label: string): Promise<DiseaseInfo | null> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.base}/api/diseases/${encodeURIComponent(label)}`);
    } catch (cause) {
      throw new NetworkError(cause);
    }
    if (response.status === 404) return null;
    if (!response.ok) throw await errorFrom(response);
    return (await response.json()) as DiseaseInfo;
  }
}

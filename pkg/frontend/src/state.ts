/**
 * UI state machine. One prediction request is in flight at a time;
 * a submission made while pending replaces any queued one (latest wins).
 */

import {
  ApiClient,
  NetworkError,
  PredictionResponse,
  ServiceError,
} from "./api.js";

export type Status = "idle" | "pending" | "done" | "error";

export interface StateSnapshot {
  status: Status;
  result: PredictionResponse | null;
  error: ServiceError | NetworkError | null;
}

export interface ImageSubmission {
  body: Blob | ArrayBuffer;
  contentType: string;
}

type Listener = (snapshot: StateSnapshot) => void;

export class PredictionController {
  private status: Status = "idle";
  private result: PredictionResponse | null = null;
  private error: ServiceError | NetworkError | null = null;
  private queued: ImageSubmission | null = null;
  private lastSubmission: ImageSubmission | null = null;
  private listeners: Listener[] = [];

  constructor(private readonly api: ApiClient) {}

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  snapshot(): StateSnapshot {
    return { status: this.status, result: this.result, error: this.error };
  }

  private emit(): void {
    const snap = this.snapshot();
    for (const l of this.listeners) l(snap);
  }

  /** Submit an image. While a request is pending the newest submission
   * waits as the single queued replacement. Resolves when the state
   * machine goes quiet (no queued work left). */
  async submit(submission: ImageSubmission): Promise<void> {
    this.lastSubmission = submission;
    if (this.status === "pending") {
      this.queued = submission;
      return;
    }
    await this.run(submission);
  }

  /** Re-send the most recent submission (the retry affordance). */
  async retry(): Promise<void> {
    if (this.lastSubmission && this.status !== "pending") {
      await this.run(this.lastSubmission);
    }
  }

  private async run(submission: ImageSubmission): Promise<void> {
    this.status = "pending";
    this.error = null;
    this.emit();
    try {
      const result = await this.api.predict(submission.body, submission.contentType);
      // a newer submission arrived meanwhile: drop this result entirely
      if (this.queued === null) {
        this.result = result;
        this.status = "done";
        this.emit();
      }
    } catch (e) {
      if (this.queued === null) {
        this.error = e instanceof ServiceError || e instanceof NetworkError
          ? e
          : new NetworkError(e);
        this.result = null;
        this.status = "error";
        this.emit();
      }
    }
    if (this.queued !== null) {
      const next = this.queued;
      this.queued = null;
      await this.run(next);
    }
  }
}

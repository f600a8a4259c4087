/**
 * Thin client for the radeval v1 endpoints. Submissions are idempotent
 * on the server (identical payloads return the same sequence number),
 * so network failures are retried with the exact same body.
 */

import { Task, TaskSchema, Submission } from "./schema.js";

export interface SessionInfo {
  token: string;
  expiresAt: number;
}

export interface NextTaskResult {
  status: "task" | "done";
  task: Task | null;
  imageUri: string | null;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly field: string | null,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
    private readonly maxRetries = 3,
    private readonly retryDelayMs = 250,
  ) {}

  private async request(path: string, init: RequestInit, retryable: boolean): Promise<Response> {
    let attempt = 0;
    for (;;) {
      try {
        return await this.fetchImpl(this.baseUrl + path, init);
      } catch (error) {
        attempt += 1;
        if (!retryable || attempt > this.maxRetries) throw error;
        await new Promise((resolve) => setTimeout(resolve, this.retryDelayMs * attempt));
      }
    }
  }

  private static async raise(response: Response): Promise<never> {
    const body = await response.json().catch(() => ({}));
    throw new ApiError(
      response.status,
      body.code ?? "unknown",
      body.field ?? null,
      body.message ?? response.statusText,
    );
  }

  async createSession(raterId: string): Promise<SessionInfo> {
    const response = await this.request(
      "/v1/session",
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ rater_id: raterId }),
      },
      false,
    );
    if (!response.ok) await ApiClient.raise(response);
    const body = await response.json();
    return { token: body.token, expiresAt: body.expires_at };
  }

  async nextTask(token: string): Promise<NextTaskResult> {
    const response = await this.request(
      "/v1/tasks/next",
      { headers: { Authorization: `Bearer ${token}` } },
      true,
    );
    if (!response.ok) await ApiClient.raise(response);
    const body = await response.json();
    if (body.status === "done") return { status: "done", task: null, imageUri: null };
    return {
      status: "task",
      task: TaskSchema.parse(body.task),
      imageUri: body.image_uri ?? null,
    };
  }

  /**
   * Submit a response; retried with the identical body on network
   * failure, which the server acknowledges with the same sequence number.
   */
  async submitResponse(token: string, submission: Submission): Promise<number> {
    const response = await this.request(
      "/v1/responses",
      {
        method: "POST",
        headers: {
          "Content-Type": "application/json",
          Authorization: `Bearer ${token}`,
        },
        body: JSON.stringify(submission),
      },
      true,
    );
    if (!response.ok) await ApiClient.raise(response);
    const body = await response.json();
    return body.sequence_number;
  }

  imageUrl(imageUri: string): string {
    return this.baseUrl + imageUri;
  }
}

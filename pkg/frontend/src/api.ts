/** HTTP client for the workspace service. Talks JSON, caches the bearer
 * token, and refuses to send incomplete reviews. */

import type {
  CaptureDoc,
  ExportDoc,
  QueueItem,
  VerdictResponse,
} from "./types.js";
import type { CaptureReview } from "./state.js";

export interface Credentials {
  userId: string;
  secret: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ReviewClient {
  private token: string | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly credentials: Credentials,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async login(): Promise<string> {
    const response = await this.fetchFn(`${this.baseUrl}/v1/login`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        user_id: this.credentials.userId,
        secret: this.credentials.secret,
      }),
    });
    const doc = await this.decode(response);
    return doc.token as string;
  }

  private async decode(response: Response): Promise<Record<string, unknown>> {
    const text = await response.text();
    let doc: Record<string, unknown> = {};
    try {
      doc = text ? JSON.parse(text) : {};
    } catch {
      // non-JSON error bodies still surface through the status code
    }
    if (!response.ok) {
      const detail =
        typeof doc.detail === "string" ? doc.detail : `HTTP ${response.status}`;
      throw new ApiError(response.status, detail);
    }
    return doc;
  }

  private async request(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<Record<string, unknown>> {
    this.token = this.token ?? (await this.login());
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers: {
        authorization: `Bearer ${this.token}`,
        ...(body === undefined ? {} : { "content-type": "application/json" }),
      },
      ...(body === undefined ? {} : { body: JSON.stringify(body) }),
    });
    return this.decode(response);
  }

  async queue(): Promise<QueueItem[]> {
    const doc = await this.request("GET", "/review/queue");
    return doc.captures as QueueItem[];
  }

  async capture(captureId: number): Promise<CaptureDoc> {
    return (await this.request(
      "GET",
      `/review/${captureId}`,
    )) as unknown as CaptureDoc;
  }

  async lock(captureId: number): Promise<void> {
    await this.request("POST", `/review/${captureId}/lock`);
  }

  async unlock(captureId: number): Promise<void> {
    await this.request("DELETE", `/review/${captureId}/lock`);
  }

  /** Serialize first: an incomplete review throws before anything is sent. */
  async submit(review: CaptureReview): Promise<VerdictResponse> {
    const body = review.toWire();
    return (await this.request(
      "POST",
      `/review/${body.capture_id}/verdict`,
      body,
    )) as unknown as VerdictResponse;
  }

  async exportGeo(workspace = "default"): Promise<ExportDoc> {
    return (await this.request(
      "GET",
      `/v1/workspaces/${workspace}/export`,
    )) as unknown as ExportDoc;
  }
}

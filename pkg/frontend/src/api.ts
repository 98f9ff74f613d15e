// Thin typed client for the master's REST endpoints. fetch is injectable so
// tests can run outside a browser.

import type { RunForm, RunInfo, SlaveInfo, StatusSnapshot } from "./types";

export type FetchFn = typeof fetch;

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
  }
}

export class MasterApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchFn = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    if (!response.ok) {
      let detail = text;
      try {
        detail = JSON.parse(text).detail ?? text;
      } catch {
        // not json, keep raw text
      }
      throw new ApiError(response.status, String(detail));
    }
    return text ? (JSON.parse(text) as T) : (undefined as T);
  }

  status(): Promise<StatusSnapshot> {
    return this.request("GET", "/api/v1/status");
  }

  slaves(): Promise<SlaveInfo[]> {
    return this.request("GET", "/api/v1/slaves");
  }

  startRun(form: RunForm): Promise<{ run_id: number }> {
    return this.request("POST", "/api/v1/runs", form);
  }

  stopRun(runId: number): Promise<{ run_id: number; status: string }> {
    return this.request("POST", `/api/v1/runs/${runId}/stop`);
  }

  runInfo(runId: number): Promise<RunInfo> {
    return this.request("GET", `/api/v1/runs/${runId}`);
  }
}

/** Typed client for the control API. Every console mutation goes through here. */

import type {
  AssertionsPage,
  GateAction,
  JudgmentInput,
  RunDetail,
  RunSummary,
  TranscriptPage,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`${status}: ${detail}`);
    this.name = "ApiError";
  }

  /** A 409 means the server state moved under us; refresh, do not retry blindly. */
  get isConflict(): boolean {
    return this.status === 409;
  }
}

async function errorDetail(resp: Response): Promise<string> {
  try {
    const body = (await resp.json()) as { detail?: string };
    if (typeof body.detail === "string") return body.detail;
  } catch {
    // non-JSON error body, fall through
  }
  return resp.statusText || "request failed";
}

export class ConsoleApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    if (!resp.ok) {
      throw new ApiError(resp.status, await errorDetail(resp));
    }
    return (await resp.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async listRuns(): Promise<RunSummary[]> {
    const page = await this.request<{ runs: RunSummary[] }>("/runs");
    return page.runs;
  }

  getRun(runId: string): Promise<RunDetail> {
    return this.request<RunDetail>(`/runs/${encodeURIComponent(runId)}`);
  }

  /** Incremental transcript read; wait > 0 long-polls until new messages arrive. */
  transcript(runId: string, from: number, wait = 0): Promise<TranscriptPage> {
    const params = new URLSearchParams({ from: String(from) });
    if (wait > 0) params.set("wait", String(wait));
    return this.request<TranscriptPage>(
      `/runs/${encodeURIComponent(runId)}/transcript?${params}`,
    );
  }

  createRun(body: Record<string, unknown>): Promise<{ run_id: string }> {
    return this.post<{ run_id: string }>("/runs", body);
  }

  gateAction(
    runId: string,
    action: GateAction,
    assertionIds: string[] = [],
  ): Promise<{ accepted: boolean }> {
    const body: Record<string, unknown> = { action };
    if (assertionIds.length > 0) body.assertion_ids = assertionIds;
    return this.post<{ accepted: boolean }>(
      `/runs/${encodeURIComponent(runId)}/gate`,
      body,
    );
  }

  terminate(runId: string): Promise<{ accepted: boolean }> {
    return this.post<{ accepted: boolean }>(
      `/runs/${encodeURIComponent(runId)}/terminate`,
      {},
    );
  }

  markAttempted(runId: string, assertionIds: string[]): Promise<{ attempted: string[] }> {
    return this.post<{ attempted: string[] }>(
      `/runs/${encodeURIComponent(runId)}/attempted`,
      { assertion_ids: assertionIds },
    );
  }

  assertions(runId: string, includeCandidates = false): Promise<AssertionsPage> {
    const suffix = includeCandidates ? "?include_candidates=true" : "";
    return this.request<AssertionsPage>(
      `/runs/${encodeURIComponent(runId)}/assertions${suffix}`,
    );
  }

  recordVerdict(
    runId: string,
    judgment: JudgmentInput,
  ): Promise<{ verdict: unknown; summary: AssertionsPage["summary"] }> {
    return this.post(`/runs/${encodeURIComponent(runId)}/verdicts`, judgment);
  }

  clearVerdict(
    runId: string,
    assertionId: string,
  ): Promise<{ verdict: null; summary: AssertionsPage["summary"] }> {
    return this.post(`/runs/${encodeURIComponent(runId)}/verdicts`, {
      assertion_id: assertionId,
      clear: true,
    });
  }
}

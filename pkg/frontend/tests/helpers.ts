/** Shared fixtures for the unit tests: message and page builders plus a
 * fetch stub that records every request. */

import type { FetchLike } from "../src/api.js";
import type {
  AssertionRow,
  AssertionsPage,
  MessageKind,
  TranscriptMessage,
  TranscriptPage,
} from "../src/types.js";

export function msg(
  seq: number,
  speaker: string,
  kind: MessageKind,
  content: string,
): TranscriptMessage {
  return { seq, speaker, kind, content, created_at: "1970-01-01T00:00:00+00:00" };
}

export function page(
  messages: TranscriptMessage[],
  overrides: Partial<TranscriptPage> = {},
): TranscriptPage {
  return {
    messages,
    next_from: messages.length > 0 ? messages[messages.length - 1]!.seq + 1 : 0,
    status: "Running",
    termination: null,
    gate: "Closed",
    ...overrides,
  };
}

export function assertionRow(
  id: string,
  overrides: Partial<AssertionRow> = {},
): AssertionRow {
  return {
    assertion_id: id,
    description: `description of ${id}`,
    kind: "numeric_point",
    metric_class: "mean",
    expected: 50.0,
    attempted: false,
    verdict: null,
    verdict_state: "Pending",
    ...overrides,
  };
}

export function assertionsPage(
  rows: AssertionRow[],
  display = "0/0 (0.0%)",
): AssertionsPage {
  return {
    assertions: rows,
    summary: {
      aligned: rows.filter((r) => r.verdict_state === "Aligned").length,
      judged: rows.filter((r) => r.verdict !== null).length,
      total: rows.length,
      display,
    },
  };
}

export interface RecordedRequest {
  url: string;
  method: string;
  body: unknown;
}

/** fetch stub: responds from a queue of handlers keyed by call order. */
export function fetchStub(
  handler: (url: string, init?: RequestInit) => { status: number; body: unknown },
): { fetch: FetchLike; requests: RecordedRequest[] } {
  const requests: RecordedRequest[] = [];
  const fetch: FetchLike = async (url, init) => {
    requests.push({
      url,
      method: init?.method ?? "GET",
      body: init?.body ? JSON.parse(init.body as string) : undefined,
    });
    const { status, body } = handler(url, init);
    return new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });
  };
  return { fetch, requests };
}

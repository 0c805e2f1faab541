/** View models to HTML strings. No DOM access here, so every renderer is
 * checkable in a plain node test. Event wiring happens in main.ts through
 * data- attributes. */

import type { GateCardModel } from "./state.js";
import type {
  AssertionRow,
  AssertionSummary,
  RunSummary,
  TranscriptMessage,
} from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

/** Split a code_result body into its exit code line and the output. */
export function parseCodeResult(content: string): { exitCode: string; output: string } {
  const match = /^exitcode: (.*)\noutput:\n?/.exec(content);
  if (match === null) return { exitCode: "?", output: content };
  return { exitCode: match[1]!, output: content.slice(match[0].length) };
}

function exitBadge(exitCode: string): string {
  const ok = exitCode === "0";
  return `<span class="badge ${ok ? "badge-ok" : "badge-fail"}">exit ${escapeHtml(exitCode)}</span>`;
}

export function renderMessage(msg: TranscriptMessage): string {
  if (msg.kind === "code_result") {
    const { exitCode, output } = parseCodeResult(msg.content);
    return [
      `<article class="msg msg-code_result" data-seq="${msg.seq}">`,
      `<header><span class="speaker">${escapeHtml(msg.speaker)}</span>${exitBadge(exitCode)}</header>`,
      `<pre class="code-output">${escapeHtml(output)}</pre>`,
      `</article>`,
    ].join("");
  }
  return [
    `<article class="msg msg-${msg.kind}" data-seq="${msg.seq}">`,
    `<header><span class="speaker">${escapeHtml(msg.speaker)}</span><span class="kind">${escapeHtml(msg.kind)}</span></header>`,
    `<div class="msg-body">${escapeHtml(msg.content)}</div>`,
    `</article>`,
  ].join("");
}

export function renderTranscript(messages: TranscriptMessage[]): string {
  return messages.map(renderMessage).join("\n");
}

export function renderGateCard(card: GateCardModel | null): string {
  if (card === null) return "";
  const checklist = card.checklist
    .map(
      (item) =>
        `<label class="check-row"><input type="checkbox" data-check="${escapeHtml(item.assertionId)}"${
          item.checked ? " checked" : ""
        }> ${escapeHtml(item.description)}</label>`,
    )
    .join("\n");
  return [
    `<section class="gate-card" data-gate-seq="${card.gateSeq}">`,
    `<h2>Approval requested</h2>`,
    `<blockquote class="gate-excerpt">${escapeHtml(card.excerpt)}</blockquote>`,
    `<div class="gate-checklist">`,
    checklist || `<p class="muted">Every assertion is already marked attempted.</p>`,
    `</div>`,
    `<div class="gate-actions">`,
    `<button data-action="approve">Approve</button>`,
    `<button data-action="reinforce">Reinforce</button>`,
    `<button data-action="redirect"${card.redirectEnabled ? "" : " disabled"}>Redirect</button>`,
    `<button data-action="terminate" class="danger">Terminate</button>`,
    `</div>`,
    `</section>`,
  ].join("\n");
}

export function formatExpected(row: AssertionRow): string {
  if (row.expected === null) return "";
  if (Array.isArray(row.expected)) return `${row.expected[0]} to ${row.expected[1]}`;
  return String(row.expected);
}

export function renderChip(summary: AssertionSummary | null): string {
  if (summary === null) return "";
  return `<span class="chip">${escapeHtml(summary.display)}</span>`;
}

export function renderBanner(connection: "live" | "reconnecting"): string {
  if (connection === "live") return "";
  return `<div class="banner banner-reconnect">Connection lost, retrying…</div>`;
}

function verdictControls(row: AssertionRow, inlineError: string | undefined): string {
  const id = escapeHtml(row.assertion_id);
  const observed =
    row.kind === "boolean"
      ? `<select data-observed="${id}"><option value="">observed…</option><option value="true">true</option><option value="false">false</option></select>`
      : `<input type="text" data-observed="${id}" placeholder="observed value" inputmode="decimal">`;
  const error = inlineError
    ? `<div class="inline-error">${escapeHtml(inlineError)}</div>`
    : "";
  return [
    `<div class="verdict-controls">`,
    observed,
    `<button data-save="${id}">Save</button>`,
    `<button data-not-attempted="${id}">Not attempted</button>`,
    `<button data-clear="${id}">Clear</button>`,
    `</div>`,
    error,
  ].join("");
}

export function renderBoard(
  rows: AssertionRow[],
  inlineErrors: Map<string, string>,
): string {
  const body = rows
    .map((row) => {
      const candidates = (row.candidates ?? [])
        .map(
          (c) =>
            `<li class="candidate" title="${escapeHtml(c.snippet)}">${escapeHtml(c.value_text)} <span class="muted">(seq ${c.seq})</span></li>`,
        )
        .join("");
      return [
        `<tr class="verdict-${row.verdict_state}" data-row="${escapeHtml(row.assertion_id)}">`,
        `<td>${escapeHtml(row.description)}</td>`,
        `<td class="expected">${escapeHtml(formatExpected(row))}</td>`,
        `<td>${row.attempted ? "attempted" : "unattempted"}</td>`,
        `<td><span class="state state-${row.verdict_state}">${row.verdict_state}</span></td>`,
        `<td>${candidates ? `<ul class="candidates">${candidates}</ul>` : ""}</td>`,
        `<td>${verdictControls(row, inlineErrors.get(row.assertion_id))}</td>`,
        `</tr>`,
      ].join("");
    })
    .join("\n");
  return [
    `<table class="board">`,
    `<thead><tr><th>Assertion</th><th>Expected</th><th>Attempted</th><th>Verdict</th><th>Candidates</th><th>Judge</th></tr></thead>`,
    `<tbody>${body}</tbody>`,
    `</table>`,
  ].join("\n");
}

export function renderRunList(runs: RunSummary[]): string {
  if (runs.length === 0) return `<p class="muted">No runs in the store yet.</p>`;
  const rows = runs
    .map((run) => {
      const status =
        run.status === "Terminated" && run.termination
          ? `${run.status}(${run.termination})`
          : run.status;
      return [
        `<tr data-run="${escapeHtml(run.run_id)}">`,
        `<td><a href="?run=${encodeURIComponent(run.run_id)}">${escapeHtml(run.run_id)}</a></td>`,
        `<td>${escapeHtml(run.study_title)}</td>`,
        `<td><span class="state">${escapeHtml(status)}</span></td>`,
        `<td>${run.gate === "Open" ? `<span class="badge badge-gate">gate open</span>` : ""}</td>`,
        `<td>${run.message_count}</td>`,
        `</tr>`,
      ].join("");
    })
    .join("\n");
  return [
    `<table class="run-list">`,
    `<thead><tr><th>Run</th><th>Study</th><th>Status</th><th>Gate</th><th>Messages</th></tr></thead>`,
    `<tbody>${rows}</tbody>`,
    `</table>`,
  ].join("\n");
}

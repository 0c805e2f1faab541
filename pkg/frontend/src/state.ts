/** Console view state.
 *
 * Everything authoritative mirrors the server: run status, gate flag,
 * transcript, verdicts. The only client-owned pieces are operator input in
 * flight (which checklist boxes are ticked, inline error text), so a refresh
 * rebuilds an identical view from the API.
 */

import type {
  AssertionRow,
  AssertionSummary,
  AssertionsPage,
  JudgmentInput,
  RunDetail,
  TranscriptMessage,
  TranscriptPage,
} from "./types.js";

export type ConnectionState = "live" | "reconnecting";

export interface ChecklistItem {
  assertionId: string;
  description: string;
  checked: boolean;
}

export interface GateCardModel {
  /** seq of the gate_request that opened this card; identifies the gate. */
  gateSeq: number;
  excerpt: string;
  checklist: ChecklistItem[];
  redirectEnabled: boolean;
}

const EXCERPT_CHARS = 280;

export function excerptOf(content: string): string {
  const flat = content.trim();
  if (flat.length <= EXCERPT_CHARS) return flat;
  return flat.slice(0, EXCERPT_CHARS - 1) + "…";
}

/** Client-side check of a judgment row against its assertion's kind.
 * Returns an error string, or null when the row is worth sending. */
export function validateJudgment(
  row: AssertionRow,
  judgment: JudgmentInput,
): string | null {
  if (judgment.clear || judgment.not_attempted) return null;
  if (judgment.observed === undefined) {
    return "enter an observed value or mark not attempted";
  }
  if (row.kind === "boolean") {
    if (typeof judgment.observed !== "boolean") {
      return "observed must be true or false for this assertion";
    }
    return null;
  }
  if (typeof judgment.observed !== "number" || !Number.isFinite(judgment.observed)) {
    return "observed must be a number for this assertion";
  }
  return null;
}

export class ConsoleState {
  run: RunDetail | null = null;
  messages: TranscriptMessage[] = [];
  gate: "Open" | "Closed" = "Closed";
  status = "";
  termination: string | null = null;
  assertions: AssertionRow[] = [];
  summary: AssertionSummary | null = null;
  connection: ConnectionState = "live";
  inlineErrors = new Map<string, string>();
  bannerError: string | null = null;

  private checked = new Set<string>();
  private checkedGateSeq: number | null = null;
  private checklistTouched = false;

  /** Next transcript seq this view needs. */
  get nextFrom(): number {
    return this.messages.length;
  }

  /** Append monotonically; drop already-seen seqs, never accept a gap. */
  applyTranscript(page: TranscriptPage): void {
    for (const msg of page.messages) {
      if (msg.seq < this.messages.length) continue;
      if (msg.seq > this.messages.length) break;
      this.messages.push(msg);
    }
    this.gate = page.gate;
    this.status = page.status;
    this.termination = page.termination;
    this.syncChecklistDefault();
  }

  applyRun(doc: RunDetail): void {
    this.run = doc;
    this.gate = doc.gate;
    this.status = doc.status;
    this.termination = doc.termination;
    this.syncChecklistDefault();
  }

  applyAssertions(page: AssertionsPage): void {
    this.assertions = page.assertions;
    this.summary = page.summary;
    this.syncChecklistDefault();
  }

  setConnection(state: ConnectionState): void {
    this.connection = state;
  }

  setInlineError(assertionId: string, error: string | null): void {
    if (error === null) this.inlineErrors.delete(assertionId);
    else this.inlineErrors.set(assertionId, error);
  }

  /** The latest gate_request on the transcript, if any. */
  private latestGateRequest(): TranscriptMessage | null {
    for (let i = this.messages.length - 1; i >= 0; i--) {
      const msg = this.messages[i]!;
      if (msg.kind === "gate_request") return msg;
    }
    return null;
  }

  private unattemptedIds(): string[] {
    return this.assertions.filter((a) => !a.attempted).map((a) => a.assertion_id);
  }

  /** Pre-check every unattempted assertion when a gate opens, until the
   * operator touches the checklist for that gate. */
  private syncChecklistDefault(): void {
    const gateMsg = this.latestGateRequest();
    if (this.gate !== "Open" || gateMsg === null) return;
    if (gateMsg.seq !== this.checkedGateSeq) {
      this.checkedGateSeq = gateMsg.seq;
      this.checklistTouched = false;
      this.checked = new Set(this.unattemptedIds());
    } else if (!this.checklistTouched) {
      this.checked = new Set(this.unattemptedIds());
    }
  }

  toggleChecked(assertionId: string): void {
    this.checklistTouched = true;
    if (this.checked.has(assertionId)) this.checked.delete(assertionId);
    else this.checked.add(assertionId);
  }

  checkedIds(): string[] {
    return this.assertions
      .filter((a) => this.checked.has(a.assertion_id))
      .map((a) => a.assertion_id);
  }

  /** Open card model, or null while the gate is closed. */
  gateCard(): GateCardModel | null {
    if (this.gate !== "Open") return null;
    const gateMsg = this.latestGateRequest();
    if (gateMsg === null) return null;
    const checklist = this.assertions
      .filter((a) => !a.attempted)
      .map((a) => ({
        assertionId: a.assertion_id,
        description: a.description,
        checked: this.checked.has(a.assertion_id),
      }));
    const checkedCount = checklist.filter((c) => c.checked).length;
    return {
      gateSeq: gateMsg.seq,
      excerpt: excerptOf(gateMsg.content),
      checklist,
      redirectEnabled: checkedCount >= 1,
    };
  }

  /** Status badge text: the server's status plus its termination reason. */
  statusBadge(): string {
    if (this.status === "Terminated" && this.termination) {
      return `${this.status}(${this.termination})`;
    }
    return this.status;
  }

  summaryChip(): string {
    return this.summary?.display ?? "";
  }
}

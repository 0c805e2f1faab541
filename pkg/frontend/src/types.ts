/** Payload shapes for the control API. Field names mirror the server JSON exactly. */

export type MessageKind =
  | "text"
  | "code_result"
  | "gate_request"
  | "user_directive"
  | "termination_notice";

export interface TranscriptMessage {
  seq: number;
  speaker: string;
  kind: MessageKind;
  content: string;
  created_at: string;
}

export type GateFlag = "Open" | "Closed";

export interface RunSummary {
  run_id: string;
  study_id: string;
  study_title: string;
  started_at: string;
  status: string;
  termination: string | null;
  gate: GateFlag;
  message_count: number;
}

export interface AppliedAction {
  kind: string;
  assertion_ids: string[];
}

export interface RunDetail extends RunSummary {
  config: Record<string, unknown>;
  attempted: string[];
  actions_applied: AppliedAction[];
  active: boolean;
}

export interface TranscriptPage {
  messages: TranscriptMessage[];
  next_from: number;
  status: string;
  termination: string | null;
  gate: GateFlag;
}

export type GateAction = "approve" | "reinforce" | "redirect";

export type AssertionKind = "numeric_point" | "numeric_range" | "boolean";

export interface Verdict {
  assertion_id: string;
  aligned: boolean;
  rule: string;
  observed_point: number | null;
  observed_bool: boolean | null;
  operator_confirmed: boolean;
  note: string;
}

export type VerdictState = "Pending" | "Aligned" | "NotAligned" | "NotAttempted";

export interface Candidate {
  value_text: string;
  seq: number;
  snippet: string;
}

export interface AssertionRow {
  assertion_id: string;
  description: string;
  kind: AssertionKind;
  metric_class: string;
  expected: number | [number, number] | boolean | null;
  attempted: boolean;
  verdict: Verdict | null;
  verdict_state: VerdictState;
  candidates?: Candidate[];
}

export interface AssertionSummary {
  aligned: number;
  judged: number;
  total: number;
  display: string;
}

export interface AssertionsPage {
  assertions: AssertionRow[];
  summary: AssertionSummary;
}

/** Body for POST verdicts; mirrors the evaluate judgment row. */
export interface JudgmentInput {
  assertion_id: string;
  observed?: number | boolean;
  aligned?: boolean;
  not_attempted?: boolean;
  note?: string;
  clear?: boolean;
}

/** Browser entry point. Picks the run from the query string, renders panels
 * into index.html's containers, and delegates clicks to the controller. */

import { ConsoleApi } from "./api.js";
import { RunController } from "./controller.js";
import {
  renderBanner,
  renderBoard,
  renderChip,
  renderGateCard,
  renderRunList,
  renderTranscript,
} from "./render.js";
import type { GateAction, JudgmentInput } from "./types.js";

const api = new ConsoleApi("");

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node;
}

function draftValues(root: HTMLElement): Map<string, string> {
  const drafts = new Map<string, string>();
  for (const input of root.querySelectorAll<HTMLInputElement | HTMLSelectElement>(
    "[data-observed]",
  )) {
    if (input.value) drafts.set(input.dataset.observed!, input.value);
  }
  return drafts;
}

function restoreDrafts(root: HTMLElement, drafts: Map<string, string>): void {
  for (const input of root.querySelectorAll<HTMLInputElement | HTMLSelectElement>(
    "[data-observed]",
  )) {
    const draft = drafts.get(input.dataset.observed!);
    if (draft !== undefined) input.value = draft;
  }
}

async function showRunList(): Promise<void> {
  el("run-view").hidden = true;
  el("list-view").hidden = false;
  const paint = async () => {
    try {
      el("run-list").innerHTML = renderRunList(await api.listRuns());
      el("list-banner").innerHTML = "";
    } catch {
      el("list-banner").innerHTML = renderBanner("reconnecting");
    }
  };
  await paint();
  setInterval(() => void paint(), 2000);
}

function observedFrom(raw: string, isBoolean: boolean): number | boolean | undefined {
  if (raw === "") return undefined;
  if (isBoolean) return raw === "true";
  const parsed = Number(raw);
  return Number.isNaN(parsed) ? undefined : parsed;
}

async function showRun(runId: string): Promise<void> {
  el("list-view").hidden = true;
  el("run-view").hidden = false;
  el("run-title").textContent = runId;

  const transcriptEl = el("transcript");
  const boardEl = el("board");

  const controller = new RunController(api, runId, () => {
    const state = controller.state;
    el("banner").innerHTML = renderBanner(state.connection);
    el("status-badge").textContent = state.statusBadge();
    el("chip").innerHTML = renderChip(state.summary);
    const stickToBottom =
      transcriptEl.scrollTop + transcriptEl.clientHeight >=
      transcriptEl.scrollHeight - 40;
    transcriptEl.innerHTML = renderTranscript(state.messages);
    if (stickToBottom) transcriptEl.scrollTop = transcriptEl.scrollHeight;
    el("gate").innerHTML = renderGateCard(state.gateCard());
    const drafts = draftValues(boardEl);
    boardEl.innerHTML = renderBoard(state.assertions, state.inlineErrors);
    restoreDrafts(boardEl, drafts);
    if (state.run !== null) {
      el("run-subtitle").textContent = state.run.study_title;
    }
  });

  document.addEventListener("click", (event) => {
    const target = event.target;
    if (!(target instanceof HTMLElement)) return;
    const action = target.dataset.action;
    if (action === "terminate") {
      void controller.terminate();
      return;
    }
    if (action !== undefined) {
      void controller.submitGate(action as GateAction);
      return;
    }
    const saveId = target.dataset.save;
    if (saveId !== undefined) {
      const row = controller.state.assertions.find((a) => a.assertion_id === saveId);
      const input = boardEl.querySelector<HTMLInputElement | HTMLSelectElement>(
        `[data-observed="${CSS.escape(saveId)}"]`,
      );
      const judgment: JudgmentInput = {
        assertion_id: saveId,
        observed: observedFrom(input?.value ?? "", row?.kind === "boolean"),
      };
      void controller.recordVerdict(judgment);
      return;
    }
    const naId = target.dataset.notAttempted;
    if (naId !== undefined) {
      void controller.recordVerdict({ assertion_id: naId, not_attempted: true });
      return;
    }
    const clearId = target.dataset.clear;
    if (clearId !== undefined) {
      void controller.clearVerdict(clearId);
    }
  });

  document.addEventListener("change", (event) => {
    const target = event.target;
    if (!(target instanceof HTMLInputElement)) return;
    const checkId = target.dataset.check;
    if (checkId !== undefined) {
      controller.state.toggleChecked(checkId);
      el("gate").innerHTML = renderGateCard(controller.state.gateCard());
    }
  });

  await controller.start();
}

const runId = new URLSearchParams(window.location.search).get("run");
if (runId === null) void showRunList();
else void showRun(runId);

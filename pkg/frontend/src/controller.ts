/** Wires the API client, the poller, and the view state for one run.
 *
 * Every state-changing click maps to exactly one API call; the view is then
 * refreshed from the server rather than patched locally, so what the operator
 * sees is always reconstructable.
 */

import { ApiError, ConsoleApi } from "./api.js";
import { TranscriptPoller } from "./poll.js";
import { ConsoleState, validateJudgment } from "./state.js";
import type { GateAction, JudgmentInput } from "./types.js";

export class RunController {
  readonly state = new ConsoleState();
  private poller: TranscriptPoller | null = null;

  constructor(
    private readonly api: ConsoleApi,
    readonly runId: string,
    private readonly onChange: () => void = () => {},
  ) {}

  /** Pull run record and assertion board; start the transcript loop. */
  async start(pollerOptions: Parameters<typeof this.watch>[0] = {}): Promise<void> {
    await this.refreshRun();
    await this.refreshAssertions();
    void this.watch(pollerOptions);
  }

  watch(options: ConstructorParameters<typeof TranscriptPoller>[3] = {}): Promise<void> {
    this.poller = new TranscriptPoller(
      this.api,
      this.runId,
      {
        onPage: (page) => {
          this.state.applyTranscript(page);
          this.onChange();
        },
        onConnection: (conn) => {
          this.state.setConnection(conn);
          this.onChange();
        },
        nextFrom: () => this.state.nextFrom,
      },
      options,
    );
    return this.poller.run();
  }

  stop(): void {
    this.poller?.stop();
  }

  async refreshRun(): Promise<void> {
    this.state.applyRun(await this.api.getRun(this.runId));
    this.onChange();
  }

  async refreshAssertions(includeCandidates = false): Promise<void> {
    this.state.applyAssertions(await this.api.assertions(this.runId, includeCandidates));
    this.onChange();
  }

  /** Submit a gate action; a 409 means the gate moved, so re-sync instead of failing. */
  async submitGate(action: GateAction): Promise<void> {
    const ids = action === "redirect" ? this.state.checkedIds() : [];
    this.state.bannerError = null;
    try {
      await this.api.gateAction(this.runId, action, ids);
    } catch (err) {
      if (err instanceof ApiError && err.isConflict) {
        await this.refreshRun();
        return;
      }
      throw err;
    }
    await this.refreshRun();
  }

  async terminate(): Promise<void> {
    try {
      await this.api.terminate(this.runId);
    } catch (err) {
      if (err instanceof ApiError && err.isConflict) {
        await this.refreshRun();
        return;
      }
      throw err;
    }
    await this.refreshRun();
  }

  async markAttempted(assertionIds: string[]): Promise<void> {
    await this.api.markAttempted(this.runId, assertionIds);
    await this.refreshAssertions();
  }

  /** Validate locally, post, and re-read the board. Server rejections land
   * as inline errors on the row instead of throwing. */
  async recordVerdict(judgment: JudgmentInput): Promise<boolean> {
    const row = this.state.assertions.find(
      (a) => a.assertion_id === judgment.assertion_id,
    );
    if (row === undefined) {
      this.state.setInlineError(judgment.assertion_id, "unknown assertion");
      this.onChange();
      return false;
    }
    const problem = validateJudgment(row, judgment);
    if (problem !== null) {
      this.state.setInlineError(judgment.assertion_id, problem);
      this.onChange();
      return false;
    }
    try {
      await this.api.recordVerdict(this.runId, judgment);
    } catch (err) {
      if (err instanceof ApiError) {
        this.state.setInlineError(judgment.assertion_id, err.detail);
        this.onChange();
        return false;
      }
      throw err;
    }
    this.state.setInlineError(judgment.assertion_id, null);
    await this.refreshAssertions();
    return true;
  }

  async clearVerdict(assertionId: string): Promise<void> {
    await this.api.clearVerdict(this.runId, assertionId);
    this.state.setInlineError(assertionId, null);
    await this.refreshAssertions();
  }
}

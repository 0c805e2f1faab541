/** Incremental transcript polling with resume.
 *
 * One loop per watched run. Each request asks for messages from the last seq
 * this client holds, so a reconnect after any gap picks up exactly where the
 * view stopped, with no duplicates and no reordering.
 */

import type { TranscriptPage } from "./types.js";

export interface TranscriptSource {
  transcript(runId: string, from: number, wait?: number): Promise<TranscriptPage>;
}

export interface PollerCallbacks {
  onPage(page: TranscriptPage): void;
  onConnection(state: "live" | "reconnecting"): void;
  /** Next seq to request; the state layer owns the resume point. */
  nextFrom(): number;
}

export interface PollerOptions {
  waitSecs?: number;
  reconnectDelayMs?: number;
  sleep?: (ms: number) => Promise<void>;
  /** Stop once the server reports a termination and no new messages remain. */
  stopOnTermination?: boolean;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export class TranscriptPoller {
  private stopped = false;
  private readonly waitSecs: number;
  private readonly reconnectDelayMs: number;
  private readonly sleep: (ms: number) => Promise<void>;
  private readonly stopOnTermination: boolean;

  constructor(
    private readonly source: TranscriptSource,
    private readonly runId: string,
    private readonly callbacks: PollerCallbacks,
    options: PollerOptions = {},
  ) {
    this.waitSecs = options.waitSecs ?? 25;
    this.reconnectDelayMs = options.reconnectDelayMs ?? 1000;
    this.sleep = options.sleep ?? defaultSleep;
    this.stopOnTermination = options.stopOnTermination ?? true;
  }

  stop(): void {
    this.stopped = true;
  }

  async run(): Promise<void> {
    while (!this.stopped) {
      const from = this.callbacks.nextFrom();
      let page: TranscriptPage;
      try {
        page = await this.source.transcript(this.runId, from, this.waitSecs);
      } catch {
        this.callbacks.onConnection("reconnecting");
        await this.sleep(this.reconnectDelayMs);
        continue;
      }
      this.callbacks.onConnection("live");
      this.callbacks.onPage(page);
      if (
        this.stopOnTermination &&
        page.termination !== null &&
        page.messages.length === 0
      ) {
        return;
      }
    }
  }
}

/**
 * Live update loop: long-poll /events, falling back to a 5 s interval poll
 * when the node does not hold the request (or a call fails).
 */

import { ApiClient } from "./api.js";
import { WalletStore } from "./state.js";

export interface EventLoopOptions {
  longPollSeconds: number;
  fallbackMs: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export class EventLoop {
  private running = false;

  constructor(
    private readonly client: ApiClient,
    private readonly store: WalletStore,
    private readonly options: EventLoopOptions = { longPollSeconds: 20, fallbackMs: 5000 },
  ) {}

  /** One poll step; returns the number of events applied. */
  async tick(): Promise<number> {
    const response = await this.client.events(
      this.store.eventCursor,
      this.options.longPollSeconds,
    );
    await this.store.applyEvents(response.events, response.next);
    return response.events.length;
  }

  async run(): Promise<void> {
    const sleep = this.options.sleep ?? defaultSleep;
    this.running = true;
    while (this.running) {
      try {
        const applied = await this.tick();
        if (applied === 0) {
          await sleep(this.options.fallbackMs);
        }
      } catch {
        await sleep(this.options.fallbackMs); // node unreachable: fall back to slow poll
      }
    }
  }

  stop(): void {
    this.running = false;
  }
}

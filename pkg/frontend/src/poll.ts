// Small polling wrapper: one async task on a fixed interval, ticks that
// arrive while the previous run is still in flight are skipped rather
// than queued.

export class Poller {
  private timer: ReturnType<typeof setInterval> | null = null;
  private busy = false;

  constructor(private readonly task: () => Promise<void>,
              private readonly intervalMs: number) {}

  get running(): boolean {
    return this.timer !== null;
  }

  start(): void {
    if (this.timer !== null) return;
    void this.tick();
    this.timer = setInterval(() => void this.tick(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  async tick(): Promise<void> {
    if (this.busy) return;
    this.busy = true;
    try {
      await this.task();
    } catch {
      // task is responsible for surfacing its own errors
    } finally {
      this.busy = false;
    }
  }
}

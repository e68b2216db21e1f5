import type { AlertRow } from "./api.js";

export const DEFAULT_POLL_MS = 2000;
export const MAX_POLL_MS = 30000;

/** Queue model: what the alert table shows and in which order.
 *
 * The server lists alerts newest first; that order is preserved as-is.
 * Adjudicated alerts stay in the table but sink below every open one,
 * so a verdict never makes an alert vanish mid-review.
 */
export class QueueState {
  private rows: AlertRow[] = [];
  private failures = 0;
  selectedId: string | null = null;

  constructor(readonly basePollMs: number = DEFAULT_POLL_MS) {}

  /** Replace the queue with a fresh server snapshot (newest first). */
  ingest(rows: AlertRow[]): void {
    this.rows = rows.slice();
    if (
      this.selectedId !== null &&
      !rows.some((r) => r.alert_id === this.selectedId)
    ) {
      this.selectedId = null;
    }
  }

  /** Open alerts first (server order), then adjudicated (server order). */
  visible(): AlertRow[] {
    const open = this.rows.filter((r) => r.status === "open");
    const done = this.rows.filter((r) => r.status !== "open");
    return open.concat(done);
  }

  openCount(): number {
    return this.rows.filter((r) => r.status === "open").length;
  }

  get(alertId: string): AlertRow | undefined {
    return this.rows.find((r) => r.alert_id === alertId);
  }

  // ------------------------------------------------ selection (keyboard)

  select(alertId: string | null): void {
    this.selectedId =
      alertId !== null && this.get(alertId) ? alertId : null;
  }

  selected(): AlertRow | undefined {
    return this.selectedId === null ? undefined : this.get(this.selectedId);
  }

  /** Move the selection by delta rows in the visible ordering. */
  moveSelection(delta: number): AlertRow | undefined {
    const vis = this.visible();
    if (vis.length === 0) {
      this.selectedId = null;
      return undefined;
    }
    const at = vis.findIndex((r) => r.alert_id === this.selectedId);
    const next =
      at === -1
        ? delta >= 0
          ? 0
          : vis.length - 1
        : Math.min(Math.max(at + delta, 0), vis.length - 1);
    const row = vis[next];
    this.selectedId = row ? row.alert_id : null;
    return row;
  }

  // ------------------------------------------------- poll health / stale

  recordSuccess(): void {
    this.failures = 0;
  }

  recordFailure(): void {
    this.failures += 1;
  }

  /** True once a poll has failed; drives the stale-data banner. */
  isStale(): boolean {
    return this.failures > 0;
  }

  consecutiveFailures(): number {
    return this.failures;
  }

  /** Next poll delay: base interval, doubling per consecutive failure,
   * capped so a long outage keeps probing. */
  pollDelayMs(): number {
    if (this.failures === 0) {
      return this.basePollMs;
    }
    return Math.min(this.basePollMs * 2 ** this.failures, MAX_POLL_MS);
  }
}

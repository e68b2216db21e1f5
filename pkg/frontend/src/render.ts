import type { AlertRow } from "./api.js";
import { fmtScore, fmtTimestamp, tierClass, tierLabel } from "./format.js";

/** Plain view model for one queue row; the DOM layer just copies fields. */
export interface QueueRowView {
  alertId: string;
  score: string;
  tierClass: string;
  tierLabel: string;
  flowId: string;
  endpoints: string;
  issuedAt: string;
  demoted: boolean;
  verdictNote: string;
}

export function queueRowView(row: AlertRow): QueueRowView {
  const m = row.metadata;
  return {
    alertId: row.alert_id,
    score: fmtScore(row.p),
    tierClass: tierClass(row.action),
    tierLabel: tierLabel(row.action),
    flowId: row.flow_id,
    endpoints: `${m.src_ip}:${m.src_port} → ${m.dst_ip}:${m.dst_port}`,
    issuedAt: fmtTimestamp(row.issued_at),
    demoted: row.status !== "open",
    verdictNote: row.verdict
      ? `${row.verdict.action} by ${row.verdict.analyst_id}`
      : "",
  };
}

import type { AlertRow, Verdict } from "../src/api.js";

export function verdict(overrides: Partial<Verdict> = {}): Verdict {
  return {
    alert_id: "w0-f1",
    flow_id: "f1",
    action: "approve",
    rationale: "looks like a flash crowd",
    analyst_id: "ana",
    timestamp: 1_700_000_000,
    amendment: false,
    ...overrides,
  };
}

export function alertRow(overrides: Partial<AlertRow> = {}): AlertRow {
  return {
    alert_id: "w0-f1",
    flow_id: "f1",
    p: 0.51,
    window_index: 0,
    issued_at: 1_000_000,
    action: "rate_limit",
    metadata: {
      src_ip: "10.10.0.2",
      dst_ip: "10.20.0.3",
      src_port: 50412,
      dst_port: 443,
      protocol: 6,
      timestamp: 999_000,
    },
    status: "open",
    verdict: null,
    ...overrides,
  };
}

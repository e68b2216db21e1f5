/** Typed client for the detection service's /v1 JSON API.
 *
 * Every number shown in the console comes from these payloads verbatim;
 * the client never recomputes scores, saliency, or tier decisions.
 */

export type TierAction = "none" | "alert" | "rate_limit" | "block";
export type FeedbackAction = "approve" | "block" | "rate_limit";
export type AlertStatus = "open" | "adjudicated";

export interface AlertMetadata {
  src_ip: string;
  dst_ip: string;
  src_port: number;
  dst_port: number;
  protocol: number;
  timestamp: number;
}

export interface Verdict {
  alert_id: string;
  flow_id: string;
  action: FeedbackAction;
  rationale: string;
  analyst_id: string;
  timestamp: number;
  amendment: boolean;
}

export interface AlertRow {
  alert_id: string;
  flow_id: string;
  p: number;
  window_index: number;
  issued_at: number;
  action: TierAction;
  metadata: AlertMetadata;
  status: AlertStatus;
  verdict: Verdict | null;
}

export interface SubgraphNode {
  id: string;
  kind: "host" | "flow";
  historical: boolean;
}

export interface SubgraphEdge {
  type: string;
  from: string;
  to: string;
}

export interface Subgraph {
  nodes: SubgraphNode[];
  edges: SubgraphEdge[];
  highlight: string;
  hops: number;
  truncated: boolean;
}

export interface AlertDetail extends AlertRow {
  top_features: [string, number][];
  subgraph: Subgraph;
  amendments: Verdict[];
}

export interface AlertPage {
  alerts: AlertRow[];
  page: number;
  page_size: number;
  total: number;
}

export interface RunSummary {
  run_id: string;
  n_scored: number;
  n_alerts: number;
  tier_counts: Record<TierAction, number>;
  [key: string]: unknown;
}

export type FeedbackResult =
  | { kind: "created"; verdict: Verdict }
  | { kind: "conflict"; message: string; verdict: Verdict }
  | { kind: "error"; status: number; message: string };

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchFn(this.base + path);
    if (!res.ok) {
      throw new Error(`GET ${path} failed: ${res.status}`);
    }
    return (await res.json()) as T;
  }

  health(): Promise<{ status: string; run_id: string | null }> {
    return this.getJson("/v1/health");
  }

  summary(): Promise<RunSummary> {
    return this.getJson("/v1/summary");
  }

  alerts(page = 1, pageSize = 50, status?: AlertStatus): Promise<AlertPage> {
    const q = new URLSearchParams({
      page: String(page),
      page_size: String(pageSize),
    });
    if (status) {
      q.set("status", status);
    }
    return this.getJson(`/v1/alerts?${q.toString()}`);
  }

  alert(alertId: string): Promise<AlertDetail> {
    return this.getJson(`/v1/alerts/${encodeURIComponent(alertId)}`);
  }

  async submitFeedback(
    alertId: string,
    action: FeedbackAction,
    rationale: string,
    analystId = "analyst",
  ): Promise<FeedbackResult> {
    const res = await this.fetchFn(
      `${this.base}/v1/alerts/${encodeURIComponent(alertId)}/feedback`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({
          action,
          rationale,
          analyst_id: analystId,
        }),
      },
    );
    if (res.status === 201) {
      const body = (await res.json()) as { feedback: Verdict };
      return { kind: "created", verdict: body.feedback };
    }
    if (res.status === 409) {
      const body = (await res.json()) as {
        detail: { message: string; verdict: Verdict };
      };
      return {
        kind: "conflict",
        message: body.detail.message,
        verdict: body.detail.verdict,
      };
    }
    let message = `submit failed: ${res.status}`;
    try {
      const body = (await res.json()) as { detail?: unknown };
      if (body.detail) {
        message = JSON.stringify(body.detail);
      }
    } catch {
      // non-JSON error body; keep the status text
    }
    return { kind: "error", status: res.status, message };
  }
}

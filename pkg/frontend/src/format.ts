import type { TierAction } from "./api.js";

/** Scores render with exactly three decimals everywhere in the UI. */
export function fmtScore(p: number): string {
  return p.toFixed(3);
}

/** Epoch microseconds to a compact UTC time string. */
export function fmtTimestamp(us: number): string {
  const d = new Date(us / 1000);
  return d.toISOString().replace("T", " ").replace("Z", "");
}

export const TIER_ORDER: TierAction[] = ["block", "rate_limit", "alert", "none"];

const TIER_CLASS: Record<TierAction, string> = {
  block: "tier-block",
  rate_limit: "tier-rate-limit",
  alert: "tier-alert",
  none: "tier-none",
};

export function tierClass(action: TierAction): string {
  return TIER_CLASS[action] ?? "tier-none";
}

export function tierLabel(action: TierAction): string {
  return action === "rate_limit" ? "rate limit" : action;
}

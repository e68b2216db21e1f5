import type { Subgraph } from "./api.js";

/** Deterministic two-column layout for the host/flow neighborhood.
 *
 * Every edge in these subgraphs joins a host to a flow, so a bipartite
 * arrangement (hosts left, flows right) shows the structure without a
 * force simulation. The alerted flow is listed first and flagged for
 * highlighting; historical context flows are flagged for muted styling.
 */

export interface PlacedNode {
  id: string;
  kind: "host" | "flow";
  historical: boolean;
  highlight: boolean;
  x: number;
  y: number;
}

export interface PlacedEdge {
  type: string;
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

export interface Layout {
  width: number;
  height: number;
  nodes: PlacedNode[];
  edges: PlacedEdge[];
  truncated: boolean;
}

const ROW_H = 34;
const PAD = 28;

function column(count: number, height: number): number[] {
  if (count === 0) {
    return [];
  }
  if (count === 1) {
    return [height / 2];
  }
  const usable = height - 2 * PAD;
  return Array.from(
    { length: count },
    (_, i) => PAD + (usable * i) / (count - 1),
  );
}

export function layoutSubgraph(sg: Subgraph, width = 560): Layout {
  const hosts = sg.nodes
    .filter((n) => n.kind === "host")
    .sort((a, b) => a.id.localeCompare(b.id));
  const flows = sg.nodes
    .filter((n) => n.kind === "flow")
    .sort((a, b) => {
      if (a.id === sg.highlight) return -1;
      if (b.id === sg.highlight) return 1;
      if (a.historical !== b.historical) return a.historical ? 1 : -1;
      return a.id.localeCompare(b.id);
    });

  const tallest = Math.max(hosts.length, flows.length, 1);
  const height = Math.max(tallest * ROW_H + 2 * PAD, 180);

  const hostX = width * 0.22;
  const flowX = width * 0.78;
  const hostYs = column(hosts.length, height);
  const flowYs = column(flows.length, height);

  const placed = new Map<string, PlacedNode>();
  hosts.forEach((n, i) => {
    placed.set(n.id, {
      id: n.id,
      kind: "host",
      historical: n.historical,
      highlight: false,
      x: hostX,
      y: hostYs[i] ?? height / 2,
    });
  });
  flows.forEach((n, i) => {
    placed.set(n.id, {
      id: n.id,
      kind: "flow",
      historical: n.historical,
      highlight: n.id === sg.highlight,
      x: flowX,
      y: flowYs[i] ?? height / 2,
    });
  });

  const edges: PlacedEdge[] = [];
  for (const e of sg.edges) {
    const a = placed.get(e.from);
    const b = placed.get(e.to);
    if (a && b) {
      edges.push({ type: e.type, x1: a.x, y1: a.y, x2: b.x, y2: b.y });
    }
  }

  return {
    width,
    height,
    nodes: [...placed.values()],
    edges,
    truncated: sg.truncated,
  };
}

/** Feature bars for the detail pane; the server already orders entries
 * by contribution magnitude and the order is kept verbatim. Widths are
 * display scaling only. */
export interface FeatureBar {
  name: string;
  value: number;
  frac: number;
  sign: "pos" | "neg";
}

export function featureBars(top: [string, number][]): FeatureBar[] {
  const maxAbs = top.reduce((m, [, v]) => Math.max(m, Math.abs(v)), 0);
  return top.map(([name, value]) => ({
    name,
    value,
    frac: maxAbs > 0 ? Math.abs(value) / maxAbs : 0,
    sign: value < 0 ? "neg" : "pos",
  }));
}

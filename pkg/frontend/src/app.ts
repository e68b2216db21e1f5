/** DOM glue: polling, queue table, detail pane, verdict form.
 *
 * All review logic lives in the pure modules (state/form/render/subgraph);
 * this file only moves their output into elements and wires events. The
 * sole mutation path to the server is the feedback endpoint.
 */
import { ApiClient, type AlertDetail, type FeedbackAction } from "./api.js";
import { QueueState } from "./state.js";
import {
  applyResult,
  beginSubmit,
  canSubmit,
  emptyForm,
  setAction,
  setRationale,
  type FormState,
} from "./form.js";
import { queueRowView } from "./render.js";
import { featureBars, layoutSubgraph } from "./subgraph.js";
import { fmtScore, fmtTimestamp, tierClass, tierLabel } from "./format.js";

const SVG_NS = "http://www.w3.org/2000/svg";

const api = new ApiClient();
const queue = new QueueState();
let form: FormState = emptyForm();
let detail: AlertDetail | null = null;
let pollTimer: number | undefined;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

// ----------------------------------------------------------------- queue

async function fetchAllAlerts() {
  const pageSize = 100;
  let page = 1;
  const rows = [];
  for (;;) {
    const chunk = await api.alerts(page, pageSize);
    rows.push(...chunk.alerts);
    if (rows.length >= chunk.total || chunk.alerts.length === 0) break;
    page += 1;
    if (page > 50) break; // hard stop; the queue view is not an archive
  }
  return rows;
}

function renderStale(): void {
  const banner = byId<HTMLDivElement>("stale-banner");
  if (queue.isStale()) {
    banner.hidden = false;
    banner.textContent =
      `Connection lost — showing last known data. ` +
      `Retrying in ${Math.round(queue.pollDelayMs() / 1000)}s.`;
  } else {
    banner.hidden = true;
  }
}

function renderQueue(): void {
  const body = byId<HTMLTableSectionElement>("queue-body");
  body.replaceChildren();
  const rows = queue.visible();
  byId<HTMLSpanElement>("open-count").textContent = String(queue.openCount());
  if (rows.length === 0) {
    const tr = el("tr", "placeholder");
    const td = el("td", "", "No alerts in this run.");
    td.colSpan = 5;
    tr.appendChild(td);
    body.appendChild(tr);
    return;
  }
  for (const row of rows) {
    const v = queueRowView(row);
    const tr = el("tr", v.tierClass);
    tr.dataset.alertId = v.alertId;
    tr.tabIndex = 0;
    tr.setAttribute("role", "button");
    if (v.demoted) tr.classList.add("demoted");
    if (queue.selectedId === v.alertId) tr.classList.add("selected");

    tr.appendChild(el("td", "score", v.score));
    const tierTd = el("td");
    tierTd.appendChild(el("span", `badge ${v.tierClass}`, v.tierLabel));
    tr.appendChild(tierTd);
    tr.appendChild(el("td", "mono", v.endpoints));
    tr.appendChild(el("td", "mono dim", v.issuedAt));
    tr.appendChild(el("td", "dim", v.demoted ? v.verdictNote : "open"));

    tr.addEventListener("click", () => void openDetail(v.alertId));
    tr.addEventListener("keydown", (ev) => {
      if (ev.key === "Enter" || ev.key === " ") {
        ev.preventDefault();
        void openDetail(v.alertId);
      }
    });
    body.appendChild(tr);
  }
}

async function poll(): Promise<void> {
  try {
    const rows = await fetchAllAlerts();
    queue.recordSuccess();
    queue.ingest(rows);
    renderQueue();
  } catch {
    queue.recordFailure();
  }
  renderStale();
  pollTimer = window.setTimeout(() => void poll(), queue.pollDelayMs());
}

// ---------------------------------------------------------------- detail

async function openDetail(alertId: string): Promise<void> {
  queue.select(alertId);
  renderQueue();
  try {
    detail = await api.alert(alertId);
  } catch {
    return;
  }
  form = emptyForm();
  renderDetail();
  byId<HTMLElement>("detail").focus();
}

function metaRow(dl: HTMLDListElement, key: string, value: string): void {
  dl.appendChild(el("dt", "", key));
  dl.appendChild(el("dd", "mono", value));
}

function renderDetail(): void {
  const pane = byId<HTMLElement>("detail");
  pane.replaceChildren();
  if (!detail) {
    pane.appendChild(el("p", "dim", "Select an alert to review it."));
    return;
  }
  const d = detail;

  const head = el("div", "detail-head");
  head.appendChild(el("span", `badge ${tierClass(d.action)}`, tierLabel(d.action)));
  head.appendChild(el("span", "detail-score", fmtScore(d.p)));
  head.appendChild(el("span", "mono dim", d.alert_id));
  pane.appendChild(head);

  const dl = el("dl", "meta");
  metaRow(dl, "flow", d.flow_id);
  metaRow(dl, "source", `${d.metadata.src_ip}:${d.metadata.src_port}`);
  metaRow(dl, "destination", `${d.metadata.dst_ip}:${d.metadata.dst_port}`);
  metaRow(dl, "protocol", String(d.metadata.protocol));
  metaRow(dl, "flow time", fmtTimestamp(d.metadata.timestamp));
  metaRow(dl, "window", String(d.window_index));
  pane.appendChild(dl);

  pane.appendChild(el("h3", "", "Why this score"));
  const bars = el("div", "bars");
  for (const bar of featureBars(d.top_features)) {
    const rowEl = el("div", "bar-row");
    rowEl.appendChild(el("span", "bar-name mono", bar.name));
    const track = el("div", "bar-track");
    const fill = el("div", `bar-fill ${bar.sign}`);
    fill.style.width = `${Math.max(bar.frac * 100, 2)}%`;
    track.appendChild(fill);
    rowEl.appendChild(track);
    rowEl.appendChild(el("span", "bar-value mono", bar.value.toExponential(2)));
    bars.appendChild(rowEl);
  }
  pane.appendChild(bars);

  pane.appendChild(el("h3", "", "Neighborhood"));
  pane.appendChild(renderSubgraph(d));
  if (d.subgraph.truncated) {
    pane.appendChild(
      el("p", "dim", "Neighborhood truncated to the 100 nearest nodes."),
    );
  }

  pane.appendChild(el("h3", "", "Verdict"));
  pane.appendChild(renderVerdictArea(d));
}

function renderSubgraph(d: AlertDetail): SVGSVGElement {
  const layout = layoutSubgraph(d.subgraph);
  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", `0 0 ${layout.width} ${layout.height}`);
  svg.setAttribute("class", "subgraph");
  svg.setAttribute("role", "img");
  svg.setAttribute(
    "aria-label",
    `Two-hop neighborhood of flow ${d.flow_id}`,
  );
  for (const e of layout.edges) {
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(e.x1));
    line.setAttribute("y1", String(e.y1));
    line.setAttribute("x2", String(e.x2));
    line.setAttribute("y2", String(e.y2));
    line.setAttribute("class", `edge edge-${e.type}`);
    svg.appendChild(line);
  }
  for (const n of layout.nodes) {
    const g = document.createElementNS(SVG_NS, "g");
    let cls = `node node-${n.kind}`;
    if (n.historical) cls += " historical";
    if (n.highlight) cls += " highlight";
    g.setAttribute("class", cls);
    if (n.kind === "host") {
      const c = document.createElementNS(SVG_NS, "circle");
      c.setAttribute("cx", String(n.x));
      c.setAttribute("cy", String(n.y));
      c.setAttribute("r", "9");
      g.appendChild(c);
    } else {
      const r = document.createElementNS(SVG_NS, "rect");
      r.setAttribute("x", String(n.x - 8));
      r.setAttribute("y", String(n.y - 8));
      r.setAttribute("width", "16");
      r.setAttribute("height", "16");
      r.setAttribute("rx", "3");
      g.appendChild(r);
    }
    const label = document.createElementNS(SVG_NS, "text");
    label.setAttribute("x", String(n.x + (n.kind === "host" ? -14 : 14)));
    label.setAttribute("y", String(n.y + 4));
    label.setAttribute(
      "text-anchor",
      n.kind === "host" ? "end" : "start",
    );
    label.textContent =
      n.id.length > 24 ? `${n.id.slice(0, 21)}…` : n.id;
    g.appendChild(label);
    svg.appendChild(g);
  }
  return svg;
}

// ------------------------------------------------------------------ form

function renderVerdictArea(d: AlertDetail): HTMLElement {
  const wrap = el("div", "verdict-area");
  const standing = d.verdict ?? form.conflict;
  if (standing) {
    const box = el("div", "verdict-box");
    if (form.conflict) {
      box.appendChild(
        el("p", "conflict-note",
           "Another analyst adjudicated this alert first; the standing " +
           "verdict is shown below and your entry was kept as an amendment."),
      );
    }
    const dl = el("dl", "meta");
    metaRow(dl, "action", standing.action);
    metaRow(dl, "analyst", standing.analyst_id);
    metaRow(dl, "rationale", standing.rationale);
    box.appendChild(dl);
    if (d.amendments.length > 0) {
      box.appendChild(
        el("p", "dim", `${d.amendments.length} amendment(s) on record.`),
      );
    }
    wrap.appendChild(box);
    return wrap;
  }

  const formEl = el("form", "verdict-form") as HTMLFormElement;
  formEl.id = "verdict-form";
  formEl.addEventListener("submit", (ev) => {
    ev.preventDefault();
    void submitVerdict(d.alert_id);
  });

  const actions = el("fieldset", "actions");
  actions.appendChild(el("legend", "", "Action"));
  const options: [FeedbackAction, string][] = [
    ["approve", "Approve (benign)"],
    ["block", "Block (attack)"],
    ["rate_limit", "Keep rate limit"],
  ];
  for (const [value, label] of options) {
    const lab = el("label", "action-option");
    const input = el("input") as HTMLInputElement;
    input.type = "radio";
    input.name = "action";
    input.value = value;
    input.checked = form.action === value;
    input.addEventListener("change", () => {
      form = setAction(form, value);
      syncFormControls();
    });
    lab.appendChild(input);
    lab.appendChild(el("span", "", label));
    actions.appendChild(lab);
  }
  formEl.appendChild(actions);

  const rationaleLabel = el("label", "rationale-label", "Rationale (required)");
  rationaleLabel.htmlFor = "rationale";
  formEl.appendChild(rationaleLabel);
  const textarea = el("textarea") as HTMLTextAreaElement;
  textarea.id = "rationale";
  textarea.rows = 3;
  textarea.required = true;
  textarea.value = form.rationale;
  textarea.placeholder = "Why this verdict?";
  textarea.addEventListener("input", () => {
    form = setRationale(form, textarea.value);
    syncFormControls();
  });
  formEl.appendChild(textarea);

  const submit = el("button", "submit", "Submit verdict") as HTMLButtonElement;
  submit.type = "submit";
  submit.id = "verdict-submit";
  submit.disabled = !canSubmit(form);
  formEl.appendChild(submit);

  if (form.error) {
    formEl.appendChild(el("p", "error", form.error));
  }
  wrap.appendChild(formEl);
  return wrap;
}

function syncFormControls(): void {
  const submit = document.getElementById(
    "verdict-submit",
  ) as HTMLButtonElement | null;
  if (submit) submit.disabled = !canSubmit(form);
}

async function submitVerdict(alertId: string): Promise<void> {
  const action = form.action;
  if (!canSubmit(form) || action === null) {
    return;
  }
  form = beginSubmit(form);
  syncFormControls();
  const result = await api.submitFeedback(alertId, action, form.rationale);
  form = applyResult(form, result);
  // Refresh from the server either way: created and conflict both mean
  // the alert now has a binding verdict worth showing.
  try {
    detail = await api.alert(alertId);
  } catch {
    // keep the stale detail; the poll loop will catch the queue up
  }
  renderDetail();
  void refreshQueueOnce();
}

async function refreshQueueOnce(): Promise<void> {
  try {
    queue.ingest(await fetchAllAlerts());
    queue.recordSuccess();
    renderQueue();
  } catch {
    queue.recordFailure();
  }
  renderStale();
}

// -------------------------------------------------------------- keyboard

function onGlobalKey(ev: KeyboardEvent): void {
  const target = ev.target as HTMLElement | null;
  if (target && (target.tagName === "TEXTAREA" || target.tagName === "INPUT")) {
    return; // never steal keys from form fields
  }
  if (ev.key === "ArrowDown" || ev.key === "j") {
    ev.preventDefault();
    const row = queue.moveSelection(1);
    renderQueue();
    if (row) void openDetail(row.alert_id);
  } else if (ev.key === "ArrowUp" || ev.key === "k") {
    ev.preventDefault();
    const row = queue.moveSelection(-1);
    renderQueue();
    if (row) void openDetail(row.alert_id);
  } else if (ev.key === "r") {
    void refreshQueueOnce();
  }
}

// ------------------------------------------------------------------ boot

async function boot(): Promise<void> {
  try {
    const s = await api.summary();
    byId<HTMLSpanElement>("run-id").textContent = String(s.run_id ?? "");
    byId<HTMLSpanElement>("scored-count").textContent = String(s.n_scored);
  } catch {
    // summary is cosmetic; the poll loop owns the stale banner
  }
  document.addEventListener("keydown", onGlobalKey);
  renderDetail();
  await poll();
}

if (typeof document !== "undefined") {
  void boot();
}

export { pollTimer };

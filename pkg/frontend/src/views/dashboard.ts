// Live fleet table: one row per MT with connection state, the latest value
// of each stored reading, alert count, and the location breadcrumb at
// whatever granularity the viewer's own token is allowed to see.

import type { ApiClient } from "../api.js";
import type { AlertEntry, MtSummary } from "../model.js";
import { isLocationValue } from "../model.js";
import { renderBreadcrumb } from "../breadcrumb.js";
import { clear, el, fmtTime, fmtValue } from "../dom.js";
import type { View } from "./pending.js";

// keep per-poll fan-out bounded on busy fleets
const MAX_READINGS_PER_ROW = 4;

interface RowState {
  error: string;
  actuation: string;
}

export function dashboardView(api: ApiClient, onAuthError: () => void): View {
  const body = el("tbody", {});
  const errorLine = el("p", { class: "error", role: "alert" });
  const countLine = el("p", { class: "note" });
  const table = el("table", { class: "fleet" },
    el("thead", {}, el("tr", {},
      el("th", {}, "mt"), el("th", {}, "connection"), el("th", {}, "approval"),
      el("th", {}, "last seen"), el("th", {}, "readings"), el("th", {}, "location"),
      el("th", {}, "alerts"), el("th", {}, "actuate"))),
    body);
  const root = el("section", { class: "view" },
    el("h2", {}, "Fleet"), errorLine, countLine, table);

  const rowState = new Map<string, RowState>();
  const state = (mtid: string): RowState => {
    let st = rowState.get(mtid);
    if (!st) { st = { error: "", actuation: "" }; rowState.set(mtid, st); }
    return st;
  };

  const actuate = async (mtid: string, name: string, raw: string) => {
    const st = state(mtid);
    if (!name) { st.error = "actuation needs an attribute name"; return; }
    let value: unknown = raw;
    try { value = JSON.parse(raw); } catch { /* plain string is fine */ }
    const resp = await api.actuate(mtid, name, value);
    if (resp.status === 401) { onAuthError(); return; }
    if (!resp.ok) {
      st.error = resp.detail || resp.error || `actuation failed (${resp.status})`;
      st.actuation = "";
    } else {
      st.error = "";
      st.actuation = `${name} <- ${fmtValue((resp.body as any)?.value)}`;
    }
    await refresh();
  };

  const renderRow = (mt: MtSummary, readings: string[],
                     latest: Map<string, string>, location: string,
                     alertCount: number): HTMLTableRowElement => {
    const st = state(mt.mtid);
    const readingCells = readings.map((name) =>
      el("div", { class: "reading" }, `${name}: ${latest.get(name) ?? "-"}`));
    const nameInput = el("input", { type: "text", placeholder: "attribute", size: "9" });
    const valueInput = el("input", { type: "text", placeholder: "value", size: "7" });
    const send = el("button", {
      type: "button",
      onclick: () => { void actuate(mt.mtid, nameInput.value.trim(), valueInput.value); },
    }, "Set");
    const connClass = mt.connection === "connected" ? "ok" : "warn";
    return el("tr", {},
      el("td", {}, mt.mtid),
      el("td", { class: connClass }, mt.connection),
      el("td", {}, mt.approval),
      el("td", {}, fmtTime(mt.last_seen)),
      el("td", {}, ...readingCells),
      el("td", { class: "crumb" }, location),
      el("td", {}, String(alertCount)),
      el("td", {}, nameInput, valueInput, send,
        st.actuation ? el("div", { class: "note" }, st.actuation) : null,
        st.error ? el("div", { class: "error" }, st.error) : null));
  };

  const refresh = async () => {
    const [mtsResp, alertsResp] = await Promise.all([api.listMts(), api.alerts()]);
    if (mtsResp.status === 401 || alertsResp.status === 401) { onAuthError(); return; }
    if (!mtsResp.ok || !mtsResp.body) {
      errorLine.textContent = mtsResp.detail || mtsResp.error || `error ${mtsResp.status}`;
      return;
    }
    errorLine.textContent = "";
    const alertCounts = new Map<string, number>();
    for (const a of (alertsResp.body?.alerts ?? []) as AlertEntry[]) {
      alertCounts.set(a.mtid, (alertCounts.get(a.mtid) ?? 0) + 1);
    }
    const rows = await Promise.all(mtsResp.body.mts.map(async (mt) => {
      const detail = await api.mtDetail(mt.mtid);
      const names = (detail.body?.readings ?? []).slice(0, MAX_READINGS_PER_ROW);
      const latest = new Map<string, string>();
      let location = "-";
      await Promise.all(names.map(async (name) => {
        const r = await api.readAttribute(mt.mtid, name);
        if (r.status === 403) {
          if (name.endsWith("Location")) location = "denied";
          else latest.set(name, "denied");
          return;
        }
        const value = (r.body as any)?.value;
        if (isLocationValue(value)) location = renderBreadcrumb(value.path);
        else latest.set(name, fmtValue(value));
      }));
      return renderRow(mt, names, latest, location, alertCounts.get(mt.mtid) ?? 0);
    }));
    clear(body);
    for (const row of rows) body.append(row);
    countLine.textContent = `${rows.length} managed things`;
  };

  return { root, refresh };
}

// Pending-agent table with an Approve button per row. Approval races with
// the CLI are fine: the refetch after the POST shows whatever state won.

import type { ApiClient } from "../api.js";
import type { Admission } from "../model.js";
import { clear, el, fmtTime } from "../dom.js";

export interface View {
  root: HTMLElement;
  refresh(): Promise<void>;
}

export function pendingView(api: ApiClient, onAuthError: () => void): View {
  const body = el("tbody", {});
  const empty = el("p", { class: "empty" }, "No agents awaiting approval.");
  const errorLine = el("p", { class: "error", role: "alert" });
  const table = el("table", { class: "pending" },
    el("thead", {}, el("tr", {},
      el("th", {}, "agent"), el("th", {}, "state"),
      el("th", {}, "approved by"), el("th", {}, "approved at"), el("th", {}, ""))),
    body);
  const root = el("section", { class: "view" },
    el("h2", {}, "Pending agents"), errorLine, table, empty);

  let busy = new Set<string>();

  const render = (rows: Admission[]) => {
    clear(body);
    table.style.display = rows.length ? "" : "none";
    empty.style.display = rows.length ? "none" : "";
    for (const adm of rows) {
      const button = el("button", {
        type: "button",
        onclick: () => { void approve(adm.agentid); },
      }, busy.has(adm.agentid) ? "Approving..." : "Approve");
      if (busy.has(adm.agentid)) button.setAttribute("disabled", "");
      body.append(el("tr", {},
        el("td", {}, adm.agentid),
        el("td", {}, adm.state),
        el("td", {}, adm.approved_by ?? "-"),
        el("td", {}, fmtTime(adm.approved_at)),
        el("td", {}, button)));
    }
  };

  const refresh = async () => {
    const resp = await api.pendingAgents();
    if (resp.status === 401) { onAuthError(); return; }
    if (!resp.ok || !resp.body) {
      errorLine.textContent = resp.detail || resp.error || `error ${resp.status}`;
      return;
    }
    errorLine.textContent = "";
    render(resp.body.pending);
  };

  const approve = async (agentid: string) => {
    busy.add(agentid);
    const resp = await api.approveAgent(agentid);
    busy.delete(agentid);
    if (resp.status === 401) { onAuthError(); return; }
    // a 409 just means someone else approved first; the refetch settles it
    if (!resp.ok && resp.status !== 409) {
      errorLine.textContent = resp.detail || resp.error || `approve failed (${resp.status})`;
    }
    await refresh();
  };

  return { root, refresh };
}

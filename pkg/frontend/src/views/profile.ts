// Security-profile editor: the authorized-entity list and the secure-only
// flag, plus a what-if panel that replays a read through the live gates as
// a freshly registered probe app, over the default or plaintext channel.

import type { ApiClient } from "../api.js";
import type { SecurityProfile } from "../model.js";
import type { WhatIfProbe } from "../whatif.js";
import { clear, el } from "../dom.js";
import type { View } from "./pending.js";

export function profileView(api: ApiClient, probe: WhatIfProbe,
                            plaintextBase: () => string | undefined,
                            onAuthError: () => void): View {
  const picker = el("select", { class: "mtpick" });
  const errorLine = el("p", { class: "error", role: "alert" });
  const form = el("div", { class: "profile-form" });
  const whatif = el("div", { class: "whatif" });
  const root = el("section", { class: "view" },
    el("h2", {}, "Security profile"),
    el("label", {}, "Managed thing ", picker),
    errorLine, form, whatif);

  let selected = "";
  let current: SecurityProfile | null = null;
  let entities: string[] = [];
  let secureOnly = false;
  let dirty = false;
  let probeNote = "";

  picker.addEventListener("change", () => {
    selected = picker.value;
    dirty = false;
    void refresh();
  });

  const save = async () => {
    if (!current) return;
    const resp = await api.putProfile(selected, {
      authorized_entities: entities,
      secure_only: secureOnly,
      owner: current.owner,
    });
    if (resp.status === 401) { onAuthError(); return; }
    if (!resp.ok) {
      errorLine.textContent = resp.detail || resp.error || `save failed (${resp.status})`;
    } else {
      errorLine.textContent = "";
      dirty = false;
    }
    await refresh();
  };

  const runProbe = async (plaintext: boolean) => {
    const base = plaintext ? plaintextBase() : undefined;
    if (plaintext && !base) {
      probeNote = "no plaintext listener configured at login";
      renderWhatIf();
      return;
    }
    probeNote = "probing...";
    renderWhatIf();
    const resp = await probe.probeRead(selected, "Type", { base });
    const channel = plaintext ? "plaintext" : "default";
    if (resp.ok) probeNote = `${channel} channel: allowed (${resp.status})`;
    else if (resp.status === 403) {
      probeNote = `${channel} channel: 403 ${resp.detail || resp.error || ""}`.trim();
    } else {
      probeNote = `${channel} channel: ${resp.status} ${resp.detail || resp.error || ""}`.trim();
    }
    renderWhatIf();
  };

  const renderForm = () => {
    clear(form);
    if (!current) return;
    const list = el("ul", { class: "entities" });
    entities.forEach((appid, i) => {
      list.append(el("li", {}, appid, " ",
        el("button", {
          type: "button",
          onclick: () => { entities.splice(i, 1); dirty = true; renderForm(); },
        }, "remove")));
    });
    const addInput = el("input", { type: "text", placeholder: "appid" });
    const addBtn = el("button", {
      type: "button",
      onclick: () => {
        const appid = addInput.value.trim();
        if (appid && !entities.includes(appid)) {
          entities.push(appid);
          dirty = true;
        }
        addInput.value = "";
        renderForm();
      },
    }, "add");
    const secureBox = el("input", { type: "checkbox" });
    secureBox.checked = secureOnly;
    secureBox.addEventListener("change", () => {
      secureOnly = secureBox.checked;
      dirty = true;
      renderForm();
    });
    const saveBtn = el("button", { type: "button", onclick: () => void save() },
      dirty ? "Save changes" : "Saved");
    if (!dirty) saveBtn.setAttribute("disabled", "");
    form.append(
      el("p", { class: "note" }, `owner: ${current.owner}`),
      el("h3", {}, "Authorized entities"),
      list,
      el("div", {}, addInput, addBtn),
      el("label", { class: "flag" }, secureBox, " require secure channel"),
      el("div", {}, saveBtn));
  };

  const renderWhatIf = () => {
    clear(whatif);
    const appid = probe.appid;
    const grantBtn = appid === null ? null : el("button", {
      type: "button",
      onclick: () => {
        if (appid && !entities.includes(appid)) {
          entities.push(appid);
          dirty = true;
          renderForm();
        }
      },
    }, "add probe to entities");
    whatif.append(
      el("h3", {}, "What-if probe"),
      el("p", { class: "note" },
        appid === null ? "probe app registers on first use"
                       : `probe app: ${appid}`),
      el("div", {},
        el("button", { type: "button", onclick: () => void runProbe(false) },
          "probe default channel"),
        " ",
        el("button", { type: "button", onclick: () => void runProbe(true) },
          "probe plaintext channel"),
        " ", grantBtn,
      ));
    if (probeNote) whatif.append(el("p", { class: "note" }, probeNote));
  };

  const refresh = async () => {
    const mts = await api.listMts();
    if (mts.status === 401) { onAuthError(); return; }
    const ids = (mts.body?.mts ?? []).map((m) => m.mtid);
    if (!selected && ids.length) selected = ids[0];
    clear(picker);
    for (const id of ids) {
      const opt = el("option", { value: id }, id);
      if (id === selected) opt.setAttribute("selected", "");
      picker.append(opt);
    }
    if (!selected) { clear(form); clear(whatif); return; }
    if (dirty) { renderWhatIf(); return; }  // don't clobber in-progress edits
    const resp = await api.getProfile(selected);
    if (resp.status === 401) { onAuthError(); return; }
    if (!resp.ok || !resp.body) {
      errorLine.textContent = resp.detail || resp.error || `error ${resp.status}`;
      return;
    }
    current = resp.body;
    entities = [...current.authorized_entities];
    secureOnly = current.secure_only;
    renderForm();
    renderWhatIf();
  };

  return { root, refresh };
}

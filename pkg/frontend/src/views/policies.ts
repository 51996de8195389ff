// Privacy-policy editor: a table of disclose/deny rules with an obfuscation
// level slider bounded by the region hierarchy depth, a weekly time-window
// editor, inline validation mirroring the server's rules, and a preview
// panel that fetches the location as the probe app at a chosen time and
// renders the (possibly truncated) path as a breadcrumb.

import type { ApiClient } from "../api.js";
import type { HierarchyNode, Policy, TimeWindow } from "../model.js";
import { maxDepth, regionDepths } from "../model.js";
import { nextPolicyId, validatePolicySet } from "../policy.js";
import { disclosureCaption, renderBreadcrumb } from "../breadcrumb.js";
import type { WhatIfProbe } from "../whatif.js";
import { clear, el } from "../dom.js";
import type { View } from "./pending.js";

const DAY_LABELS = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

export function policiesView(api: ApiClient, probe: WhatIfProbe,
                             onAuthError: () => void): View {
  const picker = el("select", { class: "mtpick" });
  const errorLine = el("p", { class: "error", role: "alert" });
  const editor = el("div", { class: "policy-editor" });
  const preview = el("div", { class: "preview" });
  const root = el("section", { class: "view" },
    el("h2", {}, "Privacy policies"),
    el("label", {}, "Managed thing ", picker),
    errorLine, editor, preview);

  let selected = "";
  let policies: Policy[] = [];
  let dirty = false;
  let depth = 1;
  let zones: string[] = [];
  let previewNote: HTMLElement | null = null;

  picker.addEventListener("change", () => {
    selected = picker.value;
    dirty = false;
    void refresh();
  });

  const save = async () => {
    const problems = validatePolicySet(policies, depth, new Set(zones));
    if (problems.length) return;
    const resp = await api.putPolicies(selected, policies);
    if (resp.status === 401) { onAuthError(); return; }
    if (!resp.ok) {
      errorLine.textContent = resp.detail || resp.error || `save failed (${resp.status})`;
    } else {
      errorLine.textContent = "";
      dirty = false;
    }
    await refresh();
  };

  const windowEditor = (policy: Policy, w: TimeWindow, idx: number): HTMLElement => {
    const boxes = DAY_LABELS.map((label, day) => {
      const box = el("input", { type: "checkbox" });
      box.checked = w.days.includes(day);
      box.addEventListener("change", () => {
        w.days = box.checked
          ? [...w.days, day].sort((a, b) => a - b)
          : w.days.filter((d) => d !== day);
        dirty = true;
        renderEditor();
      });
      return el("label", { class: "day" }, box, label);
    });
    const start = el("input", { type: "number", min: "0", max: "1440", value: String(w.start) });
    const end = el("input", { type: "number", min: "0", max: "1440", value: String(w.end) });
    start.addEventListener("change", () => { w.start = Number(start.value); dirty = true; renderEditor(); });
    end.addEventListener("change", () => { w.end = Number(end.value); dirty = true; renderEditor(); });
    const drop = el("button", {
      type: "button",
      onclick: () => { policy.windows.splice(idx, 1); dirty = true; renderEditor(); },
    }, "remove window");
    return el("div", { class: "window" },
      ...boxes, " minutes ", start, "–", end, " ", drop);
  };

  const policyRow = (policy: Policy): HTMLElement => {
    const requester = el("input", { type: "text", value: policy.requester, size: "12" });
    requester.addEventListener("change", () => {
      policy.requester = requester.value.trim() || "*";
      dirty = true;
      renderEditor();
    });
    const action = el("select", {});
    for (const a of ["disclose", "deny"] as const) {
      const opt = el("option", { value: a }, a);
      if (a === policy.action) opt.setAttribute("selected", "");
      action.append(opt);
    }
    action.addEventListener("change", () => {
      policy.action = action.value as Policy["action"];
      dirty = true;
      renderEditor();
    });
    const levelCap = Math.max(0, depth - 1);
    const slider = el("input", {
      type: "range", min: "0", max: String(levelCap), value: String(policy.level),
    });
    const levelOut = el("span", { class: "levelnum" }, String(policy.level));
    slider.addEventListener("input", () => {
      policy.level = Number(slider.value);
      levelOut.textContent = slider.value;
      dirty = true;
    });
    slider.addEventListener("change", () => renderEditor());
    const zone = el("select", {});
    zone.append(el("option", { value: "" }, "(any zone)"));
    for (const name of zones) {
      const opt = el("option", { value: name }, name);
      if (name === policy.zone) opt.setAttribute("selected", "");
      zone.append(opt);
    }
    zone.addEventListener("change", () => {
      policy.zone = zone.value || null;
      dirty = true;
      renderEditor();
    });
    const addWindow = el("button", {
      type: "button",
      onclick: () => {
        policy.windows.push({ days: [0, 1, 2, 3, 4], start: 540, end: 1020 });
        dirty = true;
        renderEditor();
      },
    }, "add window");
    const drop = el("button", {
      type: "button",
      onclick: () => {
        policies = policies.filter((p) => p.id !== policy.id);
        dirty = true;
        renderEditor();
      },
    }, "delete");
    const windows = policy.windows.length
      ? policy.windows.map((w, i) => windowEditor(policy, w, i))
      : [el("p", { class: "note" }, "no windows: always in force")];
    return el("div", { class: "policy" },
      el("div", { class: "policy-head" },
        el("strong", {}, `#${policy.id}`), " requester ", requester,
        " ", action, " level ", slider, levelOut, " zone ", zone,
        " ", addWindow, " ", drop),
      ...windows);
  };

  const renderEditor = () => {
    clear(editor);
    const problems = validatePolicySet(policies, depth, new Set(zones));
    for (const p of policies) editor.append(policyRow(p));
    if (!policies.length) {
      editor.append(el("p", { class: "empty" },
        "No policies: every location request is denied."));
    }
    const addBtn = el("button", {
      type: "button",
      onclick: () => {
        policies.push({
          id: nextPolicyId(policies), mtid: selected, requester: "*",
          windows: [], zone: null, action: "disclose", level: 0,
        });
        dirty = true;
        renderEditor();
      },
    }, "add policy");
    const saveBtn = el("button", { type: "button", onclick: () => void save() },
      dirty ? "Save policies" : "Saved");
    if (!dirty || problems.length) saveBtn.setAttribute("disabled", "");
    const problemList = el("ul", { class: "problems" });
    for (const prob of problems) {
      problemList.append(el("li", { class: "error" },
        prob.policyId === null ? prob.message : `#${prob.policyId}: ${prob.message}`));
    }
    editor.append(el("div", { class: "editor-foot" }, addBtn, " ", saveBtn), problemList);
  };

  const runPreview = async (atRaw: string) => {
    if (previewNote) previewNote.textContent = "previewing...";
    let at: number | undefined;
    if (atRaw) {
      const parsed = Date.parse(atRaw.endsWith("Z") ? atRaw : atRaw + "Z");
      if (Number.isNaN(parsed)) {
        if (previewNote) previewNote.textContent = "unreadable preview time";
        return;
      }
      at = parsed / 1000;
    }
    const outcome = await probe.previewLocation(selected, { at });
    if (!previewNote) return;
    clear(previewNote);
    if (outcome.kind === "disclosed") {
      previewNote.append(
        el("span", { class: "crumb" }, renderBreadcrumb(outcome.path)),
        el("span", { class: "note" },
          ` (${disclosureCaption(depth, depth - outcome.path.length)})`));
    } else if (outcome.kind === "denied") {
      previewNote.append(el("span", { class: "denied" }, `Denied: ${outcome.detail}`));
    } else {
      previewNote.append(el("span", { class: "error" }, outcome.message));
    }
  };

  const renderPreview = () => {
    clear(preview);
    const atInput = el("input", {
      type: "text", placeholder: "2021-01-04T09:30 (UTC, blank = now)", size: "24",
    });
    previewNote = el("p", { class: "note" });
    preview.append(
      el("h3", {}, "Preview as probe app"),
      el("p", { class: "note" },
        probe.appid === null
          ? "registers a probe app on first use; grant it in the security profile first"
          : `requester: ${probe.appid}`),
      el("div", {}, atInput, " ",
        el("button", { type: "button", onclick: () => void runPreview(atInput.value.trim()) },
          "preview location")),
      previewNote);
  };

  const refresh = async () => {
    const [mts, tree] = await Promise.all([api.listMts(), api.hierarchy()]);
    if (mts.status === 401 || tree.status === 401) { onAuthError(); return; }
    if (tree.ok && tree.body) {
      depth = maxDepth(tree.body as HierarchyNode);
      zones = [...regionDepths(tree.body as HierarchyNode).keys()];
    }
    const ids = (mts.body?.mts ?? []).map((m) => m.mtid);
    if (!selected && ids.length) selected = ids[0];
    clear(picker);
    for (const id of ids) {
      const opt = el("option", { value: id }, id);
      if (id === selected) opt.setAttribute("selected", "");
      picker.append(opt);
    }
    if (!selected) { clear(editor); clear(preview); return; }
    if (dirty) return;  // keep unsaved edits across polls
    const resp = await api.getPolicies(selected);
    if (resp.status === 401) { onAuthError(); return; }
    if (!resp.ok || !resp.body) {
      errorLine.textContent = resp.detail || resp.error || `error ${resp.status}`;
      return;
    }
    errorLine.textContent = "";
    policies = resp.body.policies.map((p) => ({
      ...p,
      windows: p.windows.map((w) => ({ ...w, days: [...w.days] })),
    }));
    renderEditor();
    renderPreview();
  };

  return { root, refresh };
}

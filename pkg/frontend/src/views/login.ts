// Endpoint + token entry. The token goes into the in-memory session and
// nowhere else; closing the tab forgets it.

import type { ConsoleSession } from "../session.js";
import { el } from "../dom.js";

export interface LoginView {
  root: HTMLElement;
  /** Show again after a 401 with an explanatory message. */
  prompt(message?: string): void;
}

export function loginView(session: ConsoleSession,
                          onAuthenticated: () => void): LoginView {
  const managerInput = el("input", {
    type: "text", value: session.endpoints.manager, placeholder: "https://127.0.0.1:8443",
  });
  const momsInput = el("input", {
    type: "text", value: session.endpoints.moms ?? "", placeholder: "optional MoMs URL",
  });
  const plainInput = el("input", {
    type: "text", value: session.endpoints.plaintextProbe ?? "",
    placeholder: "optional plaintext listener (channel probe)",
  });
  const tokenInput = el("input", {
    type: "password", placeholder: "management token", autocomplete: "off",
  });
  const note = el("p", { class: "note" },
    "The token stays in memory for this tab only.");
  const errorLine = el("p", { class: "error", role: "alert" });

  const form = el("form", { class: "login" },
    el("h1", {}, "fleet console"),
    el("label", {}, "Manager API", managerInput),
    el("label", {}, "MoMs API", momsInput),
    el("label", {}, "Plaintext listener", plainInput),
    el("label", {}, "Token", tokenInput),
    el("button", { type: "submit" }, "Connect"),
    note,
    errorLine,
  );
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const manager = managerInput.value.trim();
    const token = tokenInput.value.trim();
    if (!manager || !token) {
      errorLine.textContent = "manager URL and token are required";
      return;
    }
    session.configure({
      manager,
      moms: momsInput.value.trim() || undefined,
      plaintextProbe: plainInput.value.trim() || undefined,
    });
    session.setToken(token);
    tokenInput.value = "";
    errorLine.textContent = "";
    onAuthenticated();
  });

  return {
    root: form,
    prompt(message?: string) {
      errorLine.textContent = message ?? "";
      tokenInput.focus();
    },
  };
}

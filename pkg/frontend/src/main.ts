// App shell: login gate, tab bar, and a poller that refreshes whichever
// view is active. A 401 anywhere drops the token and returns to login.

import { ApiClient } from "./api.js";
import { ConsoleSession } from "./session.js";
import { Poller } from "./poll.js";
import { WhatIfProbe } from "./whatif.js";
import { clear, el } from "./dom.js";
import { dashboardView } from "./views/dashboard.js";
import { loginView } from "./views/login.js";
import { pendingView } from "./views/pending.js";
import { policiesView } from "./views/policies.js";
import { profileView } from "./views/profile.js";
import type { View } from "./views/pending.js";

function boot(): void {
  const mount = document.getElementById("app");
  if (!mount) return;

  // default the manager endpoint to wherever these assets were served from
  const session = new ConsoleSession({ manager: window.location.origin });
  const api = new ApiClient(session);
  const probe = new WhatIfProbe(api);

  const onAuthError = () => {
    session.setToken(null);
    showLogin("session expired or token rejected; sign in again");
  };

  const views: Record<string, View> = {
    fleet: dashboardView(api, onAuthError),
    pending: pendingView(api, onAuthError),
    profile: profileView(api, probe, () => session.endpoints.plaintextProbe, onAuthError),
    policies: policiesView(api, probe, onAuthError),
  };
  const labels: Record<string, string> = {
    fleet: "Fleet", pending: "Pending agents",
    profile: "Security profile", policies: "Privacy policies",
  };

  let active = "fleet";
  const poller = new Poller(() => views[active].refresh(), session.pollMs);

  const tabBar = el("nav", { class: "tabs" });
  const viewHost = el("main", {});
  const shell = el("div", { class: "shell" },
    el("header", {},
      el("span", { class: "brand" }, "fleet console"),
      tabBar,
      el("button", {
        type: "button", class: "signout",
        onclick: () => { session.setToken(null); showLogin(); },
      }, "sign out")),
    viewHost);

  const renderTabs = () => {
    clear(tabBar);
    for (const key of Object.keys(views)) {
      const btn = el("button", {
        type: "button",
        class: key === active ? "tab current" : "tab",
        onclick: () => {
          active = key;
          renderTabs();
          clear(viewHost);
          viewHost.append(views[key].root);
          void poller.tick();
        },
      }, labels[key]);
      tabBar.append(btn);
    }
  };

  const login = loginView(session, () => {
    clear(mount);
    mount.append(shell);
    renderTabs();
    clear(viewHost);
    viewHost.append(views[active].root);
    poller.start();
  });

  const showLogin = (message?: string) => {
    poller.stop();
    clear(mount);
    mount.append(login.root);
    login.prompt(message);
  };

  showLogin();
}

boot();

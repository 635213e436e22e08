/**
 * Browser wiring: mounts the store-driven views onto a root element and
 * translates DOM events into store calls. The UI holds no authority — every
 * state change is an API call and the next render reflects the server.
 */

import { ApiClient } from "./api.js";
import { EventLoop } from "./events.js";
import { renderDashboard, renderSignIn } from "./render.js";
import { WalletStore } from "./state.js";

export function mountApp(root: HTMLElement, baseUrl: string): { store: WalletStore; loop: EventLoop } {
  const client = new ApiClient(baseUrl);
  const store = new WalletStore(client);
  const loop = new EventLoop(client, store);

  function render(): void {
    if (!store.session || store.isExpired(Date.now())) {
      if (store.session) store.signOut(); // expired mid-use: back to sign-in
      root.innerHTML = renderSignIn(store.notice);
      return;
    }
    root.innerHTML = renderDashboard(
      store.session,
      store.pending,
      store.documents,
      store.consents,
      store.history,
      store.notice,
    );
  }

  store.onChange(render);

  root.addEventListener("submit", (event) => {
    const form = event.target as HTMLFormElement;
    if (form.id !== "signin-form") return;
    event.preventDefault();
    const data = new FormData(form);
    store
      .signIn(String(data.get("username") ?? ""), String(data.get("password") ?? ""))
      .then(() => store.loadHistory())
      .then(() => {
        void loop.run();
      })
      .catch(() => {
        /* notice already set by the store */
      });
  });

  root.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const action = target.dataset["action"];
    if (!action) return;
    if (action === "approve" && target.dataset["requestId"]) {
      void store.approve(target.dataset["requestId"]).then(() => store.loadHistory());
    } else if (action === "deny" && target.dataset["requestId"]) {
      void store.deny(target.dataset["requestId"]).then(() => store.loadHistory());
    } else if (action === "revoke" && target.dataset["consentId"]) {
      void store.revoke(target.dataset["consentId"]).then(() => store.loadHistory());
    } else if (action === "signout") {
      loop.stop();
      store.signOut();
    }
  });

  render();
  return { store, loop };
}

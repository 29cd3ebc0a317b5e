// Bootstrap: one SessionStore per tab, session id kept in the URL
// fragment so reloading rehydrates from the server.

import { Rating, SessionApi } from "./api.js";
import { SessionStore } from "./store.js";
import { renderApp } from "./ui.js";

function currentFragmentSession(): string | null {
  const fragment = window.location.hash.replace(/^#/, "");
  const id = fragment.split("/")[0];
  return id || null;
}

export function mount(root: HTMLElement, baseUrl = ""): SessionStore {
  const store = new SessionStore(new SessionApi(baseUrl));

  store.subscribe((view) => {
    root.innerHTML = renderApp(view);
    if (view.sessionId && currentFragmentSession() !== view.sessionId) {
      window.location.hash = `#${view.sessionId}`;
    }

    root.querySelector("#start-session")?.addEventListener("click", () => {
      void store.startSession();
    });
    root.querySelector("#query-form")?.addEventListener("submit", (event) => {
      event.preventDefault();
      const input = root.querySelector<HTMLInputElement>("#query-input");
      if (input) void store.sendQuery(input.value);
    });
    root.querySelectorAll<HTMLButtonElement>("button.rate").forEach((btn) => {
      btn.addEventListener("click", () => {
        store.rateItem(btn.dataset.item!, btn.dataset.rating as Rating);
      });
    });
    root.querySelector("#submit-ratings")?.addEventListener("click", () => {
      void store.submitRatings();
    });
    root.querySelector("#finish-session")?.addEventListener("click", () => {
      void store.finishSession();
    });
    root.querySelector("#dismiss-error")?.addEventListener("click", () => {
      void store.retryLastError();
    });
  });

  const existing = currentFragmentSession();
  if (existing) {
    void store.rehydrate(existing);
  } else {
    root.innerHTML = renderApp(store.view());
    root.querySelector("#start-session")?.addEventListener("click", () => {
      void store.startSession();
    });
  }
  return store;
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mount(document.getElementById("app")!);
}

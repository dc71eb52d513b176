import { GatewayClient } from "./api.js";
import { SessionStore } from "./session.js";
import { mountConsole } from "./view.js";

/** Browser entry point: a connect form, then the console for one session. */
function start(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");

  const form = document.createElement("form");
  form.className = "connect";
  const baseUrl = document.createElement("input");
  baseUrl.value = localStorage.getItem("nexus-base-url") ?? "http://127.0.0.1:8787";
  baseUrl.placeholder = "gateway base URL";
  const sessionId = document.createElement("input");
  sessionId.placeholder = "session id (blank: create new)";
  const token = document.createElement("input");
  token.placeholder = "bearer token (optional)";
  const go = document.createElement("button");
  go.textContent = "connect";
  form.append(baseUrl, sessionId, token, go);
  root.appendChild(form);

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    void (async () => {
      localStorage.setItem("nexus-base-url", baseUrl.value);
      const client = new GatewayClient(baseUrl.value, {
        token: token.value || undefined,
      });
      let id = sessionId.value.trim();
      if (!id) {
        const created = await client.createSession({});
        id = created.session_id;
      }
      const store = new SessionStore(client, id);
      const consoleRoot = document.createElement("div");
      root.replaceChildren(consoleRoot);
      mountConsole(store, consoleRoot);
      await store.connect();
    })();
  });
}

start();

import { mountApp } from "./app.js";

const baseUrl =
  new URLSearchParams(window.location.search).get("node") ?? "http://127.0.0.1:8547";

const root = document.getElementById("app");
if (root) {
  mountApp(root, baseUrl);
}

import { Dashboard } from "./app";

window.addEventListener("load", () => {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const dashboard = new Dashboard(root, { apiBase: `http://${location.host}` });
  void dashboard.start();
});

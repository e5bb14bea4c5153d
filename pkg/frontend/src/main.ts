/** Router and bootstrapping: one single-page client over the inspection API. */

import { ApiClient } from "./api.js";
import { renderDashboard } from "./dashboard.js";
import { renderDetail } from "./detail.js";
import { clear, el } from "./dom.js";
import { renderGrid } from "./grid.js";
import { parseHash, Route, routeToHash } from "./state.js";

export class App {
  private controller: AbortController | null = null;

  constructor(
    private readonly container: HTMLElement,
    private readonly api: ApiClient,
    private readonly window_: Window = window,
  ) {}

  start(): void {
    this.window_.addEventListener("hashchange", () => void this.renderCurrent());
    void this.renderCurrent();
  }

  /** Navigation goes through the hash so back/forward restores filter state. */
  navigate = (route: Route): void => {
    const hash = routeToHash(route);
    if (this.window_.location.hash === hash) {
      void this.renderCurrent();
    } else {
      this.window_.location.hash = hash; // hashchange listener re-renders
    }
  };

  async renderCurrent(): Promise<void> {
    this.controller?.abort(); // cancel in-flight requests on navigation
    this.controller = new AbortController();
    const route = parseHash(this.window_.location.hash || "#/grid");
    try {
      await this.renderRoute(route, this.controller.signal);
    } catch (error) {
      if ((error as { name?: string }).name === "AbortError") return;
      this.renderError(route, error);
    }
  }

  private async renderRoute(route: Route, signal: AbortSignal): Promise<void> {
    const shell = el("nav", { class: "topnav" }, [
      el("a", { href: "#/grid", "data-testid": "nav-grid" }, ["prototypes"]),
      el("a", { href: "#/dashboard", "data-testid": "nav-dashboard" }, ["dashboard"]),
    ]);
    const view = el("main", {});
    if (route.view === "grid") {
      await renderGrid(view, this.api, route.filters, this.navigate, signal);
    } else if (route.view === "prototype") {
      await renderDetail(view, this.api, route.id, this.navigate, signal);
    } else {
      await renderDashboard(view, this.api, route.threshold, this.navigate, signal);
    }
    clear(this.container);
    this.container.append(shell, view);
  }

  private renderError(route: Route, error: unknown): void {
    clear(this.container);
    const panel = el("div", { class: "error-panel", "data-testid": "error-panel" });
    panel.append(el("p", {}, [
      `The inspection service is unreachable (${String(error)}).`,
    ]));
    const retry = el("button", { "data-testid": "retry-button" }, ["retry"]);
    retry.addEventListener("click", () => void this.renderCurrent());
    panel.append(retry);
    this.container.append(panel);
  }
}

export function boot(): void {
  const container = document.getElementById("app");
  if (!container) throw new Error("missing #app container");
  new App(container, new ApiClient()).start();
}

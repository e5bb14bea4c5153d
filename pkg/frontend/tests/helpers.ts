/** Fixture server: serves the committed golden API responses by exact URL.
 *
 * The goldens under ../../tests/golden are generated against the real
 * service, so asserting that the UI both requests these exact URLs and
 * renders their fields verbatim is a full client-side contract test.
 */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { ApiClient, FetchLike } from "../src/api.js";
import { App } from "../src/main.js";

const GOLDEN_DIR = join(dirname(fileURLToPath(import.meta.url)), "..", "..",
  "tests", "golden");

export function golden(name: string): any {
  return JSON.parse(readFileSync(join(GOLDEN_DIR, `${name}.json`), "utf-8"));
}

export class FixtureServer {
  readonly requests: string[] = [];
  private readonly routes = new Map<string, unknown>();
  failing = false;

  on(url: string, payload: unknown): this {
    this.routes.set(url, payload);
    return this;
  }

  onGolden(url: string, name: string): this {
    return this.on(url, golden(name));
  }

  fetch: FetchLike = async (url: string) => {
    this.requests.push(url);
    if (this.failing) {
      throw new TypeError("fetch failed: service unreachable");
    }
    if (!this.routes.has(url)) {
      return {
        ok: false,
        status: 404,
        json: async () => ({ detail: `no fixture for ${url}` }),
      } as unknown as Response;
    }
    const payload = this.routes.get(url);
    return {
      ok: true,
      status: 200,
      json: async () => JSON.parse(JSON.stringify(payload)),
    } as unknown as Response;
  };
}

export async function mountApp(server: FixtureServer, hash: string): Promise<HTMLElement> {
  document.body.innerHTML = '<div id="app"></div>';
  const container = document.getElementById("app") as HTMLElement;
  window.location.hash = hash;
  const app = new App(container, new ApiClient("", server.fetch));
  app.start();
  await waitFor(() => container.childElementCount > 0);
  return container;
}

export function flush(ms = 0): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export async function waitFor(predicate: () => boolean, timeoutMs = 1000): Promise<void> {
  const start = Date.now();
  while (!predicate()) {
    if (Date.now() - start > timeoutMs) {
      throw new Error("waitFor timed out");
    }
    await flush(5);
  }
}

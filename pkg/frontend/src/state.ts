/** Hash-based routes so every view is deep-linkable and back/forward works. */

import type { GridFilters } from "./api.js";

export type Route =
  | { view: "grid"; filters: GridFilters }
  | { view: "prototype"; id: number }
  | { view: "dashboard"; threshold?: number };

const NUMERIC_FILTERS = new Set(["min_occurrences", "offset", "limit", "threshold"]);

export function parseHash(hash: string): Route {
  const stripped = hash.replace(/^#\/?/, "");
  const [path, query = ""] = stripped.split("?", 2);
  const params = new URLSearchParams(query);

  const prototypeMatch = path.match(/^prototype\/(\d+)$/);
  if (prototypeMatch) {
    return { view: "prototype", id: Number(prototypeMatch[1]) };
  }
  if (path === "dashboard") {
    const threshold = params.get("threshold");
    return { view: "dashboard", threshold: threshold === null ? undefined : Number(threshold) };
  }
  const filters: GridFilters = {};
  for (const [key, value] of params.entries()) {
    if (NUMERIC_FILTERS.has(key)) {
      (filters as Record<string, unknown>)[key] = Number(value);
    } else if (key === "label" || key === "token_kind" || key === "sort") {
      (filters as Record<string, unknown>)[key] = value;
    }
  }
  return { view: "grid", filters };
}

export function routeToHash(route: Route): string {
  if (route.view === "prototype") {
    return `#/prototype/${route.id}`;
  }
  if (route.view === "dashboard") {
    return route.threshold === undefined
      ? "#/dashboard"
      : `#/dashboard?threshold=${route.threshold}`;
  }
  const params = new URLSearchParams();
  for (const [key, value] of Object.entries(route.filters)) {
    if (value !== undefined) params.set(key, String(value));
  }
  const query = params.toString();
  return query ? `#/grid?${query}` : "#/grid";
}

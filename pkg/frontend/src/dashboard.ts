/** Comparison summary: label counts, diversity, and the threshold slider.

The slider never recomputes labels locally: it re-queries /api/prototypes
with a ?threshold= parameter and counts the server-assigned labels.
*/

import type { ApiClient, PrototypeStats, Report } from "./api.js";
import { clear, el } from "./dom.js";
import type { Route } from "./state.js";

const RELABEL_LIMIT = 1000;

export function countLabels(items: PrototypeStats[], datasets: string[]) {
  const counts = {
    specific: Object.fromEntries(datasets.map((d) => [d, 0])) as Record<string, number>,
    shared: 0,
    insufficient: 0,
    unused: 0,
  };
  for (const item of items) {
    const label = item.label;
    if (label === null) continue;
    if (label.startsWith("specific-to:")) {
      counts.specific[label.split(":", 2)[1]] += 1;
    } else if (label === "shared") {
      counts.shared += 1;
    } else if (label === "insufficient-data") {
      counts.insufficient += 1;
    } else if (label === "unused") {
      counts.unused += 1;
    }
  }
  return counts;
}

function countsTable(counts: ReturnType<typeof countLabels>): HTMLElement {
  const table = el("table", { class: "counts", "data-testid": "counts-table" });
  const rows: [string, number][] = [
    ...Object.entries(counts.specific).map(
      ([d, n]) => [`specific-to:${d}`, n] as [string, number]),
    ["shared", counts.shared],
    ["insufficient-data", counts.insufficient],
    ["unused", counts.unused],
  ];
  for (const [name, value] of rows) {
    const row = el("tr", { "data-label": name });
    row.append(el("td", {}, [name]));
    const cell = el("td", { "data-testid": `count-${name}` }, [String(value)]);
    row.append(cell);
    table.append(row);
  }
  return table;
}

export async function renderDashboard(
  container: HTMLElement,
  api: ApiClient,
  threshold: number | undefined,
  navigate: (route: Route) => void,
  signal?: AbortSignal,
): Promise<void> {
  const report: Report = await api.getReport(signal);
  clear(container);
  container.append(el("h1", {}, ["Dataset comparison dashboard"]));

  if (report.prototypes.length === 0 || report.num_prototypes === 0) {
    container.append(el("p", { class: "empty-state", "data-testid": "empty-state" },
      ["The index is empty; nothing to compare yet."]));
    return;
  }

  container.append(el("p", { "data-testid": "summary" }, [
    `datasets: ${report.datasets.join(", ")} · prototypes: ${report.num_prototypes} · ` +
    `mean pairwise cosine similarity: ${report.diversity.toFixed(4)}`,
  ]));

  const effective = threshold ?? report.threshold;
  const slider = el("input", {
    type: "range", min: "0.5", max: "1.0", step: "0.01",
    value: String(effective),
    "data-testid": "threshold-slider",
  }) as HTMLInputElement;
  const sliderValue = el("span", { "data-testid": "threshold-value" },
    [effective.toFixed(2)]);
  slider.addEventListener("change", () => {
    navigate({ view: "dashboard", threshold: Number(slider.value) });
  });
  container.append(el("div", { class: "slider-row" },
    [el("label", {}, ["specificity threshold "]), slider, sliderValue]));

  let counts;
  if (threshold === undefined || threshold === report.threshold) {
    // report defaults; no recompute round-trip needed
    counts = {
      specific: { ...(report.counts.specific ?? {}) },
      shared: report.counts.shared ?? 0,
      insufficient: report.counts["insufficient-data"],
      unused: report.counts.unused,
    };
  } else {
    const listing = await api.getPrototypes(
      { limit: RELABEL_LIMIT, threshold }, signal);
    counts = countLabels(listing.items, report.datasets);
  }
  container.append(countsTable(counts));
}

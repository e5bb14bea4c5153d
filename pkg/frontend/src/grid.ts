/** Paged prototype grid with specificity/token-kind filters and sorting. */

import type { ApiClient, GridFilters, Manifest, PrototypeStats } from "./api.js";
import { clear, el, labelBadge, proportionBar } from "./dom.js";
import type { Route } from "./state.js";

const PAGE_SIZE = 50;

function filterControls(
  manifest: Manifest,
  filters: GridFilters,
  navigate: (route: Route) => void,
): HTMLElement {
  const labelSelect = el("select", { "data-testid": "filter-label" });
  labelSelect.append(el("option", { value: "" }, ["all labels"]));
  for (const d of manifest.datasets) {
    labelSelect.append(el("option", { value: `specific-to:${d.dataset_id}` },
      [`specific-to:${d.dataset_id}`]));
  }
  for (const value of ["shared", "insufficient-data", "unused"]) {
    labelSelect.append(el("option", { value }, [value]));
  }
  labelSelect.value = filters.label ?? "";

  const kindSelect = el("select", { "data-testid": "filter-token-kind" });
  for (const value of ["any", "class", "patch"]) {
    kindSelect.append(el("option", { value }, [`${value} tokens`]));
  }
  kindSelect.value = filters.token_kind ?? "any";

  const sortSelect = el("select", { "data-testid": "filter-sort" });
  for (const value of ["occurrences", "class_proportion", "specificity"]) {
    sortSelect.append(el("option", { value }, [`sort: ${value}`]));
  }
  sortSelect.value = filters.sort ?? "occurrences";

  const apply = () => {
    const next: GridFilters = { ...filters, offset: undefined };
    next.label = labelSelect.value || undefined;
    next.token_kind = kindSelect.value === "any" ? undefined : kindSelect.value;
    next.sort = sortSelect.value;
    navigate({ view: "grid", filters: next });
  };
  labelSelect.addEventListener("change", apply);
  kindSelect.addEventListener("change", apply);
  sortSelect.addEventListener("change", apply);

  return el("div", { class: "controls" }, [labelSelect, kindSelect, sortSelect]);
}

function gridCell(stats: PrototypeStats, navigate: (route: Route) => void): HTMLElement {
  const cell = el("article", {
    class: "cell",
    "data-testid": "grid-cell",
    "data-prototype-id": String(stats.prototype_id),
  });
  if (stats.thumbnail) {
    const img = el("img", {
      src: stats.thumbnail.image_url,
      alt: `prototype ${stats.prototype_id} exemplar`,
      class: "thumb",
    });
    cell.append(img);
  } else {
    cell.append(el("div", { class: "thumb empty" }, ["no occurrences"]));
  }
  cell.append(el("h3", {}, [`prototype ${stats.prototype_id}`]));
  cell.append(labelBadge(stats.label));
  cell.append(proportionBar(stats.proportions));
  cell.append(el("p", { class: "total", "data-testid": "total-occurrences" },
    [`${stats.total_occurrences} occurrences`]));
  cell.addEventListener("click", () => navigate({ view: "prototype", id: stats.prototype_id }));
  return cell;
}

export async function renderGrid(
  container: HTMLElement,
  api: ApiClient,
  filters: GridFilters,
  navigate: (route: Route) => void,
  signal?: AbortSignal,
): Promise<void> {
  const [manifest, listing] = await Promise.all([
    api.getManifest(signal),
    api.getPrototypes(filters, signal),
  ]);
  clear(container);
  container.append(el("h1", {}, ["Prototype browser"]));
  container.append(filterControls(manifest, filters, navigate));

  if (listing.total === 0) {
    container.append(el("p", { class: "empty-state", "data-testid": "empty-state" },
      ["No prototypes match the current filters."]));
    return;
  }

  const grid = el("div", { class: "grid", "data-testid": "grid" });
  for (const stats of listing.items) {
    grid.append(gridCell(stats, navigate));
  }
  container.append(grid);

  const offset = filters.offset ?? 0;
  const limit = filters.limit ?? PAGE_SIZE;
  const pager = el("div", { class: "pager" });
  const prev = el("button", { "data-testid": "page-prev" }, ["previous"]);
  const next = el("button", { "data-testid": "page-next" }, ["next"]);
  (prev as HTMLButtonElement).disabled = offset <= 0;
  (next as HTMLButtonElement).disabled = offset + limit >= listing.total;
  prev.addEventListener("click", () => navigate({
    view: "grid",
    filters: { ...filters, offset: Math.max(0, offset - limit), limit },
  }));
  next.addEventListener("click", () => navigate({
    view: "grid",
    filters: { ...filters, offset: offset + limit, limit },
  }));
  pager.append(prev,
    el("span", {}, [`${offset + 1}-${Math.min(offset + limit, listing.total)} of ${listing.total}`]),
    next);
  container.append(pager);
}

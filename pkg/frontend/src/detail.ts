/** Per-prototype page: side-by-side dataset galleries with attention toggles. */

import type { ApiClient, ExampleItem, PrototypeStats } from "./api.js";
import { clear, el, labelBadge, proportionBar } from "./dom.js";
import type { Route } from "./state.js";

function classPatchGauge(classProportion: number | null): HTMLElement {
  const gauge = el("div", { class: "gauge", "data-testid": "class-gauge" });
  const share = classProportion ?? 0;
  const fill = el("div", { class: "gauge-fill" });
  fill.style.width = `${share * 100}%`;
  gauge.append(fill);
  gauge.append(el("span", {}, [
    classProportion === null
      ? "never assigned"
      : `${(share * 100).toFixed(1)}% class token`,
  ]));
  gauge.dataset.classProportion = String(classProportion);
  return gauge;
}

function exampleFigure(item: ExampleItem): HTMLElement {
  const img = el("img", {
    src: item.image_url,
    alt: item.image_id,
    class: "example",
    "data-testid": "example-image",
  }) as HTMLImageElement;
  img.dataset.imageUrl = item.image_url;
  img.dataset.attentionUrl = item.attention_url;
  img.dataset.overlay = "off";
  // click toggles between the raw image and its attention overlay
  img.addEventListener("click", () => {
    const showOverlay = img.dataset.overlay !== "on";
    img.dataset.overlay = showOverlay ? "on" : "off";
    img.src = showOverlay ? item.attention_url : item.image_url;
    img.classList.toggle("overlay-on", showOverlay);
  });
  const caption = el("figcaption", {}, [`${item.image_id} (${item.count})`]);
  return el("figure", {}, [img, caption]);
}

export async function renderDetail(
  container: HTMLElement,
  api: ApiClient,
  prototypeId: number,
  navigate: (route: Route) => void,
  signal?: AbortSignal,
): Promise<void> {
  const [manifest, stats] = await Promise.all([
    api.getManifest(signal),
    api.getPrototype(prototypeId, undefined, signal),
  ]);
  const galleries = await Promise.all(manifest.datasets.map((d) =>
    api.getExamples(prototypeId, { dataset: d.dataset_id, k: 12 }, signal)));

  clear(container);
  const back = el("a", { href: "#/grid", "data-testid": "back-link" }, ["← all prototypes"]);
  container.append(back);
  container.append(el("h1", {}, [`Prototype ${prototypeId}`]));
  const header = el("div", { class: "detail-header" });
  header.append(labelBadge(stats.label));
  header.append(el("span", { "data-testid": "total-occurrences" },
    [`${stats.total_occurrences} occurrences`]));
  header.append(classPatchGauge(stats.class_proportion));
  header.append(proportionBar(stats.proportions));
  container.append(header);

  const columns = el("div", { class: "galleries", "data-testid": "galleries" });
  manifest.datasets.forEach((dataset, i) => {
    const column = el("section", {
      class: "gallery-column",
      "data-testid": "gallery",
      "data-dataset": dataset.dataset_id,
    });
    column.append(el("h2", {}, [
      `${dataset.dataset_id} (${stats.counts[dataset.dataset_id] ?? 0} occurrences)`,
    ]));
    const items = galleries[i].items;
    if (items.length === 0) {
      column.append(el("p", { class: "empty-state" }, ["no examples in this dataset"]));
    }
    for (const item of items) {
      column.append(exampleFigure(item));
    }
    columns.append(column);
  });
  container.append(columns);

  const neighbors = stats.top_cooccurring ?? [];
  if (neighbors.length > 0) {
    const list = el("p", { class: "neighbors", "data-testid": "neighbors" },
      ["co-occurring prototypes: "]);
    for (const [other, count] of neighbors) {
      const link = el("a", {
        href: `#/prototype/${other}`,
        "data-testid": "neighbor-link",
      }, [`#${other} (${count})`]);
      link.addEventListener("click", (event) => {
        event.preventDefault();
        navigate({ view: "prototype", id: other });
      });
      list.append(link, " ");
    }
    container.append(list);
  }
}

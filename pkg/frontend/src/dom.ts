/** Small DOM construction helpers shared by the views. */

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "class") node.className = value;
    else node.setAttribute(key, value);
  }
  for (const child of children) {
    node.append(child);
  }
  return node;
}

export function clear(container: HTMLElement): void {
  while (container.firstChild) container.removeChild(container.firstChild);
}

export function labelBadge(label: string | null): HTMLElement {
  const text = label ?? "n/a";
  const kind = text.startsWith("specific-to:") ? `specific ${text.split(":", 2)[1]}` : text;
  const badge = el("span", { class: "badge", "data-testid": "label-badge" }, [text]);
  badge.dataset.kind = kind;
  return badge;
}

/** Horizontal stacked bar of per-dataset occurrence proportions. */
export function proportionBar(proportions: Record<string, number>): HTMLElement {
  const bar = el("div", { class: "proportion-bar", "data-testid": "proportion-bar" });
  for (const dataset of Object.keys(proportions).sort()) {
    const share = proportions[dataset];
    const segment = el("div", {
      class: "proportion-segment",
      title: `${dataset}: ${(share * 100).toFixed(1)}%`,
    });
    segment.style.width = `${share * 100}%`;
    segment.dataset.dataset = dataset;
    segment.dataset.share = share.toFixed(6);
    bar.append(segment);
  }
  return bar;
}

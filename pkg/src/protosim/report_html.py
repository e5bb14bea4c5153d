"""Static HTML gallery for a comparison report."""

import html
from pathlib import Path

_PAGE = """<!doctype html>
<html><head><meta charset="utf-8"><title>{title}</title>
<style>
body {{ font-family: sans-serif; margin: 2em; color: #222; }}
table {{ border-collapse: collapse; }}
td, th {{ border: 1px solid #ccc; padding: 4px 8px; text-align: left; }}
.bar {{ display: inline-block; height: 10px; background: #4a7; }}
.gallery img {{ height: 96px; margin: 2px; image-rendering: pixelated; }}
.label {{ padding: 2px 6px; border-radius: 4px; background: #eee; }}
</style></head><body>
{body}
</body></html>
"""


def _image_tag(roots: dict, dataset_id: str, image_id: str) -> str:
    root = roots.get(dataset_id)
    if root is None:
        return f"<span>{html.escape(image_id)}</span>"
    src = (Path(root) / image_id).resolve().as_uri()
    return f'<img src="{src}" title="{html.escape(dataset_id + "/" + image_id)}">'


def write_html_report(report, out_dir: Path, dataset_roots: dict | None = None) -> Path:
    """report.html plus one page per used prototype under prototypes/."""
    out_dir = Path(out_dir)
    (out_dir / "prototypes").mkdir(parents=True, exist_ok=True)
    roots = dataset_roots or {}

    rows = []
    for entry in report.prototypes:
        if entry["total_occurrences"] == 0:
            continue
        pid = entry["prototype_id"]
        label = entry["label"] or "n/a"
        props = " ".join(
            f"{ds}:{p:.2f}" for ds, p in sorted(entry["proportions"].items()))
        class_prop = entry["class_proportion"]
        rows.append(
            f'<tr><td><a href="prototypes/p{pid:05d}.html">{pid}</a></td>'
            f'<td><span class="label">{html.escape(label)}</span></td>'
            f'<td>{entry["total_occurrences"]}</td>'
            f'<td>{"" if class_prop is None else f"{class_prop:.2f}"}</td>'
            f"<td>{html.escape(props)}</td></tr>"
        )
        body = [f"<h1>Prototype {pid}</h1>",
                f'<p>label: <span class="label">{html.escape(label)}</span>, '
                f'occurrences: {entry["total_occurrences"]}, '
                f'class proportion: {"" if class_prop is None else f"{class_prop:.3f}"}</p>']
        for ds in report.datasets:
            examples = entry["examples"].get(ds, [])
            body.append(f"<h2>{html.escape(ds)} ({entry['counts'].get(ds, 0)} occurrences)</h2>")
            body.append('<div class="gallery">'
                        + "".join(_image_tag(roots, ds, i) for i in examples)
                        + "</div>")
        neighbors = ", ".join(str(q) for q, _ in entry.get("top_cooccurring", []))
        if neighbors:
            body.append(f"<p>co-occurring prototypes: {neighbors}</p>")
        body.append('<p><a href="../report.html">back to overview</a></p>')
        (out_dir / "prototypes" / f"p{pid:05d}.html").write_text(
            _PAGE.format(title=f"prototype {pid}", body="\n".join(body)))

    counts = "".join(f"<li>{html.escape(str(k))}: {v}</li>" for k, v in report.counts.items())
    summary = [
        "<h1>Prototype comparison report</h1>",
        f"<p>mode: {report.mode}, datasets: {', '.join(report.datasets)}, "
        f"prototypes: {report.num_prototypes}, "
        f"specificity threshold: {report.threshold}, "
        f"mean pairwise cosine similarity: {report.diversity:.4f}</p>",
        f"<ul>{counts}</ul>",
        "<table><tr><th>prototype</th><th>label</th><th>occurrences</th>"
        "<th>class prop.</th><th>per-dataset proportions</th></tr>",
        *rows,
        "</table>",
    ]
    out = out_dir / "report.html"
    out.write_text(_PAGE.format(title="prototype comparison report", body="\n".join(summary)))
    return out

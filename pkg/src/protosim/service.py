"""Read-only HTTP API over a trained checkpoint, index, and report.

The service refuses to start when the index manifest's checkpoint hash does
not match the checkpoint file. All artifacts are immutable; attention
overlays are rendered lazily and cached on disk keyed by checkpoint hash,
image, and prototype (atomic create-if-absent), so identical queries return
identical responses across requests and restarts.
"""

import json
import mimetypes
import os
import tempfile
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles

from .analytics import ComparisonReport, label_from_proportions
from .checkpoint import load_checkpoint, sha256_file
from .data import load_image
from .indexing import INDEX_FORMAT, load_index, verify_index_matches_checkpoint
from .viz import attention_map, render_overlay

CACHE_ENV = "PROTOSIM_CACHE_DIR"

_SORTS = {
    "occurrences": lambda e: (-e["total_occurrences"], e["prototype_id"]),
    "class_proportion": lambda e: (-(e["class_proportion"] if e["class_proportion"]
                                     is not None else -1.0), e["prototype_id"]),
    "specificity": lambda e: (-(max(e["proportions"].values()) if e["proportions"]
                                else 0.0), e["prototype_id"]),
}


def _resolve_cache_dir(cache_dir, index_dir: Path) -> Path:
    if cache_dir:
        return Path(cache_dir)
    if os.environ.get(CACHE_ENV):
        return Path(os.environ[CACHE_ENV])
    return Path(index_dir) / ".overlay-cache"


def create_app(index_dir: Path, checkpoint_path: Path, report_path: Path,
               cache_dir: Path | None = None, ui_dir: Path | None = None) -> FastAPI:
    index = load_index(index_dir)
    verify_index_matches_checkpoint(index, checkpoint_path)
    bundle = load_checkpoint(checkpoint_path)
    report = ComparisonReport.from_json(json.loads(Path(report_path).read_text()))
    checkpoint_hash = sha256_file(checkpoint_path)
    cache = _resolve_cache_dir(cache_dir, index_dir)
    roots = {d.dataset_id: Path(d.root) for d in index.datasets}

    app = FastAPI(title="prototype inspection service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["GET"],
                       allow_headers=["*"])

    stats_by_id = {entry["prototype_id"]: entry for entry in report.prototypes}

    def relabeled(entry: dict, threshold: float | None) -> dict:
        if threshold is None or report.mode != "comparison":
            return entry
        out = dict(entry)
        out["label"] = label_from_proportions(
            entry["proportions"], entry["total_occurrences"], threshold,
            report.min_occurrences)
        return out

    @app.get("/api/manifest")
    def manifest():
        return {
            "datasets": [{"dataset_id": d["dataset_id"], "name": d["name"]}
                         for d in (d.to_json() for d in index.datasets)],
            "num_prototypes": index.num_prototypes,
            "num_patches": index.num_patches,
            "threshold": report.threshold,
            "min_occurrences": report.min_occurrences,
            "mode": report.mode,
            "formats": {"index": INDEX_FORMAT, "report": report.to_json()["format"],
                        "checkpoint": "protosim-ckpt-v1"},
        }

    @app.get("/api/prototypes")
    def prototypes(label: str | None = None,
                   token_kind: str = Query("any"),
                   min_occurrences: int = Query(0, ge=0),
                   sort: str = Query("occurrences"),
                   offset: int = Query(0, ge=0),
                   limit: int = Query(50, ge=1, le=1000),
                   threshold: float | None = Query(None, ge=0.0, le=1.0)):
        if sort not in _SORTS:
            raise HTTPException(400, f"unknown sort {sort!r}")
        if token_kind not in ("any", "class", "patch"):
            raise HTTPException(400, f"unknown token_kind {token_kind!r}")
        items = [relabeled(e, threshold) for e in report.prototypes]
        if label is not None:
            items = [e for e in items if e["label"] == label]
        if token_kind == "class":
            items = [e for e in items if (e["class_proportion"] or 0.0) > 0.5]
        elif token_kind == "patch":
            items = [e for e in items
                     if e["class_proportion"] is not None and e["class_proportion"] <= 0.5]
        if min_occurrences:
            items = [e for e in items if e["total_occurrences"] >= min_occurrences]
        items.sort(key=_SORTS[sort])
        page = items[offset:offset + limit]
        slim = []
        for e in page:
            entry = {k: v for k, v in e.items() if k != "examples"}
            entry["thumbnail"] = _thumbnail(e)
            slim.append(entry)
        return {"total": len(items), "offset": offset, "limit": limit, "items": slim}

    def _thumbnail(entry: dict) -> dict | None:
        # first exemplar in dataset order; galleries rank within-dataset by count
        for ds in report.datasets:
            examples = entry.get("examples", {}).get(ds) or []
            if examples:
                return {"dataset_id": ds, "image_id": examples[0],
                        "image_url": f"/api/images/{ds}/{examples[0]}"}
        return None

    @app.get("/api/prototypes/{prototype_id}")
    def prototype_detail(prototype_id: int,
                         threshold: float | None = Query(None, ge=0.0, le=1.0)):
        entry = stats_by_id.get(prototype_id)
        if entry is None:
            raise HTTPException(404, f"no prototype {prototype_id}")
        return relabeled(entry, threshold)

    @app.get("/api/prototypes/{prototype_id}/examples")
    def prototype_examples(prototype_id: int, dataset: str | None = None,
                           k: int = Query(12, ge=1, le=200),
                           rank: str = Query("count")):
        if rank not in ("count", "affinity"):
            raise HTTPException(400, f"rank must be count|affinity, got {rank!r}")
        if dataset is not None and dataset not in index.dataset_ids:
            raise HTTPException(404, f"unknown dataset {dataset!r}")
        try:
            postings = index.query(prototype_id, dataset=dataset, rank=rank, limit=k)
        except ValueError as exc:
            raise HTTPException(404, str(exc))
        items = []
        for posting in postings:
            obj = posting.to_json()
            obj["image_url"] = f"/api/images/{posting.dataset_id}/{posting.image_id}"
            obj["attention_url"] = (f"/api/prototypes/{prototype_id}/attention/"
                                    f"{posting.image_id}?dataset={posting.dataset_id}")
            items.append(obj)
        return {"prototype_id": prototype_id, "rank": rank, "items": items}

    def _locate_image(image_id: str, dataset: str | None) -> tuple[str, Path]:
        candidates = []
        for ds_id, root in roots.items():
            if dataset is not None and ds_id != dataset:
                continue
            path = root / image_id
            if path.is_file():
                candidates.append((ds_id, path))
        if not candidates:
            raise HTTPException(404, f"image {image_id!r} not found")
        if len(candidates) > 1:
            raise HTTPException(400, f"image {image_id!r} exists in several datasets; "
                                     "pass ?dataset=")
        return candidates[0]

    @app.get("/api/prototypes/{prototype_id}/attention/{image_id:path}")
    def attention(prototype_id: int, image_id: str, dataset: str | None = None):
        if not 0 <= prototype_id < index.num_prototypes:
            raise HTTPException(404, f"no prototype {prototype_id}")
        ds_id, path = _locate_image(image_id, dataset)
        safe_name = image_id.replace("/", "__")
        cached = cache / f"{checkpoint_hash[:16]}_{ds_id}_{safe_name}_p{prototype_id}.png"
        if not cached.is_file():
            grid = attention_map(bundle, load_image(path), prototype_id)
            cache.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=cache, suffix=".png")
            os.close(fd)
            render_overlay(load_image(path), grid, Path(tmp))
            os.replace(tmp, cached)  # atomic create-if-absent
        return Response(cached.read_bytes(), media_type="image/png")

    @app.get("/api/images/{dataset}/{image_id:path}")
    def image_bytes(dataset: str, image_id: str):
        if dataset not in roots:
            raise HTTPException(404, f"unknown dataset {dataset!r}")
        path = roots[dataset] / image_id
        if not path.is_file():
            raise HTTPException(404, f"image {image_id!r} not found in {dataset!r}")
        media = mimetypes.guess_type(image_id)[0] or "application/octet-stream"
        return Response(path.read_bytes(), media_type=media)

    @app.get("/api/report")
    def report_json():
        return report.to_json()

    if ui_dir is not None:
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def serve(index_dir: Path, checkpoint_path: Path, report_path: Path,
          bind: str = "127.0.0.1:8000", cache_dir: Path | None = None,
          ui_dir: Path | None = None) -> None:
    import uvicorn

    app = create_app(index_dir, checkpoint_path, report_path, cache_dir, ui_dir)
    host, _, port = bind.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000))

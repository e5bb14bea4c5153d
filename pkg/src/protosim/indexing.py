"""Noise-free assignment records and the inverted prototype occurrence index.

Indexing runs pure argmax assignment (no gumbel noise) so indexes are
reproducible. Full per-patch assignments are stored, not just histograms,
so downstream analysis can replay without re-running the model. Token
position 0 is the class token; positions 1..N are the patch grid, row-major.
"""

import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointBundle, load_checkpoint, sha256_file
from .data import DatasetDescriptor, list_images, load_image
from .layer import compute_logits

INDEX_FORMAT = "protosim-index-v1"
TOKEN_ANY = "any"
TOKEN_CLASS = "class"
TOKEN_PATCH = "patch"

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    dataset_id: str
    class_prototype: int
    patch_prototypes: tuple[int, ...]
    top_affinities: tuple[tuple[int, float], ...] = ()

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "dataset_id": self.dataset_id,
            "class_prototype": self.class_prototype,
            "patch_prototypes": list(self.patch_prototypes),
            "top_affinities": [[p, a] for p, a in self.top_affinities],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ImageRecord":
        return cls(
            image_id=obj["image_id"],
            dataset_id=obj["dataset_id"],
            class_prototype=obj["class_prototype"],
            patch_prototypes=tuple(obj["patch_prototypes"]),
            top_affinities=tuple((int(p), float(a)) for p, a in obj.get("top_affinities", [])),
        )


@dataclass(frozen=True)
class Posting:
    image_id: str
    dataset_id: str
    positions: tuple[int, ...]
    affinity: float | None = None

    @property
    def count(self) -> int:
        return len(self.positions)

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "dataset_id": self.dataset_id,
            "positions": list(self.positions),
            "count": self.count,
            "affinity": self.affinity,
        }


def _record_from_assignment(image_id, dataset_id, assigned, logits) -> ImageRecord:
    """assigned: (T,) prototype per token; logits: (K, T) raw affinities."""
    affinities = []
    for proto in sorted(set(assigned.tolist())):
        positions = (assigned == proto).nonzero().flatten()
        affinities.append((int(proto), float(logits[proto, positions].max())))
    return ImageRecord(
        image_id=image_id,
        dataset_id=dataset_id,
        class_prototype=int(assigned[0]),
        patch_prototypes=tuple(int(p) for p in assigned[1:].tolist()),
        top_affinities=tuple(affinities),
    )


def index_dataset(checkpoint, dataset: DatasetDescriptor, batch_size: int = 64,
                  progress=None) -> list[ImageRecord]:
    """One record per readable image, deterministic hard assignments.

    Unreadable images are skipped with a warning; more than 10% skips aborts
    the run. `progress(done, total)` is called after each batch.
    """
    bundle = checkpoint if isinstance(checkpoint, CheckpointBundle) else load_checkpoint(checkpoint)
    image_ids = list_images(dataset.root)
    if not image_ids:
        raise ValueError(f"dataset {dataset.dataset_id!r} at {dataset.root} has no images")
    records: list[ImageRecord] = []
    skipped: list[str] = []
    done = 0
    for start in range(0, len(image_ids), batch_size):
        chunk = image_ids[start:start + batch_size]
        images, kept = [], []
        for image_id in chunk:
            try:
                images.append(load_image(Path(dataset.root) / image_id))
            except Exception as exc:
                skipped.append(image_id)
                logger.warning("skipping unreadable image %s/%s: %s",
                               dataset.dataset_id, image_id, exc)
                continue
            kept.append(image_id)
        if images:
            tokens = bundle.tokens(torch.stack(images))
            logits = compute_logits(bundle.bank, tokens)  # (B, K, T)
            assigned = logits.argmax(dim=1)  # (B, T)
            for image_id, row, lg in zip(kept, assigned, logits):
                records.append(_record_from_assignment(image_id, dataset.dataset_id, row, lg))
        done += len(chunk)
        if progress:
            progress(done, len(image_ids))
    if skipped and len(skipped) > 0.1 * len(image_ids):
        raise RuntimeError(f"{len(skipped)}/{len(image_ids)} images unreadable in "
                           f"dataset {dataset.dataset_id!r}; aborting")
    if skipped:
        logger.warning("skip report: %d/%d images skipped in %s",
                       len(skipped), len(image_ids), dataset.dataset_id)
    return records


class PrototypeIndex:
    """Inverted prototype -> occurrence map with per-dataset totals.

    Postings are normally derived from the records; `load_index` may instead
    feed them from the binary cache, which must reproduce identical results.
    """

    def __init__(self, num_prototypes: int, num_patches: int,
                 records: list[ImageRecord],
                 datasets: list[DatasetDescriptor] | None = None,
                 checkpoint_hash: str | None = None,
                 postings: list[dict] | None = None):
        self.num_prototypes = num_prototypes
        self.num_patches = num_patches
        self.datasets = datasets or []
        self.checkpoint_hash = checkpoint_hash
        self.records = sorted(records, key=lambda r: (r.dataset_id, r.image_id))
        self._validate()
        if postings is None:
            postings = [dict() for _ in range(num_prototypes)]
            for record in self.records:
                key = (record.dataset_id, record.image_id)
                postings[record.class_prototype].setdefault(key, []).append(0)
                for pos, proto in enumerate(record.patch_prototypes, start=1):
                    postings[proto].setdefault(key, []).append(pos)
        self._postings = postings
        self._affinity = {
            (r.dataset_id, r.image_id, proto): aff
            for r in self.records for proto, aff in r.top_affinities
        }

    def _validate(self):
        seen = set()
        for record in self.records:
            key = (record.image_id, record.dataset_id)
            if key in seen:
                raise ValueError(f"duplicate record for image {key}")
            seen.add(key)
            if len(record.patch_prototypes) != self.num_patches:
                raise ValueError(
                    f"record {key} has {len(record.patch_prototypes)} patch tokens, "
                    f"index expects {self.num_patches}")
            ids = (record.class_prototype, *record.patch_prototypes)
            if any(not 0 <= p < self.num_prototypes for p in ids):
                raise ValueError(f"record {key} holds prototype ids outside "
                                 f"[0, {self.num_prototypes})")

    @property
    def dataset_ids(self) -> list[str]:
        if self.datasets:
            return [d.dataset_id for d in self.datasets]
        return sorted({r.dataset_id for r in self.records})

    def occurrence_counts(self, prototype_id: int, token_filter: str = TOKEN_ANY
                          ) -> dict[str, int]:
        """Per-dataset occurrence totals for one prototype."""
        self._check_id(prototype_id)
        counts: dict[str, int] = {ds: 0 for ds in self.dataset_ids}
        for (dataset_id, _), positions in self._postings[prototype_id].items():
            counts[dataset_id] = counts.get(dataset_id, 0) + len(
                _filter_positions(positions, token_filter))
        return counts

    def total_occurrences(self, prototype_id: int, token_filter: str = TOKEN_ANY) -> int:
        return sum(self.occurrence_counts(prototype_id, token_filter).values())

    def class_patch_counts(self, prototype_id: int) -> tuple[int, int]:
        """(class-token occurrences, total occurrences)."""
        self._check_id(prototype_id)
        class_count = total = 0
        for positions in self._postings[prototype_id].values():
            class_count += sum(1 for p in positions if p == 0)
            total += len(positions)
        return class_count, total

    def query(self, prototype_id: int, dataset: str | None = None,
              token_filter: str = TOKEN_ANY, rank: str = "count",
              limit: int | None = None) -> list[Posting]:
        """Occurrence postings sorted by per-image count desc, ties by image id.

        rank="affinity" orders by the stored per-image max logit instead
        (images without a stored affinity rank last).
        """
        self._check_id(prototype_id)
        if token_filter not in (TOKEN_ANY, TOKEN_CLASS, TOKEN_PATCH):
            raise ValueError(f"token_filter must be any|class|patch, got {token_filter!r}")
        if rank not in ("count", "affinity"):
            raise ValueError(f"rank must be count|affinity, got {rank!r}")
        postings = []
        for (dataset_id, image_id), positions in self._postings[prototype_id].items():
            if dataset is not None and dataset_id != dataset:
                continue
            filtered = _filter_positions(positions, token_filter)
            if not filtered:
                continue
            postings.append(Posting(
                image_id=image_id,
                dataset_id=dataset_id,
                positions=tuple(sorted(filtered)),
                affinity=self._affinity.get((dataset_id, image_id, prototype_id)),
            ))
        if rank == "count":
            postings.sort(key=lambda p: (-p.count, p.image_id, p.dataset_id))
        else:
            postings.sort(key=lambda p: (-(p.affinity if p.affinity is not None
                                           else float("-inf")), p.image_id, p.dataset_id))
        return postings[:limit] if limit is not None else postings

    def _check_id(self, prototype_id: int) -> None:
        if not 0 <= prototype_id < self.num_prototypes:
            raise ValueError(f"prototype id {prototype_id} outside [0, {self.num_prototypes})")

    def records_for(self, dataset_id: str) -> list[ImageRecord]:
        return [r for r in self.records if r.dataset_id == dataset_id]

    @property
    def num_images(self) -> int:
        return len(self.records)


def build_index(records: list[ImageRecord], num_prototypes: int,
                num_patches: int | None = None,
                datasets: list[DatasetDescriptor] | None = None,
                checkpoint_hash: str | None = None) -> PrototypeIndex:
    if num_patches is None:
        if not records:
            raise ValueError("num_patches is required for an empty index")
        num_patches = len(records[0].patch_prototypes)
    return PrototypeIndex(num_prototypes, num_patches, records, datasets, checkpoint_hash)


def merge_indexes(shards: list[PrototypeIndex]) -> PrototypeIndex:
    """Combine shards; totals are invariant to merge order."""
    if not shards:
        raise ValueError("nothing to merge")
    first = shards[0]
    for shard in shards[1:]:
        if (shard.num_prototypes, shard.num_patches) != (first.num_prototypes,
                                                         first.num_patches):
            raise ValueError("shards disagree on prototype count or patch count")
    records = [r for shard in shards for r in shard.records]
    seen_ds: list[DatasetDescriptor] = []
    for shard in shards:
        for d in shard.datasets:
            if d.dataset_id not in [x.dataset_id for x in seen_ds]:
                seen_ds.append(d)
    datasets = sorted(seen_ds, key=lambda d: d.dataset_id) or None
    return PrototypeIndex(first.num_prototypes, first.num_patches, records, datasets,
                          first.checkpoint_hash)


def _filter_positions(positions, token_filter):
    if token_filter == TOKEN_ANY:
        return positions
    if token_filter == TOKEN_CLASS:
        return [p for p in positions if p == 0]
    return [p for p in positions if p > 0]


def _atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_index(index: PrototypeIndex, out_dir: Path) -> None:
    """Directory layout: manifest.json + records-<dataset>.jsonl + postings cache."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": INDEX_FORMAT,
        "num_prototypes": index.num_prototypes,
        "num_patches": index.num_patches,
        "datasets": [d.to_json() for d in index.datasets],
        "checkpoint_hash": index.checkpoint_hash,
    }
    _atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
    for dataset_id in index.dataset_ids:
        lines = [json.dumps(r.to_json(), sort_keys=True)
                 for r in index.records_for(dataset_id)]
        _atomic_write_text(out_dir / f"records-{dataset_id}.jsonl", "\n".join(lines) + "\n")
    write_postings_cache(index, out_dir / "postings.npz")


def write_postings_cache(index: PrototypeIndex, path: Path) -> None:
    """Flat occurrence table (prototype, image index, token position)."""
    images = sorted({(r.dataset_id, r.image_id) for r in index.records})
    image_lookup = {key: i for i, key in enumerate(images)}
    rows = []
    for record in index.records:
        img = image_lookup[(record.dataset_id, record.image_id)]
        rows.append((record.class_prototype, img, 0))
        for pos, proto in enumerate(record.patch_prototypes, start=1):
            rows.append((proto, img, pos))
    table = np.array(rows, dtype=np.int64) if rows else np.zeros((0, 3), dtype=np.int64)
    np.savez_compressed(
        path,
        occurrences=table,
        image_datasets=np.array([d for d, _ in images], dtype=np.str_),
        image_ids=np.array([i for _, i in images], dtype=np.str_),
    )


def _postings_from_cache(path: Path, num_prototypes: int) -> list[dict]:
    with np.load(path, allow_pickle=False) as blob:
        table = blob["occurrences"]
        keys = [(str(d), str(i)) for d, i in zip(blob["image_datasets"], blob["image_ids"])]
    postings: list[dict] = [dict() for _ in range(num_prototypes)]
    for proto, img, pos in table:
        postings[int(proto)].setdefault(keys[int(img)], []).append(int(pos))
    return postings


def load_index(index_dir: Path, use_cache: bool = True) -> PrototypeIndex:
    index_dir = Path(index_dir)
    manifest_path = index_dir / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no manifest.json under {index_dir}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != INDEX_FORMAT:
        raise ValueError(f"unsupported index format {manifest.get('format')!r}")
    datasets = []
    for obj in manifest["datasets"]:
        try:
            datasets.append(DatasetDescriptor.from_json(obj))
        except ValueError:
            logger.warning("dataset root for %s is not readable; image serving disabled",
                           obj.get("dataset_id"))
    records = []
    for records_file in sorted(index_dir.glob("records-*.jsonl")):
        for line in records_file.read_text().splitlines():
            if line.strip():
                records.append(ImageRecord.from_json(json.loads(line)))
    cache = index_dir / "postings.npz"
    postings = None
    if use_cache:
        if not cache.is_file():
            pass  # rebuilt below once the index exists
        else:
            postings = _postings_from_cache(cache, manifest["num_prototypes"])
    index = PrototypeIndex(manifest["num_prototypes"], manifest["num_patches"], records,
                           datasets or None, manifest.get("checkpoint_hash"),
                           postings=postings)
    if use_cache and not cache.is_file():
        write_postings_cache(index, cache)  # rebuilt on demand
    return index


def verify_index_matches_checkpoint(index: PrototypeIndex, checkpoint_path: Path) -> None:
    actual = sha256_file(checkpoint_path)
    if index.checkpoint_hash and index.checkpoint_hash != actual:
        raise ValueError(
            f"index was built from checkpoint {index.checkpoint_hash[:12]}..., but "
            f"{checkpoint_path} hashes to {actual[:12]}...")

"""Quantitative dataset-comparison statistics over an assignment index.

A prototype is dataset-specific when strictly more than `threshold` of its
occurrences fall in a single dataset (default 0.95); otherwise it is shared.
Prototypes below `min_occurrences` are labeled insufficient-data instead,
and never-assigned prototypes are counted as unused.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

SPECIFICITY_THRESHOLD = 0.95
MIN_OCCURRENCES = 10

LABEL_SHARED = "shared"
LABEL_INSUFFICIENT = "insufficient-data"
LABEL_UNUSED = "unused"
REPORT_FORMAT = "protosim-report-v1"

# the exact between-token correlation statistic is a modeling choice; it is
# recorded in report metadata so downstream consumers can tell which was used
CENTRE_BIAS_STATISTIC = "stacked-onehot-phi"


@dataclass(frozen=True)
class PrototypeStats:
    prototype_id: int
    counts: dict
    proportions: dict
    label: str | None
    class_proportion: float | None
    total_occurrences: int

    def to_json(self) -> dict:
        return {
            "prototype_id": self.prototype_id,
            "counts": dict(self.counts),
            "proportions": dict(self.proportions),
            "label": self.label,
            "class_proportion": self.class_proportion,
            "total_occurrences": self.total_occurrences,
        }


def label_from_proportions(proportions: dict, total: int,
                           threshold: float = SPECIFICITY_THRESHOLD,
                           min_occurrences: int = MIN_OCCURRENCES) -> str:
    if total == 0:
        return LABEL_UNUSED
    if total < min_occurrences:
        return LABEL_INSUFFICIENT
    top_dataset = max(sorted(proportions), key=lambda ds: proportions[ds])
    if proportions[top_dataset] > threshold:  # strictly above: 95/100 is shared
        return f"specific-to:{top_dataset}"
    return LABEL_SHARED


def specificity(index, prototype_id: int, threshold: float = SPECIFICITY_THRESHOLD,
                min_occurrences: int = MIN_OCCURRENCES,
                token_filter: str = "any") -> PrototypeStats:
    """Per-dataset occurrence proportions and the specificity label.

    Both class-token and patch occurrences count by default; pass
    token_filter="class"/"patch" for the filtered variants.
    """
    counts = index.occurrence_counts(prototype_id, token_filter=token_filter)
    total = sum(counts.values())
    proportions = {ds: (c / total if total else 0.0) for ds, c in counts.items()}
    class_count, any_total = index.class_patch_counts(prototype_id)
    return PrototypeStats(
        prototype_id=prototype_id,
        counts=counts,
        proportions=proportions,
        label=label_from_proportions(proportions, total, threshold, min_occurrences),
        class_proportion=(class_count / any_total) if any_total else None,
        total_occurrences=total,
    )


def prototype_diversity(weights) -> float:
    """Mean cosine similarity over all unordered prototype pairs.

    Reported as similarity (distance is 1 - similarity); zero-norm rows are
    excluded with a warning since their direction is undefined.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] < 2:
        raise ValueError("diversity needs a (K, D) bank with K >= 2")
    norms = np.linalg.norm(w, axis=1)
    nonzero = norms > 0
    if not nonzero.all():
        warnings.warn(f"excluding {int((~nonzero).sum())} zero-norm prototype rows "
                      "from diversity", stacklevel=2)
        w, norms = w[nonzero], norms[nonzero]
        if w.shape[0] < 2:
            raise ValueError("fewer than 2 nonzero prototype rows")
    unit = w / norms[:, None]
    k = unit.shape[0]
    total = unit.sum(axis=0)
    pair_sum = float(total @ total) - k  # sum over i != j of cos(i, j)
    return pair_sum / (k * (k - 1))


def class_patch_proportion(index, prototype_id: int) -> float | None:
    """Share of a prototype's occurrences on the class token; None when unused."""
    class_count, total = index.class_patch_counts(prototype_id)
    if total == 0:
        return None
    return class_count / total


@dataclass(frozen=True)
class CentreBiasMap:
    grid_side: int
    selected_positions: tuple[int, ...]
    correlations: np.ndarray  # (grid_side, grid_side), values in [-1, 1]

    def to_json(self) -> dict:
        return {
            "grid_side": self.grid_side,
            "selected_positions": list(self.selected_positions),
            "statistic": CENTRE_BIAS_STATISTIC,
            "correlations": self.correlations.tolist(),
        }


def centre_bias_map(records, selected_positions, num_prototypes: int) -> CentreBiasMap:
    """Between-token assignment correlation against a set of selected positions.

    For positions s and q the statistic is the Pearson correlation of the
    stacked per-image one-hot assignment indicators, which reduces to
    (P[assign(s) = assign(q)] - 1/K) / (1 - 1/K): 1 for always co-assigned
    positions, ~0 for independent uniform assignments, and exactly 1 for a
    position against itself. Positions are patch-grid indices (class token
    excluded); the map averages over the selected set.
    """
    if len(records) < 2:
        raise ValueError("centre-bias correlation needs at least 2 images")
    n = len(records[0].patch_prototypes)
    side = int(round(n ** 0.5))
    if side * side != n:
        raise ValueError(f"patch count {n} is not a square grid")
    assigns = np.array([r.patch_prototypes for r in records], dtype=np.int64)
    if assigns.shape != (len(records), n):
        raise ValueError("records disagree on patch count")
    selected = tuple(sorted(set(int(p) for p in selected_positions)))
    if not selected:
        raise ValueError("at least one selected position is required")
    if any(not 0 <= p < n for p in selected):
        raise ValueError(f"selected positions must be patch indices in [0, {n})")
    k = num_prototypes
    chance = 1.0 / k
    grid = np.zeros(n, dtype=np.float64)
    for s in selected:
        agree = (assigns == assigns[:, s][:, None]).mean(axis=0)  # P[assign(q)=assign(s)]
        grid += (agree - chance) / (1.0 - chance)
    grid /= len(selected)
    return CentreBiasMap(side, selected, grid.reshape(side, side))


@dataclass(frozen=True)
class AlignmentReport:
    dataset_id: str
    aligned_classes: int
    total_classes: int
    class_to_prototype: dict
    prototype_to_class: dict
    class_prototype_counts: dict
    unlabeled_images: tuple[str, ...]
    unmatched_labels: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "aligned_classes": self.aligned_classes,
            "total_classes": self.total_classes,
            "class_to_prototype": dict(self.class_to_prototype),
            "prototype_to_class": {str(k): v for k, v in self.prototype_to_class.items()},
            "class_prototype_counts": {
                c: {str(p): n for p, n in table.items()}
                for c, table in self.class_prototype_counts.items()
            },
            "unlabeled_images": list(self.unlabeled_images),
            "unmatched_labels": list(self.unmatched_labels),
        }


def semantic_alignment(index, labels: dict, dataset_id: str) -> AlignmentReport:
    """Class <-> class-token-prototype agreement for one labeled dataset.

    m(c) is the most frequent prototype among class c's images and g(p) the
    most frequent class among prototype p's images; a class is aligned when
    g(m(c)) = c. Ties break to the lowest prototype id / first class name.
    """
    records = index.records_for(dataset_id)
    if not records:
        raise ValueError(f"index holds no records for dataset {dataset_id!r}")
    indexed_ids = {r.image_id for r in records}
    unlabeled = tuple(sorted(indexed_ids - set(labels)))
    unmatched = tuple(sorted(set(labels) - indexed_ids))
    mismatches = len(unlabeled) + len(unmatched)
    if mismatches > 0.1 * max(len(indexed_ids), len(labels)):
        raise ValueError(f"{mismatches} label/image id mismatches for dataset "
                         f"{dataset_id!r} (more than 10%); aborting")

    table: dict = {}
    proto_class: dict = {}
    for record in records:
        label = labels.get(record.image_id)
        if label is None:
            continue
        proto = record.class_prototype
        table.setdefault(label, {}).setdefault(proto, 0)
        table[label][proto] += 1
        proto_class.setdefault(proto, {}).setdefault(label, 0)
        proto_class[proto][label] += 1

    class_to_prototype = {
        c: min(protos, key=lambda p: (-protos[p], p)) for c, protos in table.items()
    }
    prototype_to_class = {
        p: min(classes, key=lambda c: (-classes[c], c)) for p, classes in proto_class.items()
    }
    aligned = sum(1 for c, m in class_to_prototype.items()
                  if prototype_to_class.get(m) == c)
    return AlignmentReport(
        dataset_id=dataset_id,
        aligned_classes=aligned,
        total_classes=len(table),
        class_to_prototype=class_to_prototype,
        prototype_to_class=prototype_to_class,
        class_prototype_counts=table,
        unlabeled_images=unlabeled,
        unmatched_labels=unmatched,
    )


def top_cooccurring(index, limit: int = 5) -> dict:
    """Per prototype, the prototypes most often assigned in the same images."""
    counters: dict = {}
    for record in index.records:
        present = sorted({record.class_prototype, *record.patch_prototypes})
        for p in present:
            bucket = counters.setdefault(p, {})
            for q in present:
                if q != p:
                    bucket[q] = bucket.get(q, 0) + 1
    return {
        p: sorted(bucket.items(), key=lambda t: (-t[1], t[0]))[:limit]
        for p, bucket in counters.items()
    }


@dataclass
class ComparisonReport:
    mode: str  # "comparison" | "summarisation"
    datasets: list
    num_prototypes: int
    threshold: float
    min_occurrences: int
    diversity: float
    counts: dict
    prototypes: list  # per-prototype stat dicts
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "mode": self.mode,
            "datasets": list(self.datasets),
            "num_prototypes": self.num_prototypes,
            "threshold": self.threshold,
            "min_occurrences": self.min_occurrences,
            "diversity": self.diversity,
            "counts": self.counts,
            "prototypes": self.prototypes,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ComparisonReport":
        if obj.get("format") != REPORT_FORMAT:
            raise ValueError(f"unsupported report format {obj.get('format')!r}")
        return cls(
            mode=obj["mode"],
            datasets=obj["datasets"],
            num_prototypes=obj["num_prototypes"],
            threshold=obj["threshold"],
            min_occurrences=obj["min_occurrences"],
            diversity=obj["diversity"],
            counts=obj["counts"],
            prototypes=obj["prototypes"],
            metadata=obj.get("metadata", {}),
        )


def compare_report(index, bank_weights, threshold: float = SPECIFICITY_THRESHOLD,
                   min_occurrences: int = MIN_OCCURRENCES,
                   examples_per_dataset: int = 12) -> ComparisonReport:
    """Aggregate stats for every prototype plus summary counts and exemplars.

    With fewer than two datasets the report degrades to summarisation mode:
    specificity labels are omitted since there is nothing to compare against.
    """
    dataset_ids = index.dataset_ids
    comparison = len(dataset_ids) >= 2
    neighbors = top_cooccurring(index)
    diversity = prototype_diversity(np.asarray(bank_weights))

    prototypes = []
    counts = {"specific": {ds: 0 for ds in dataset_ids}, "shared": 0,
              "insufficient-data": 0, "unused": 0}
    for proto in range(index.num_prototypes):
        stats = specificity(index, proto, threshold, min_occurrences)
        entry = stats.to_json()
        if not comparison:
            entry["label"] = None
        entry["top_cooccurring"] = [[q, n] for q, n in neighbors.get(proto, [])]
        entry["examples"] = {
            ds: [p.image_id for p in index.query(proto, dataset=ds,
                                                 limit=examples_per_dataset)]
            for ds in dataset_ids
        }
        prototypes.append(entry)
        label = entry["label"]
        if label is None:
            if stats.total_occurrences == 0:
                counts["unused"] += 1
        elif label == LABEL_UNUSED:
            counts["unused"] += 1
        elif label == LABEL_INSUFFICIENT:
            counts["insufficient-data"] += 1
        elif label == LABEL_SHARED:
            counts["shared"] += 1
        else:
            counts["specific"][label.split(":", 1)[1]] += 1
    if not comparison:
        counts.pop("specific")
        counts.pop("shared")

    return ComparisonReport(
        mode="comparison" if comparison else "summarisation",
        datasets=dataset_ids,
        num_prototypes=index.num_prototypes,
        threshold=threshold,
        min_occurrences=min_occurrences,
        diversity=diversity,
        counts=counts,
        prototypes=prototypes,
        metadata={
            "centre_bias_statistic": CENTRE_BIAS_STATISTIC,
            "example_rank": "count",
            "num_images": index.num_images,
        },
    )

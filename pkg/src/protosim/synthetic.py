"""Procedural concept image generators.

Twelve visually distinct texture concepts (stripes, checkers, rings, dots,
gradients in separated palettes) used for demo datasets and for planted
ground-truth evaluation: generators are texture-like so any reasonable crop
of an image still shows its concept. Per-image jitter keeps images within a
concept varied but tightly clustered.
"""

from pathlib import Path

import numpy as np

from .data import DatasetDescriptor, save_image, write_labels

CONCEPT_COUNT = 12


def _grid(size):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    return ys / size, xs / size


def _two_tone(mask, c0, c1):
    mask = mask[..., None].astype(np.float64)
    return mask * np.asarray(c0) + (1.0 - mask) * np.asarray(c1)


def _stripes(size, rng, c0, c1, period, axis):
    ys, xs = _grid(size)
    t = {"h": ys, "v": xs, "d": (ys + xs) / 2}[axis]
    phase = rng.uniform(0, 1)
    freq = period * rng.uniform(0.9, 1.1)
    return _two_tone(np.sin(2 * np.pi * (t * freq + phase)) > 0, c0, c1)


def _checker(size, rng, c0, c1, cells):
    ys, xs = _grid(size)
    phase = rng.uniform(0, 1, size=2)
    board = (np.floor(ys * cells + phase[0]) + np.floor(xs * cells + phase[1])) % 2
    return _two_tone(board > 0.5, c0, c1)


def _rings(size, rng, c0, c1, freq):
    ys, xs = _grid(size)
    cy, cx = rng.uniform(0.35, 0.65, size=2)
    r = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2)
    return _two_tone(np.sin(2 * np.pi * r * freq * rng.uniform(0.9, 1.1)) > 0, c0, c1)


def _dots(size, rng, fg, bg, spacing):
    ys, xs = _grid(size)
    phase = rng.uniform(0, 1, size=2)
    dy = (ys * spacing + phase[0]) % 1.0 - 0.5
    dx = (xs * spacing + phase[1]) % 1.0 - 0.5
    return _two_tone(dy ** 2 + dx ** 2 < 0.09, fg, bg)


def _gradient(size, rng, c0, c1, axis):
    ys, xs = _grid(size)
    t = ys if axis == "h" else xs
    t = np.clip(t * rng.uniform(0.9, 1.1) + rng.uniform(-0.05, 0.05), 0, 1)[..., None]
    return (1.0 - t) * np.asarray(c0) + t * np.asarray(c1)


def _solid(size, rng, c):
    return np.ones((size, size, 1)) * np.asarray(c)


_GENERATORS = [
    lambda s, r: _stripes(s, r, (0.90, 0.15, 0.10), (0.95, 0.85, 0.15), 4, "h"),
    lambda s, r: _checker(s, r, (0.15, 0.25, 0.85), (0.92, 0.92, 0.95), 4),
    lambda s, r: _rings(s, r, (0.15, 0.70, 0.25), (0.05, 0.25, 0.08), 4),
    lambda s, r: _dots(s, r, (0.55, 0.15, 0.75), (0.88, 0.82, 0.93), 5),
    lambda s, r: _stripes(s, r, (0.05, 0.05, 0.05), (0.95, 0.95, 0.95), 4, "v"),
    lambda s, r: _stripes(s, r, (0.08, 0.12, 0.45), (0.55, 0.75, 0.95), 5, "d"),
    lambda s, r: _gradient(s, r, (0.85, 0.15, 0.70), (0.10, 0.85, 0.90), "h"),
    lambda s, r: _solid(s, r, (0.55, 0.35, 0.15)),
    lambda s, r: _checker(s, r, (0.92, 0.85, 0.10), (0.12, 0.12, 0.12), 7),
    lambda s, r: _dots(s, r, (0.95, 0.95, 0.95), (0.08, 0.12, 0.40), 4),
    lambda s, r: _stripes(s, r, (0.30, 0.75, 0.95), (0.95, 0.60, 0.80), 7, "h"),
    lambda s, r: _rings(s, r, (0.85, 0.20, 0.15), (0.97, 0.95, 0.90), 6),
]


def concept_image(concept: int, rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """One (size, size, 3) float image of the given planted concept."""
    if not 0 <= concept < CONCEPT_COUNT:
        raise ValueError(f"concept must be in [0, {CONCEPT_COUNT}), got {concept}")
    img = _GENERATORS[concept](size, rng)
    img = img * rng.uniform(0.92, 1.08)  # mild global tint jitter
    img = img + rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def write_concept_dataset(root: Path, concepts: list[int], images_per_concept: int,
                          seed: int, size: int = 32) -> dict[str, str]:
    """Write PNGs + labels.csv under `root`; labels are concept ids as strings."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    labels = {}
    index = 0
    for concept in concepts:
        for _ in range(images_per_concept):
            image_id = f"img_{index:05d}.png"
            save_image(root / image_id, concept_image(concept, rng, size))
            labels[image_id] = str(concept)
            index += 1
    write_labels(root / "labels.csv", labels)
    return labels


def make_planted_pair(out_dir: Path, images_per_dataset: int = 2000, seed: int = 0,
                      size: int = 32) -> tuple[DatasetDescriptor, DatasetDescriptor, dict]:
    """Two datasets sharing 4 concepts, with 4 dataset-specific concepts each.

    Dataset "a" draws from concepts 0-3 plus shared 8-11, dataset "b" from 4-7
    plus shared 8-11; images are spread evenly over each dataset's 8 concepts.
    """
    out_dir = Path(out_dir)
    per_concept = images_per_dataset // 8
    concepts_a = [0, 1, 2, 3, 8, 9, 10, 11]
    concepts_b = [4, 5, 6, 7, 8, 9, 10, 11]
    labels_a = write_concept_dataset(out_dir / "a", concepts_a, per_concept, seed, size)
    labels_b = write_concept_dataset(out_dir / "b", concepts_b, per_concept, seed + 1, size)
    desc_a = DatasetDescriptor("a", "planted-a", out_dir / "a", out_dir / "a" / "labels.csv")
    desc_b = DatasetDescriptor("b", "planted-b", out_dir / "b", out_dir / "b" / "labels.csv")
    ground_truth = {
        "specific": {"a": [0, 1, 2, 3], "b": [4, 5, 6, 7]},
        "shared": [8, 9, 10, 11],
        "labels": {"a": labels_a, "b": labels_b},
    }
    return desc_a, desc_b, ground_truth


def make_class_dataset(root: Path, num_classes: int = 5, images_per_class: int = 200,
                       seed: int = 0, size: int = 32) -> DatasetDescriptor:
    """Single labeled dataset whose classes are the first `num_classes` concepts."""
    if num_classes > CONCEPT_COUNT:
        raise ValueError(f"at most {CONCEPT_COUNT} classes available")
    write_concept_dataset(root, list(range(num_classes)), images_per_class, seed, size)
    return DatasetDescriptor("toy", "planted-classes", Path(root), Path(root) / "labels.csv")

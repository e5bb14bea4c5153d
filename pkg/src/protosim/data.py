"""Dataset descriptors, image listing/loading, and label files."""

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")

_ID_PATTERN = re.compile(r"^[A-Za-z0-9_\-.]+$")


@dataclass(frozen=True)
class DatasetDescriptor:
    dataset_id: str
    name: str
    root: Path
    label_file: Path | None = None

    def __post_init__(self):
        if not _ID_PATTERN.match(self.dataset_id):
            raise ValueError(f"dataset_id {self.dataset_id!r} must be a short filename-safe token")
        if not Path(self.root).is_dir():
            raise ValueError(f"dataset root {self.root} is not a readable directory")

    def to_json(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "name": self.name,
            "root": str(self.root),
            "label_file": str(self.label_file) if self.label_file else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetDescriptor":
        label = obj.get("label_file")
        return cls(obj["dataset_id"], obj["name"], Path(obj["root"]),
                   Path(label) if label else None)


def list_images(root: Path) -> list[str]:
    """Sorted image ids (posix-style paths relative to the dataset root)."""
    root = Path(root)
    ids = [
        p.relative_to(root).as_posix()
        for p in root.rglob("*")
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    ]
    return sorted(ids)


def load_image(path: Path) -> torch.Tensor:
    """Image file -> (H, W, C) float tensor in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr)


def save_image(path: Path, array: np.ndarray) -> None:
    """(H, W, C) float array in [0, 1] -> PNG."""
    data = np.clip(array * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def load_labels(label_file: Path) -> dict[str, str]:
    """Read "image_id,label" lines; blank lines and '#' comments are skipped."""
    labels = {}
    for lineno, raw in enumerate(Path(label_file).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.lower().replace(" ", "") == "image_id,label":
            continue  # optional header
        image_id, sep, label = line.partition(",")
        if not sep:
            raise ValueError(f"{label_file}:{lineno}: expected 'image_id,label', got {line!r}")
        labels[image_id.strip()] = label.strip()
    return labels


def write_labels(label_file: Path, labels: dict[str, str]) -> None:
    lines = ["image_id,label"]
    lines += [f"{image_id},{label}" for image_id, label in sorted(labels.items())]
    Path(label_file).write_text("\n".join(lines) + "\n")

"""Deterministic fixture artifacts for service and UI contract tests.

Records are handcrafted (no model inference) so the derived JSON responses
are stable across platforms; the checkpoint only backs the attention and
hash-verification paths. Bank weights use small rational values, keeping
every derived float bit-exact.
"""

import json
from pathlib import Path

import numpy as np
import torch

from protosim.analytics import compare_report
from protosim.backbone import load_pretrained
from protosim.checkpoint import save_checkpoint, sha256_file
from protosim.config import TrainConfig
from protosim.augment import AugmentConfig
from protosim.data import DatasetDescriptor, save_image
from protosim.indexing import ImageRecord, build_index, save_index
from protosim.models import ProtoModel
from protosim.synthetic import concept_image

NUM_PROTOTYPES = 6
NUM_PATCHES = 16


def fixture_bank(num_prototypes=NUM_PROTOTYPES, dim=64) -> torch.Tensor:
    rows = [[((k * 37 + d * 11) % 17 - 8) / 8.0 for d in range(dim)]
            for k in range(num_prototypes)]
    return torch.tensor(rows, dtype=torch.float32)


def fixture_records() -> list[ImageRecord]:
    def rec(image_id, dataset_id, class_proto, patches, affs):
        return ImageRecord(image_id, dataset_id, class_proto, tuple(patches),
                           tuple(affs))

    return [
        rec("img_a0.png", "a", 0, [0] * 10 + [2] * 6, [(0, 6.0), (2, 3.5)]),
        rec("img_a1.png", "a", 0, [2] * 16, [(0, 4.0), (2, 2.5)]),
        rec("img_a2.png", "a", 1, [1] * 12 + [2] * 4, [(1, 7.0), (2, 1.5)]),
        rec("img_b0.png", "b", 3, [3] * 12 + [2] * 4, [(3, 8.0), (2, 2.8)]),
        rec("img_b1.png", "b", 4, [3] * 11 + [2] * 5, [(2, 2.2), (3, 5.5), (4, 9.9)]),
    ]


def build_service_fixture(root: Path) -> dict:
    root = Path(root)
    (root / "data" / "a").mkdir(parents=True, exist_ok=True)
    (root / "data" / "b").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(1234)
    for i, concept in enumerate([0, 1, 2]):
        save_image(root / "data" / "a" / f"img_a{i}.png", concept_image(concept, rng))
    for i, concept in enumerate([4, 5]):
        save_image(root / "data" / "b" / f"img_b{i}.png", concept_image(concept, rng))
    desc_a = DatasetDescriptor("a", "fixture-a", root / "data" / "a")
    desc_b = DatasetDescriptor("b", "fixture-b", root / "data" / "b")

    torch.manual_seed(0)
    handle = load_pretrained("toy-vit-s8-d64,seed=9")
    config = TrainConfig(batch_size=4, learning_rate=1e-3, epochs=1, soft_epochs=1,
                         num_prototypes=NUM_PROTOTYPES, num_local_crops=0,
                         head_output_dim=8, seed=0,
                         augment=AugmentConfig(out_size=(32, 32)))
    bank = fixture_bank()
    student = ProtoModel(handle.module, 64, NUM_PROTOTYPES, 8, config.head_input)
    teacher = ProtoModel(handle.module, 64, NUM_PROTOTYPES, 8, config.head_input)
    with torch.no_grad():
        student.prototypes.weights.copy_(bank)
        teacher.prototypes.weights.copy_(bank)
    ckpt_path = root / "checkpoint.pt"
    save_checkpoint(ckpt_path, config, handle, student, teacher, torch.zeros(8), epoch=0)

    index = build_index(fixture_records(), NUM_PROTOTYPES, NUM_PATCHES,
                        datasets=[desc_a, desc_b],
                        checkpoint_hash=sha256_file(ckpt_path))
    index_dir = root / "index"
    save_index(index, index_dir)

    report = compare_report(index, bank.numpy(), examples_per_dataset=4)
    report_path = root / "report.json"
    report_path.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True))

    return {
        "root": root,
        "index_dir": index_dir,
        "checkpoint": ckpt_path,
        "report": report_path,
        "datasets": [desc_a, desc_b],
    }


GOLDEN_QUERIES = {
    "manifest": "/api/manifest",
    "prototypes_default": "/api/prototypes",
    "prototypes_shared": "/api/prototypes?label=shared&sort=occurrences",
    "prototypes_threshold05": "/api/prototypes?threshold=0.5",
    "prototypes_class_kind": "/api/prototypes?token_kind=class",
    "prototypes_min_occ": "/api/prototypes?min_occurrences=12&sort=class_proportion",
    "prototype_2": "/api/prototypes/2",
    "prototype_2_threshold": "/api/prototypes/2?threshold=0.5",
    "examples_2_a": "/api/prototypes/2/examples?dataset=a&k=2",
    "examples_2_count": "/api/prototypes/2/examples?k=10&rank=count",
    "examples_2_affinity": "/api/prototypes/2/examples?k=10&rank=affinity",
    "examples_2_a_k12": "/api/prototypes/2/examples?dataset=a&k=12",
    "examples_2_b_k12": "/api/prototypes/2/examples?dataset=b&k=12",
    "report": "/api/report",
}

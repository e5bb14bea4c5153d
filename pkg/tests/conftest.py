import dataclasses

import pytest
import torch

from protosim.augment import AugmentConfig
from protosim.backbone import load_pretrained
from protosim.checkpoint import load_checkpoint, save_checkpoint
from protosim.config import TrainConfig
from protosim.data import load_labels
from protosim.models import ProtoModel
from protosim.synthetic import make_class_dataset


@dataclasses.dataclass
class PlantedProbeSetup:
    checkpoint_path: object
    dataset: object
    labels: dict
    num_classes: int
    class_prototypes: dict  # label -> bank row holding that class's mean embedding


def build_planted_checkpoint(tmp_path, num_classes=5, per_class=60, seed=0,
                             extra_prototypes=1):
    """Checkpoint whose bank rows are per-class mean class-token embeddings.

    With visually distinct classes and a frozen seeded backbone, the hard
    class-token assignment lands on the class's own row, giving a clean
    class -> prototype planting for probe and ablation tests. Extra rows are
    small random vectors that never win the argmax.
    """
    dataset = make_class_dataset(tmp_path / "ds", num_classes, per_class, seed=seed)
    labels = load_labels(dataset.label_file)
    handle = load_pretrained(f"toy-vit-s8-d64,seed={seed + 100}")

    from protosim.data import list_images, load_image

    image_ids = list_images(dataset.root)
    embeddings, names = [], []
    for start in range(0, len(image_ids), 64):
        chunk = image_ids[start:start + 64]
        images = torch.stack([load_image(dataset.root / i) for i in chunk])
        mean, std = handle.normalization
        x = (images.permute(0, 3, 1, 2) - torch.tensor(mean).view(1, -1, 1, 1)) \
            / torch.tensor(std).view(1, -1, 1, 1)
        with torch.no_grad():
            embeddings.append(handle.module(x)[:, 0, :])
        names += [labels[i] for i in chunk]
    embeddings = torch.cat(embeddings)

    classes = sorted(set(names))
    rows = []
    for cls in classes:
        mask = torch.tensor([n == cls for n in names])
        mean_vec = embeddings[mask].mean(dim=0)
        rows.append(mean_vec / mean_vec.norm())  # cosine-nearest class mean
    gen = torch.Generator().manual_seed(seed + 200)
    for _ in range(extra_prototypes):
        rows.append(torch.randn(embeddings.shape[1], generator=gen) * 1e-3)
    bank = torch.stack(rows)

    config = TrainConfig(
        batch_size=32, learning_rate=1e-3, epochs=1, soft_epochs=1,
        num_prototypes=bank.shape[0], num_local_crops=0, head_output_dim=8,
        seed=seed, augment=AugmentConfig(out_size=(32, 32)),
    )
    student = ProtoModel(handle.module, handle.config.embed_dim, bank.shape[0],
                         config.head_output_dim, config.head_input)
    with torch.no_grad():
        student.prototypes.weights.copy_(bank)
    teacher = ProtoModel(handle.module, handle.config.embed_dim, bank.shape[0],
                         config.head_output_dim, config.head_input)
    with torch.no_grad():
        teacher.prototypes.weights.copy_(bank)
    ckpt_path = tmp_path / "planted.pt"
    save_checkpoint(ckpt_path, config, handle, student, teacher,
                    torch.zeros(config.head_output_dim), epoch=0)
    class_prototypes = {cls: i for i, cls in enumerate(classes)}
    return PlantedProbeSetup(ckpt_path, dataset, labels, num_classes, class_prototypes)


@pytest.fixture(scope="session")
def planted_probe_setup(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("planted_probe")
    return build_planted_checkpoint(tmp)


@pytest.fixture(scope="session")
def planted_bundle(planted_probe_setup):
    return load_checkpoint(planted_probe_setup.checkpoint_path)

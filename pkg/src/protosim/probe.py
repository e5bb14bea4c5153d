"""Frozen-feature linear classification and the prototype-zeroing ablation.

Features are the hard-assigned class-token prototype embeddings, extracted
noise-free, so every feature row is literally a bank row. Zeroing replaces
selected bank rows with zero vectors at projection time; by default the
assignment step is untouched (tokens assigned to a zeroed prototype
contribute a zero vector), with an optional re-route variant that recomputes
the argmax against the zeroed bank.
"""

from dataclasses import dataclass
from pathlib import Path

import torch

from .checkpoint import CheckpointBundle, load_checkpoint
from .config import ProbeConfig
from .data import DatasetDescriptor, list_images, load_image


def extract_features(checkpoint, dataset: DatasetDescriptor, labels: dict,
                     batch_size: int = 64, zeroed: frozenset = frozenset(),
                     reroute: bool = False) -> tuple[torch.Tensor, list[str], list[str]]:
    """(features M x D, label per row, image id per row), deterministic.

    Only labeled images contribute rows; more than 10% coverage gaps abort.
    """
    bundle = checkpoint if isinstance(checkpoint, CheckpointBundle) else load_checkpoint(checkpoint)
    image_ids = list_images(dataset.root)
    if not image_ids:
        raise ValueError(f"dataset {dataset.dataset_id!r} has no images")
    unlabeled = [i for i in image_ids if i not in labels]
    if len(unlabeled) > 0.1 * len(image_ids):
        raise ValueError(f"{len(unlabeled)}/{len(image_ids)} images lack labels; aborting")
    labeled_ids = [i for i in image_ids if i in labels]

    bank = bundle.bank
    for p in zeroed:
        if not 0 <= p < bank.shape[0]:
            raise ValueError(f"prototype id {p} outside [0, {bank.shape[0]})")
    effective = bank.clone()
    if zeroed:
        effective[sorted(zeroed)] = 0.0

    rows = []
    for start in range(0, len(labeled_ids), batch_size):
        chunk = labeled_ids[start:start + batch_size]
        images = torch.stack([load_image(Path(dataset.root) / i) for i in chunk])
        tokens = bundle.tokens(images)
        class_tokens = tokens[:, 0, :]  # (B, D)
        scoring_bank = effective if reroute else bank
        logits = class_tokens @ scoring_bank.t()  # (B, K)
        assigned = logits.argmax(dim=1)
        rows.append(effective[assigned])
    features = torch.cat(rows, dim=0)
    return features, [labels[i] for i in labeled_ids], labeled_ids


@dataclass
class ProbeResult:
    classes: list[str]
    weight: torch.Tensor  # (C, D)
    bias: torch.Tensor  # (C,)
    overall_accuracy: float
    per_class_accuracy: dict
    val_indices: list[int]
    config: ProbeConfig

    def predict(self, features: torch.Tensor) -> torch.Tensor:
        """Class indices per feature row."""
        return (features @ self.weight.t() + self.bias).argmax(dim=1)

    def evaluate(self, features: torch.Tensor, label_names: list[str]
                 ) -> tuple[float, dict]:
        targets = torch.tensor([self.classes.index(l) for l in label_names])
        predicted = self.predict(features)
        correct = predicted == targets
        per_class = {}
        for ci, name in enumerate(self.classes):
            mask = targets == ci
            if mask.any():
                per_class[name] = float(correct[mask].float().mean())
        return float(correct.float().mean()), per_class

    def to_payload(self) -> dict:
        return {
            "classes": self.classes,
            "weight": self.weight,
            "bias": self.bias,
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "val_indices": self.val_indices,
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "ProbeResult":
        return cls(
            classes=payload["classes"],
            weight=payload["weight"],
            bias=payload["bias"],
            overall_accuracy=payload["overall_accuracy"],
            per_class_accuracy=payload["per_class_accuracy"],
            val_indices=payload["val_indices"],
            config=ProbeConfig.from_dict(payload["config"]),
        )


def stratified_split(label_names: list[str], val_fraction: float, seed: int
                     ) -> tuple[list[int], list[int]]:
    """Per-class shuffled split; every class keeps at least one val example."""
    generator = torch.Generator().manual_seed(seed)
    by_class: dict = {}
    for i, label in enumerate(label_names):
        by_class.setdefault(label, []).append(i)
    train_idx, val_idx = [], []
    for label in sorted(by_class):
        members = by_class[label]
        order = torch.randperm(len(members), generator=generator).tolist()
        n_val = max(1, int(round(len(members) * val_fraction)))
        val_idx += [members[i] for i in order[:n_val]]
        train_idx += [members[i] for i in order[n_val:]]
    return sorted(train_idx), sorted(val_idx)


def train_probe(features: torch.Tensor, label_names: list[str], config: ProbeConfig,
                val_indices: list[int] | None = None) -> ProbeResult:
    """Softmax-cross-entropy linear classifier on frozen features, plain SGD."""
    classes = sorted(set(label_names))
    if len(classes) < 2:
        raise ValueError("probe training needs at least 2 classes")
    targets = torch.tensor([classes.index(l) for l in label_names])
    if val_indices is None:
        _, val_indices = stratified_split(label_names, config.val_fraction, config.seed)
    val_mask = torch.zeros(len(label_names), dtype=torch.bool)
    val_mask[torch.tensor(val_indices)] = True
    x_train, y_train = features[~val_mask], targets[~val_mask]
    x_val = features[val_mask]

    torch.manual_seed(config.seed)
    model = torch.nn.Linear(features.shape[1], len(classes))
    optimizer = torch.optim.SGD(model.parameters(), lr=config.learning_rate)
    loss_fn = torch.nn.CrossEntropyLoss()
    order_gen = torch.Generator().manual_seed(config.seed)
    for _ in range(config.epochs):
        order = torch.randperm(len(x_train), generator=order_gen)
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            optimizer.zero_grad()
            loss = loss_fn(model(x_train[batch]), y_train[batch])
            loss.backward()
            optimizer.step()

    result = ProbeResult(
        classes=classes,
        weight=model.weight.detach().clone(),
        bias=model.bias.detach().clone(),
        overall_accuracy=0.0,
        per_class_accuracy={},
        val_indices=list(val_indices),
        config=config,
    )
    val_labels = [label_names[i] for i in range(len(label_names)) if val_mask[i]]
    result.overall_accuracy, result.per_class_accuracy = result.evaluate(x_val, val_labels)
    return result


def zero_prototype_ablation(checkpoint, probe: ProbeResult,
                            class_to_prototype: dict, dataset: DatasetDescriptor,
                            labels: dict, batch_size: int = 64,
                            reroute: bool = False) -> dict:
    """Zero each class's prototype in turn and re-evaluate the same probe.

    Returns {"rows": [{class, prototype, before/after per-class accuracy,
    target_before, target_after, target_delta}, ...], "mean_target_delta"}.
    Accuracies are measured on the probe's validation subset.
    """
    bundle = checkpoint if isinstance(checkpoint, CheckpointBundle) else load_checkpoint(checkpoint)
    base_features, base_labels, _ = extract_features(bundle, dataset, labels, batch_size)
    val_idx = probe.val_indices
    val_features = base_features[val_idx]
    val_labels = [base_labels[i] for i in val_idx]
    _, before = probe.evaluate(val_features, val_labels)

    rows = []
    for cls in sorted(class_to_prototype):
        proto = class_to_prototype[cls]
        ablated, ablated_labels, _ = extract_features(
            bundle, dataset, labels, batch_size, zeroed=frozenset([int(proto)]),
            reroute=reroute)
        assert ablated_labels == base_labels
        _, after = probe.evaluate(ablated[val_idx], val_labels)
        rows.append({
            "class": cls,
            "prototype": int(proto),
            "before": before,
            "after": after,
            "target_before": before.get(cls),
            "target_after": after.get(cls),
            "target_delta": (after.get(cls, 0.0) - before.get(cls, 0.0)),
        })
    mean_delta = sum(r["target_delta"] for r in rows) / len(rows) if rows else 0.0
    return {"rows": rows, "mean_target_delta": mean_delta, "reroute": reroute}

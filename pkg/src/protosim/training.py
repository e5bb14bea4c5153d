"""Teacher-student self-distillation over the union of datasets.

Two augmented global crops pass through the teacher; the student sees every
crop. The student minimizes the cross-view cross-entropy against the
sharpened, centered teacher distribution; the teacher tracks the student by
exponential moving average and receives no gradients. The student assigns
softly for the first `soft_epochs` epochs and then switches to hard
straight-through assignment; the teacher stays soft throughout.
"""

import copy
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import torch

from .augment import multi_crop
from .backbone import BackboneHandle
from .checkpoint import atomic_torch_save, save_checkpoint
from .config import TrainConfig
from .data import DatasetDescriptor, list_images, load_image
from .layer import HARD, SOFT
from .models import ProtoModel, _check_finite

LOG_FLOOR = 1e-8


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; the last good checkpoint is kept."""


@dataclass
class StudentState:
    model: ProtoModel
    config: TrainConfig


@dataclass
class TeacherState:
    model: ProtoModel
    center: torch.Tensor


def schedule_mode(epoch: int, config: TrainConfig) -> str:
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    return SOFT if epoch < config.soft_epochs else HARD


def _batch_probs(model: ProtoModel, images: torch.Tensor, mode: str, temp: float,
                 center: torch.Tensor | None, generator, noisy=True) -> torch.Tensor:
    logits = model.head_logits(images, mode, generator, noisy)
    if center is not None:
        logits = logits - center
    return torch.softmax(logits / temp, dim=-1)


def student_distribution(state: StudentState, crop: torch.Tensor, mode: str,
                         generator: torch.Generator | None = None,
                         noisy: bool = True) -> torch.Tensor:
    """One (C, H, W) normalized crop -> probability vector over head outputs."""
    probs = _batch_probs(state.model, crop.unsqueeze(0), mode,
                         state.config.student_temp, None, generator, noisy)[0]
    return _check_finite(probs, "student-softmax")


def teacher_distribution(state: TeacherState, global_crop: torch.Tensor,
                         teacher_temp: float,
                         generator: torch.Generator | None = None,
                         noisy: bool = True) -> torch.Tensor:
    """Centered, sharpened teacher output for one normalized global crop."""
    with torch.no_grad():
        probs = _batch_probs(state.model, global_crop.unsqueeze(0), SOFT, teacher_temp,
                             state.center, generator, noisy)[0]
    return _check_finite(probs, "teacher-softmax")


def update_center(center: torch.Tensor, batch_logits: torch.Tensor,
                  momentum: float) -> torch.Tensor:
    """EMA of the batch-mean teacher logits."""
    return center * momentum + batch_logits.mean(dim=0) * (1.0 - momentum)


def cross_entropy(teacher_probs: torch.Tensor, student_probs: torch.Tensor) -> torch.Tensor:
    """H(a, b) = -sum a*log(b), with a floor inside the log so H stays finite and >= 0."""
    return -(teacher_probs * student_probs.clamp(min=LOG_FLOOR).log()).sum(dim=-1)


def dino_loss(teacher_probs: list[torch.Tensor],
              student_probs: list[torch.Tensor]) -> torch.Tensor:
    """Mean cross-entropy over (teacher global crop, different student crop) pairs.

    Student crops are ordered with the two global crops first, so pair (i, j)
    is skipped when j == i (same view through both networks).
    """
    total = None
    n_pairs = 0
    for i, t in enumerate(teacher_probs):
        for j, s in enumerate(student_probs):
            if j == i:
                continue
            term = cross_entropy(t.detach(), s).mean()
            total = term if total is None else total + term
            n_pairs += 1
    if n_pairs == 0:
        raise ValueError("no valid crop pairs: need a second global crop or local crops")
    return total / n_pairs


def ema_update(teacher: ProtoModel, student: ProtoModel, momentum: float,
               include_backbone: bool = False) -> None:
    """theta_t <- momentum * theta_t + (1 - momentum) * theta_s for bank and head.

    The backbone is included only when the run trains it jointly; otherwise the
    two networks share the frozen module and it is left untouched.
    """
    pairs = [(teacher.prototypes, student.prototypes), (teacher.head, student.head)]
    if include_backbone:
        pairs.append((teacher.backbone, student.backbone))
    with torch.no_grad():
        for t_mod, s_mod in pairs:
            t_params = dict(t_mod.named_parameters())
            for name, s_param in s_mod.named_parameters():
                t_param = t_params[name]
                if t_param.shape != s_param.shape:
                    raise ValueError(f"teacher/student shape mismatch at {name}: "
                                     f"{tuple(t_param.shape)} vs {tuple(s_param.shape)}")
                t_param.mul_(momentum).add_(s_param, alpha=1.0 - momentum)


def bank_mean_cosine(weights: torch.Tensor) -> float:
    """Mean pairwise cosine similarity over all unordered prototype pairs."""
    w = weights.detach()
    norms = w.norm(dim=1, keepdim=True)
    unit = w / norms.clamp(min=1e-12)
    k = unit.shape[0]
    total = unit.sum(dim=0)
    # sum_{i != j} cos = |sum of unit rows|^2 - K
    pair_sum = (total @ total - k).item()
    return pair_sum / (k * (k - 1))


@dataclass
class _UnionImage:
    dataset_id: str
    image_id: str
    tensor: torch.Tensor


def _load_union(datasets: list[DatasetDescriptor]) -> list[_UnionImage]:
    if not datasets:
        raise ValueError("at least one dataset is required")
    seen = set()
    union = []
    for desc in datasets:
        if desc.dataset_id in seen:
            raise ValueError(f"duplicate dataset_id {desc.dataset_id!r}")
        seen.add(desc.dataset_id)
        ids = list_images(desc.root)
        if not ids:
            raise ValueError(f"dataset {desc.dataset_id!r} at {desc.root} has no images")
        for image_id in ids:
            union.append(_UnionImage(desc.dataset_id, image_id,
                                     load_image(Path(desc.root) / image_id)))
    return union


def _normalizer(handle: BackboneHandle):
    mean, std = handle.normalization
    mean_t = torch.tensor(mean).view(1, -1, 1, 1)
    std_t = torch.tensor(std).view(1, -1, 1, 1)

    def apply(crops: list[torch.Tensor]) -> torch.Tensor:
        stack = torch.stack(crops).permute(0, 3, 1, 2)
        return (stack - mean_t) / std_t

    return apply


def build_student_teacher(handle: BackboneHandle, config: TrainConfig
                          ) -> tuple[ProtoModel, ProtoModel]:
    embed_dim = handle.config.embed_dim
    init_gen = torch.Generator().manual_seed(config.seed)
    if config.freeze_backbone:
        student_backbone = handle.module
        for p in student_backbone.parameters():
            p.requires_grad_(False)
    else:
        student_backbone = copy.deepcopy(handle.module)
        for p in student_backbone.parameters():
            p.requires_grad_(True)
    student = ProtoModel(student_backbone, embed_dim, config.num_prototypes,
                         config.head_output_dim, config.head_input, init_gen)
    teacher = copy.deepcopy(student)
    if config.freeze_backbone:
        teacher.backbone = student.backbone  # shared frozen module
    for p in teacher.parameters():
        p.requires_grad_(False)
    return student, teacher


def train(datasets: list[DatasetDescriptor], config: TrainConfig,
          handle: BackboneHandle, out_dir: Path | None = None,
          log_fn=None) -> tuple[StudentState, list[dict]]:
    """Optimize bank and head (and optionally the backbone) over the dataset union.

    Returns the student state and the per-epoch train log
    [{epoch, loss, avg_cosine_sim, mode}, ...]; checkpoints are written per
    epoch when `out_dir` is given, atomically, keeping the last good one if
    the loss diverges.
    """
    union = _load_union(datasets)
    torch.manual_seed(config.seed)
    data_gen = torch.Generator().manual_seed(config.seed + 1)
    aug_gen = torch.Generator().manual_seed(config.seed + 2)
    student_gumbel = torch.Generator().manual_seed(config.seed + 3)
    teacher_gumbel = torch.Generator().manual_seed(config.seed + 4)

    student, teacher = build_student_teacher(handle, config)
    student.train()
    teacher.eval()
    center = torch.zeros(config.head_output_dim)

    trainable = list(student.prototypes.parameters()) + list(student.head.parameters())
    if not config.freeze_backbone:
        trainable += list(student.backbone.parameters())
    optimizer = torch.optim.Adam(trainable, lr=config.learning_rate)

    aug_config = replace(config.augment, out_size=handle.config.image_size)
    normalize = _normalizer(handle)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "trainlog.jsonl").unlink(missing_ok=True)

    train_log: list[dict] = []
    last_good: Path | None = None
    for epoch in range(config.epochs):
        mode = schedule_mode(epoch, config)
        order = torch.randperm(len(union), generator=data_gen).tolist()
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(union), config.batch_size):
            batch = [union[i] for i in order[start:start + config.batch_size]]
            if len(batch) < 2:
                continue  # centering is meaningless on a single image
            crops = [multi_crop(item.tensor, aug_config, config.num_local_crops,
                                aug_gen, item.image_id) for item in batch]
            views = []
            for v in range(2 + config.num_local_crops):
                per_view = [(c.global_crops + c.local_crops)[v] for c in crops]
                views.append(normalize(per_view))

            with torch.no_grad():
                teacher_logits = [teacher.head_logits(views[i], SOFT, teacher_gumbel)
                                  for i in range(2)]
                teacher_probs = [torch.softmax((lg - center) / config.teacher_temp, dim=-1)
                                 for lg in teacher_logits]
            student_probs = [
                torch.softmax(student.head_logits(view, mode, student_gumbel)
                              / config.student_temp, dim=-1)
                for view in views
            ]
            loss = dino_loss(teacher_probs, student_probs)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}; last good checkpoint: {last_good}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            ema_update(teacher, student, config.teacher_momentum,
                       include_backbone=not config.freeze_backbone)
            center = update_center(center, torch.cat(teacher_logits), config.center_momentum)
            epoch_loss += loss.item()
            n_batches += 1

        entry = {
            "epoch": epoch,
            "loss": epoch_loss / max(n_batches, 1),
            "avg_cosine_sim": bank_mean_cosine(student.prototypes.weights),
            "mode": mode,
        }
        train_log.append(entry)
        if log_fn:
            log_fn(entry)
        if out_dir is not None:
            ckpt = out_dir / f"ckpt-epoch-{epoch:03d}.pt"
            save_checkpoint(ckpt, config, handle, student, teacher, center, epoch)
            save_checkpoint(out_dir / "checkpoint.pt", config, handle, student, teacher,
                            center, epoch)
            last_good = ckpt
            _append_train_log(out_dir / "trainlog.jsonl", entry)

    return StudentState(student, config), train_log


def _append_train_log(path: Path, entry: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(entry) + "\n")


def read_train_log(path: Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]

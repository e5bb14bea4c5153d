"""Checkpoint archive ("protosim-ckpt-v1") and the inference-side bundle."""

import hashlib
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import torch

from .backbone import BackboneHandle, PatchConfig, TokenTransformer, normalize_image
from .config import TrainConfig
from .models import ProtoModel

CHECKPOINT_FORMAT = "protosim-ckpt-v1"


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def atomic_torch_save(payload, path: Path) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: Path, config: TrainConfig, handle: BackboneHandle,
                    student: ProtoModel, teacher: ProtoModel, center: torch.Tensor,
                    epoch: int, rng_state: torch.Tensor | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_dict(),
        "backbone": {
            "descriptor": handle.descriptor,
            "patch_config": {
                "image_size": list(handle.config.image_size),
                "channels": handle.config.channels,
                "patch_size": handle.config.patch_size,
                "embed_dim": handle.config.embed_dim,
                "depth": handle.config.depth,
                "heads": handle.config.heads,
            },
            "normalization": [list(handle.normalization[0]), list(handle.normalization[1])],
            "state": student.backbone.state_dict(),
        },
        "student": {"bank": student.prototypes.weights.detach().clone(),
                    "head": student.head.state_dict()},
        "teacher": {"bank": teacher.prototypes.weights.detach().clone(),
                    "head": teacher.head.state_dict(),
                    "center": center.detach().clone()},
        "epoch": epoch,
        "rng": {"torch": rng_state if rng_state is not None else torch.get_rng_state()},
    }
    atomic_torch_save(payload, path)


@dataclass
class CheckpointBundle:
    """Everything needed to run inference: the frozen backbone plus the
    student bank and head (the student is the trained artifact)."""

    path: Path
    config: TrainConfig
    backbone: BackboneHandle
    bank: torch.Tensor  # (K, D)
    head: "ProtoModel"
    teacher_bank: torch.Tensor
    center: torch.Tensor
    epoch: int

    @property
    def num_prototypes(self) -> int:
        return self.bank.shape[0]

    @property
    def num_patches(self) -> int:
        return self.backbone.config.num_patches

    def normalize_batch(self, images: torch.Tensor) -> torch.Tensor:
        """(B, H, W, C) raw [0,1] -> (B, C, H, W) standardized."""
        mean, std = self.backbone.normalization
        x = images.permute(0, 3, 1, 2).to(torch.float32)
        mean_t = torch.tensor(mean).view(1, -1, 1, 1)
        std_t = torch.tensor(std).view(1, -1, 1, 1)
        return (x - mean_t) / std_t

    def tokens(self, images: torch.Tensor) -> torch.Tensor:
        """(B, H, W, C) raw images -> (B, N+1, D) token embeddings."""
        with torch.no_grad():
            return self.backbone.module(self.normalize_batch(images))

    def token_single(self, image: torch.Tensor) -> torch.Tensor:
        return self.tokens(image.unsqueeze(0))[0]


def load_checkpoint(path: Path) -> CheckpointBundle:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {payload.get('format')!r}; "
                         f"expected {CHECKPOINT_FORMAT}")
    config = TrainConfig.from_dict(payload["config"])
    binfo = payload["backbone"]
    pc = binfo["patch_config"]
    patch_config = PatchConfig(tuple(pc["image_size"]), pc["channels"], pc["patch_size"],
                               pc["embed_dim"], pc["depth"], pc["heads"])
    module = TokenTransformer(patch_config)
    module.load_state_dict(binfo["state"])
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    normalization = (tuple(binfo["normalization"][0]), tuple(binfo["normalization"][1]))
    handle = BackboneHandle(patch_config, module, binfo["descriptor"], normalization,
                            frozen=True)
    model = ProtoModel(module, patch_config.embed_dim, config.num_prototypes,
                       config.head_output_dim, config.head_input)
    with torch.no_grad():
        model.prototypes.weights.copy_(payload["student"]["bank"])
    model.head.load_state_dict(payload["student"]["head"])
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return CheckpointBundle(
        path=path,
        config=config,
        backbone=handle,
        bank=model.prototypes.weights.data,
        head=model,
        teacher_bank=payload["teacher"]["bank"],
        center=payload["teacher"]["center"],
        epoch=payload["epoch"],
    )

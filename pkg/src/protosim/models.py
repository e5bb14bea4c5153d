"""Composite network: backbone tokens -> prototype layer -> projection head."""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import HEAD_INPUT_CLASS_PLUS_MEAN_PATCH
from .layer import Assignment, PrototypeLayer


class ProjectionHead(nn.Module):
    """3-layer MLP with an L2-normalized, row-normalized final projection."""

    def __init__(self, in_dim: int, out_dim: int, hidden_dim: int = 256,
                 bottleneck_dim: int = 64):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(in_dim, hidden_dim),
            nn.GELU(),
            nn.Linear(hidden_dim, hidden_dim),
            nn.GELU(),
            nn.Linear(hidden_dim, bottleneck_dim),
        )
        self.last = nn.Linear(bottleneck_dim, out_dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.normalize(self.mlp(x), dim=-1)
        # fixed unit row norms on the output layer keep logit scale bounded
        weight = F.normalize(self.last.weight, dim=1)
        return F.linear(x, weight)


def _check_finite(tensor: torch.Tensor, stage: str) -> torch.Tensor:
    if not torch.isfinite(tensor).all():
        raise RuntimeError(f"non-finite activations at stage '{stage}'")
    return tensor


class ProtoModel(nn.Module):
    """Backbone + prototype bank + head; one such network each for student/teacher."""

    def __init__(self, backbone: nn.Module, embed_dim: int, num_prototypes: int,
                 head_output_dim: int, head_input: str,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.backbone = backbone
        self.prototypes = PrototypeLayer(num_prototypes, embed_dim, generator)
        self.head = ProjectionHead(embed_dim, head_output_dim)
        self.head_input = head_input

    def token_features(self, images: torch.Tensor, mode: str,
                       generator: torch.Generator | None = None,
                       noisy: bool = True) -> tuple[torch.Tensor, Assignment]:
        """(B, C, H, W) normalized images -> (head feature (B, D), assignment)."""
        tokens = _check_finite(self.backbone(images), "backbone")
        z_hat, assignment = self.prototypes(tokens, mode, generator, noisy)
        _check_finite(z_hat, "prototype-layer")
        feature = z_hat[:, 0]
        if self.head_input == HEAD_INPUT_CLASS_PLUS_MEAN_PATCH:
            feature = feature + z_hat[:, 1:].mean(dim=1)
        return feature, assignment

    def head_logits(self, images: torch.Tensor, mode: str,
                    generator: torch.Generator | None = None,
                    noisy: bool = True) -> torch.Tensor:
        feature, _ = self.token_features(images, mode, generator, noisy)
        return _check_finite(self.head(feature), "projection-head")

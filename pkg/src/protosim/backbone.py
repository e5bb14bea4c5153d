"""Vision-transformer feature extractor: images to (N+1) x D token sequences.

The backbone is a pluggable contract. The default is a small ViT that can be
initialized deterministically from a seed (descriptor family "toy-vit-*");
real pretrained weights for a named architecture can be ingested from a
serialized state-dict file. The class token sits at index 0 and acts as the
global image representation; the backbone stays frozen while prototypes are
learned unless the trainer explicitly unfreezes it.
"""

import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn


@dataclass(frozen=True)
class PatchConfig:
    image_size: tuple[int, int]  # (H, W) pixels
    channels: int
    patch_size: int
    embed_dim: int
    depth: int
    heads: int

    def __post_init__(self):
        h, w = self.image_size
        if h % self.patch_size or w % self.patch_size:
            raise ValueError(
                f"image size {h}x{w} not divisible by patch size {self.patch_size}"
            )
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")

    @property
    def grid(self) -> tuple[int, int]:
        return self.image_size[0] // self.patch_size, self.image_size[1] // self.patch_size

    @property
    def num_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw


class _Block(nn.Module):
    def __init__(self, dim, heads, mlp_ratio=4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        y = self.norm1(x)
        x = x + self.attn(y, y, y, need_weights=False)[0]
        x = x + self.mlp(self.norm2(x))
        return x


class TokenTransformer(nn.Module):
    """Patch embedding + class token + learned positions + transformer blocks."""

    def __init__(self, config: PatchConfig):
        super().__init__()
        self.config = config
        patch_dim = config.channels * config.patch_size ** 2
        self.patch_embed = nn.Linear(patch_dim, config.embed_dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, config.embed_dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, config.num_patches + 1, config.embed_dim))
        self.blocks = nn.ModuleList(
            [_Block(config.embed_dim, config.heads) for _ in range(config.depth)]
        )
        self.norm = nn.LayerNorm(config.embed_dim)

    def init_parameters(self, generator: torch.Generator) -> None:
        """Deterministic init: all randomness drawn from `generator`."""
        with torch.no_grad():
            for name, p in self.named_parameters():
                if "norm" in name and name.endswith("weight"):
                    p.fill_(1.0)
                elif name.endswith("bias") or ("norm" in name):
                    p.zero_()
                else:
                    p.copy_(torch.randn(p.shape, generator=generator) * 0.02)

    def _to_patches(self, images: torch.Tensor) -> torch.Tensor:
        # images (B, C, H, W) -> flattened patches (B, N, P*P*C), row-major grid
        p = self.config.patch_size
        b, c, h, w = images.shape
        x = images.unfold(2, p, p).unfold(3, p, p)  # (B, C, gh, gw, p, p)
        x = x.permute(0, 2, 3, 1, 4, 5).reshape(b, self.config.num_patches, c * p * p)
        return x

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        """Embedding stage only (patch projection + class token + positions)."""
        x = self.patch_embed(self._to_patches(images))
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1)
        return x + self.pos_embed

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = self.embed(images)
        for block in self.blocks:
            x = block(x)
        return self.norm(x)


@dataclass
class BackboneHandle:
    config: PatchConfig
    module: TokenTransformer
    descriptor: str
    normalization: tuple[tuple[float, ...], tuple[float, ...]]  # per-channel (mean, std)
    frozen: bool = True

    @property
    def num_tokens(self) -> int:
        return self.config.num_patches + 1


IMAGENET_NORM = ((0.485, 0.456, 0.406), (0.229, 0.224, 0.225))
TOY_NORM = ((0.5, 0.5, 0.5), (0.5, 0.5, 0.5))

_TOY_PATTERN = re.compile(r"^toy-vit-s(\d+)-d(\d+)(?:-i(\d+))?$")

_NAMED_CONFIGS = {
    # published DeiT-S / ViT-S geometry; weights must match or loading fails
    "deit-s": (PatchConfig((224, 224), 3, 16, 384, 12, 6), IMAGENET_NORM),
}


def parse_descriptor(descriptor: str) -> tuple[str, str | None, int]:
    """Split "name[:path][,seed=INT]" into its parts (seed defaults to 0)."""
    parts = [p.strip() for p in descriptor.split(",")]
    head = parts[0]
    name, _, path = head.partition(":")
    seed = 0
    for extra in parts[1:]:
        key, _, value = extra.replace(" ", "=", 1).partition("=")
        if key.strip() != "seed":
            raise ValueError(f"unknown descriptor option {extra!r} in {descriptor!r}")
        seed = int(value)
    return name.strip(), path.strip() or None, seed


def _config_for_name(name: str) -> tuple[PatchConfig, tuple]:
    toy = _TOY_PATTERN.match(name)
    if toy:
        patch, dim = int(toy.group(1)), int(toy.group(2))
        size = int(toy.group(3)) if toy.group(3) else 32
        heads = max(1, dim // 16)
        return PatchConfig((size, size), 3, patch, dim, depth=4, heads=heads), TOY_NORM
    if name in _NAMED_CONFIGS:
        return _NAMED_CONFIGS[name]
    raise ValueError(f"unknown backbone name {name!r}")


def build_backbone(config: PatchConfig, seed: int = 0) -> TokenTransformer:
    module = TokenTransformer(config)
    module.init_parameters(torch.Generator().manual_seed(seed))
    module.eval()
    return module


def load_pretrained(descriptor: str) -> BackboneHandle:
    """Resolve a weight descriptor to a frozen backbone handle.

    Toy configs initialize deterministically from the descriptor seed; when a
    path is given its state dict must match the named architecture exactly,
    otherwise no handle is produced.
    """
    name, path, seed = parse_descriptor(descriptor)
    config, normalization = _config_for_name(name)
    module = build_backbone(config, seed)
    if path is not None:
        weight_file = Path(path)
        if not weight_file.is_file():
            raise FileNotFoundError(f"backbone weights not found at {weight_file}")
        try:
            state = torch.load(weight_file, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise ValueError(f"could not read backbone weights {weight_file}: {exc}") from exc
        module.load_state_dict(state)  # strict: mismatched shapes/keys raise
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return BackboneHandle(config=config, module=module, descriptor=descriptor,
                          normalization=normalization, frozen=True)


def normalize_image(image: torch.Tensor, normalization) -> torch.Tensor:
    """(H, W, C) pixels in [0, 1] -> (C, H, W) standardized per channel."""
    mean, std = normalization
    x = image.permute(2, 0, 1).to(torch.float32)
    mean_t = torch.tensor(mean).view(-1, 1, 1)
    std_t = torch.tensor(std).view(-1, 1, 1)
    return (x - mean_t) / std_t


def encode(handle: BackboneHandle, image: torch.Tensor) -> torch.Tensor:
    """One image (H, W, C) -> token matrix (N+1, D), class token first.

    Normalization travels with the handle, so raw [0, 1] pixels are expected;
    values far outside the standardized range usually mean the caller passed
    0-255 data and trigger a warning rather than an error.
    """
    h, w = handle.config.image_size
    expected = (h, w, handle.config.channels)
    if tuple(image.shape) != expected:
        raise ValueError(f"image shape {tuple(image.shape)} does not match backbone {expected}")
    x = normalize_image(image, handle.normalization)
    if x.abs().max() > 10.0:
        warnings.warn("normalized pixel values fall outside [-10, 10]; "
                      "encode expects raw pixels in [0, 1]", stacklevel=2)
    with torch.no_grad():
        tokens = handle.module(x.unsqueeze(0))[0]
    return tokens


def encode_batch(handle: BackboneHandle, images: torch.Tensor) -> torch.Tensor:
    """Pre-normalized (B, C, H, W) stack -> (B, N+1, D) tokens, no gradients."""
    with torch.no_grad():
        return handle.module(images)


def parameter_fingerprint(module: nn.Module) -> str:
    """Order-stable hash of all parameter bytes, for freeze checks."""
    import hashlib

    digest = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(p.detach().cpu().numpy().tobytes())
    return digest.hexdigest()

"""Per-prototype spatial attention maps and heat overlay rendering.

The map shows the noise-free soft assignment probability of one prototype at
every patch position, so heat conveys affinity; summed over all prototypes
each cell gives 1. Rendering upsamples the grid bilinearly and blends a
colormap over the image at a fixed alpha of 0.5.
"""

import json
from pathlib import Path

import numpy as np
import torch
from matplotlib import colormaps
from PIL import Image

from .checkpoint import CheckpointBundle, load_checkpoint
from .layer import compute_logits

OVERLAY_ALPHA = 0.5
DEFAULT_COLORMAP = "inferno"  # near-black at 0 so cold regions stay dimmed


def attention_grid(bank: torch.Tensor, tokens: torch.Tensor, prototype_id: int,
                   grid_shape: tuple[int, int]) -> np.ndarray:
    """Softmax probability of `prototype_id` per patch token, as a (gh, gw) grid."""
    if not 0 <= prototype_id < bank.shape[0]:
        raise ValueError(f"prototype id {prototype_id} outside [0, {bank.shape[0]})")
    logits = compute_logits(bank, tokens)  # (K, T)
    probs = torch.softmax(logits, dim=0)
    patch_probs = probs[prototype_id, 1:]  # class token excluded from the grid
    gh, gw = grid_shape
    if patch_probs.numel() != gh * gw:
        raise ValueError(f"{patch_probs.numel()} patch tokens do not fill a "
                         f"{gh}x{gw} grid")
    return patch_probs.reshape(gh, gw).numpy()


def attention_map(checkpoint, image: torch.Tensor, prototype_id: int) -> np.ndarray:
    """(H, W, C) raw image -> per-patch assignment probability grid in [0, 1]."""
    bundle = checkpoint if isinstance(checkpoint, CheckpointBundle) else load_checkpoint(checkpoint)
    expected = (*bundle.backbone.config.image_size, bundle.backbone.config.channels)
    if tuple(image.shape) != expected:
        raise ValueError(f"image shape {tuple(image.shape)} does not match backbone "
                         f"{expected}")
    tokens = bundle.token_single(image)
    return attention_grid(bundle.bank, tokens, prototype_id, bundle.backbone.config.grid)


def upsample_grid(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear upsampling anchored at cell top-left corners.

    Pixel (sy*i, sx*j) carries grid[i, j] exactly, so interpolated values never
    exceed the grid maximum and the argmax stays inside the argmax cell.
    """
    g = np.asarray(grid, dtype=np.float64)
    gh, gw = g.shape
    ys = np.clip(np.arange(height) * gh / height, 0, gh - 1)
    xs = np.clip(np.arange(width) * gw / width, 0, gw - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = g[np.ix_(y0, x0)] * (1 - fx) + g[np.ix_(y0, x1)] * fx
    bottom = g[np.ix_(y1, x0)] * (1 - fx) + g[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bottom * fy


def render_overlay(image: torch.Tensor, grid: np.ndarray, out_path: Path,
                   colormap: str = DEFAULT_COLORMAP,
                   normalize: bool = True) -> Path:
    """Blend a bilinear-upsampled heat map over the image and write a PNG.

    `normalize` rescales by the per-image grid maximum before coloring (the
    raw values stay available through the JSON export); output bytes are
    deterministic for fixed inputs.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    h, w = img.shape[:2]
    gh, gw = np.asarray(grid).shape
    if h % gh or w % gw:
        raise ValueError(f"grid {gh}x{gw} does not tile the {h}x{w} image")
    heat_values = upsample_grid(grid, h, w)
    if normalize:
        peak = heat_values.max()
        if peak > 0:
            heat_values = heat_values / peak
    heat = colormaps[colormap](np.clip(heat_values, 0.0, 1.0))[..., :3]
    blended = (1.0 - OVERLAY_ALPHA) * img + OVERLAY_ALPHA * heat
    out = np.clip(blended * 255.0 + 0.5, 0, 255).astype(np.uint8)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(out).save(out_path, format="PNG")
    return out_path


def grid_to_json(grid: np.ndarray, prototype_id: int) -> str:
    return json.dumps({
        "prototype_id": prototype_id,
        "grid": [[float(v) for v in row] for row in np.asarray(grid)],
    }, sort_keys=True)

"""Multi-crop augmentation: 2 global + V local views per image.

Crop-scale ranges and jitter magnitudes follow the usual self-distillation
recipe; all crops are resized to the backbone's native input size, so local
views differ by content scale rather than resolution.
"""

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

MIN_IMAGE_SIDE = 8


@dataclass(frozen=True)
class AugmentConfig:
    out_size: tuple[int, int] = (32, 32)
    global_scale: tuple[float, float] = (0.4, 1.0)
    local_scale: tuple[float, float] = (0.05, 0.4)
    flip_prob: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.1
    blur_prob: float = 0.25
    blur_sigma: tuple[float, float] = (0.1, 1.0)


@dataclass(frozen=True)
class MultiCropBatch:
    global_crops: list  # two (H, W, C) tensors
    local_crops: list  # V tensors
    source_image_id: str = ""


def _rand(generator, lo=0.0, hi=1.0):
    return lo + (hi - lo) * torch.rand((), generator=generator).item()


def _random_resized_crop(chw: torch.Tensor, scale, out_size, generator) -> torch.Tensor:
    _, h, w = chw.shape
    area = h * w
    # sample target area and aspect ratio, clamped to fit the source
    for _ in range(10):
        target_area = area * _rand(generator, scale[0], scale[1])
        log_ratio = _rand(generator, -0.2877, 0.2877)  # log(3/4)..log(4/3)
        ratio = torch.tensor(log_ratio).exp().item()
        ch = int(round((target_area / ratio) ** 0.5))
        cw = int(round((target_area * ratio) ** 0.5))
        if 0 < ch <= h and 0 < cw <= w:
            top = int(_rand(generator, 0, h - ch + 1))
            left = int(_rand(generator, 0, w - cw + 1))
            top, left = min(top, h - ch), min(left, w - cw)
            patch = chw[:, top:top + ch, left:left + cw]
            break
    else:
        patch = chw
    return F.interpolate(patch.unsqueeze(0), size=out_size, mode="bilinear",
                         align_corners=False, antialias=False)[0]


def _color_jitter(chw: torch.Tensor, config: AugmentConfig, generator) -> torch.Tensor:
    if config.brightness > 0:
        chw = chw * _rand(generator, 1 - config.brightness, 1 + config.brightness)
    if config.contrast > 0:
        mean = chw.mean()
        chw = (chw - mean) * _rand(generator, 1 - config.contrast, 1 + config.contrast) + mean
    if config.saturation > 0:
        gray = chw.mean(dim=0, keepdim=True)
        chw = gray + (chw - gray) * _rand(generator, 1 - config.saturation, 1 + config.saturation)
    return chw.clamp(0.0, 1.0)


def _gaussian_blur(chw: torch.Tensor, sigma: float) -> torch.Tensor:
    radius = max(1, int(2 * sigma))
    coords = torch.arange(-radius, radius + 1, dtype=torch.float32)
    kernel = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    kernel = kernel / kernel.sum()
    c = chw.shape[0]
    x = chw.unsqueeze(0)
    kx = kernel.view(1, 1, 1, -1).expand(c, 1, 1, -1)
    ky = kernel.view(1, 1, -1, 1).expand(c, 1, -1, 1)
    x = F.conv2d(x, kx, padding=(0, radius), groups=c)
    x = F.conv2d(x, ky, padding=(radius, 0), groups=c)
    return x[0]


def _augment_one(chw, scale, config, generator):
    crop = _random_resized_crop(chw, scale, config.out_size, generator)
    if torch.rand((), generator=generator).item() < config.flip_prob:
        crop = crop.flip(-1)
    crop = _color_jitter(crop, config, generator)
    if torch.rand((), generator=generator).item() < config.blur_prob:
        crop = _gaussian_blur(crop, _rand(generator, *config.blur_sigma))
    return crop.permute(1, 2, 0).contiguous()


def multi_crop(image: torch.Tensor, config: AugmentConfig, num_local_crops: int,
               generator: torch.Generator, image_id: str = "") -> MultiCropBatch:
    """(H, W, C) image in [0, 1] -> 2 global + V local augmented views."""
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, C) image, got shape {tuple(image.shape)}")
    h, w = image.shape[0], image.shape[1]
    if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
        raise ValueError(f"image {h}x{w} is smaller than the minimum crop source "
                         f"({MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE})")
    chw = image.permute(2, 0, 1)
    global_crops = [_augment_one(chw, config.global_scale, config, generator)
                    for _ in range(2)]
    local_crops = [_augment_one(chw, config.local_scale, config, generator)
                   for _ in range(num_local_crops)]
    return MultiCropBatch(global_crops, local_crops, image_id)

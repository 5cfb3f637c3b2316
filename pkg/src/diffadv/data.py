"""Synthetic desk-scale image dataset plus 8-bit image and mask I/O.

Classes are stripe orientations spaced pi / num_classes apart, with
per-sample angle jitter, frequency/phase/color randomization, and a
blended-in second orientation.  Smooth oriented textures keep the data
manifold easy for a small diffusion model while the angular class
geometry leaves classifier margins small enough to attack.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
from PIL import Image

MAX_CLASSES = 12


def _color_pair(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    for _ in range(64):
        fg = rng.uniform(0.05, 0.95, size=3)
        bg = rng.uniform(0.05, 0.95, size=3)
        if np.abs(fg - bg).max() >= 0.4:
            return fg, bg
    return np.array([0.9, 0.9, 0.9]), np.array([0.1, 0.1, 0.1])


def _stripe_field(theta: float, res: int, rng: np.random.Generator) -> np.ndarray:
    """Oriented sinusoidal field in [-1, 1]."""
    ax = np.linspace(-1.0, 1.0, res)
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    freq = rng.uniform(1.2, 3.0)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    return np.sin(math.pi * freq * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)


def make_desk_dataset(
    n_per_class: int,
    resolution: int = 32,
    seed: int = 0,
    num_classes: int = 8,
    noise_std: float = 0.02,
    amp_range: tuple[float, float] = (0.45, 1.0),
    max_mix: float = 0.3,
    jitter_deg: float = 8.0,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Generate (images, labels): images (N, 3, R, R) float32 in [0, 1].

    ``jitter_deg`` perturbs each sample's orientation around its class
    angle and ``max_mix`` blends in a second class's field, so a slice of
    every class sits near the decision boundary instead of miles from it.
    """
    if not 2 <= num_classes <= MAX_CLASSES:
        raise ValueError(f"num_classes must lie in [2, {MAX_CLASSES}]")
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for label in range(num_classes):
        base_angle = label * math.pi / num_classes
        for _ in range(n_per_class):
            theta = base_angle + math.radians(rng.uniform(-jitter_deg, jitter_deg))
            field = _stripe_field(theta, resolution, rng)
            if max_mix > 0:
                other = int(rng.integers(num_classes - 1))
                other = other + (other >= label)
                mix = rng.uniform(0.0, max_mix)
                other_theta = other * math.pi / num_classes + math.radians(
                    rng.uniform(-jitter_deg, jitter_deg)
                )
                field = (1.0 - mix) * field + mix * _stripe_field(other_theta, resolution, rng)
            amp = rng.uniform(*amp_range)
            fg, bg = _color_pair(rng)
            w = 0.5 + 0.5 * amp * field
            img = bg[:, None, None] + (fg - bg)[:, None, None] * w[None, :, :]
            img = img + rng.normal(0.0, noise_std, size=img.shape)
            images.append(np.clip(img, 0.0, 1.0).astype(np.float32))
            labels.append(label)
    x = torch.from_numpy(np.stack(images))
    y = torch.tensor(labels, dtype=torch.long)
    perm = torch.randperm(x.shape[0], generator=torch.Generator().manual_seed(seed))
    return x[perm], y[perm]


def square_mask(resolution: int, frac: float = 0.4, center: tuple[int, int] | None = None) -> torch.Tensor:
    """Binary (1, R, R) mask with an editable square of side frac * R."""
    side = max(1, int(round(frac * resolution)))
    cy, cx = center if center is not None else (resolution // 2, resolution // 2)
    y0 = max(0, cy - side // 2)
    x0 = max(0, cx - side // 2)
    m = torch.zeros(1, resolution, resolution)
    m[:, y0 : y0 + side, x0 : x0 + side] = 1.0
    return m


# ---------------------------------------------------------------------------
# 8-bit lossless raster I/O

def save_image(x: torch.Tensor, path) -> None:
    """Round-to-nearest 8-bit PNG; expects (3, H, W) or (1, H, W) in [0, 1]."""
    if x.ndim != 3 or x.shape[0] not in (1, 3):
        raise ValueError(f"expected (1|3, H, W) image, got {tuple(x.shape)}")
    arr = torch.clamp(x.detach(), 0.0, 1.0).mul(255.0).round().to(torch.uint8).numpy()
    arr = np.transpose(arr, (1, 2, 0))
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def load_image(path) -> torch.Tensor:
    """Load an 8-bit RGB raster as (3, H, W) float32 with v -> v / 255."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as im:
        if im.mode not in ("RGB", "L"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    if arr.shape[2] != 3:
        raise ValueError(f"expected 3 channels, got {arr.shape[2]} in {path}")
    return torch.from_numpy(np.transpose(arr, (2, 0, 1)).copy())


def load_mask(path) -> torch.Tensor:
    """Grayscale mask file: value >= 128 marks the attack region; (1, H, W)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mask not found: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return torch.from_numpy((arr >= 128).astype(np.float32))[None]


def save_dataset(images: torch.Tensor, labels: torch.Tensor, root) -> None:
    root = Path(root)
    for i in range(images.shape[0]):
        save_image(images[i], root / f"class_{int(labels[i])}" / f"{i:05d}.png")


def load_dataset(root) -> tuple[torch.Tensor, torch.Tensor]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    images, labels = [], []
    for class_dir in sorted(root.glob("class_*")):
        label = int(class_dir.name.split("_")[1])
        for p in sorted(class_dir.glob("*.png")):
            images.append(load_image(p))
            labels.append(label)
    if not images:
        raise ValueError(f"no images under {root}")
    return torch.stack(images), torch.tensor(labels, dtype=torch.long)


def perturbation_view(x_adv: torch.Tensor, x: torch.Tensor, gain: float = 5.0) -> torch.Tensor:
    """Amplified perturbation map around mid-gray for visual inspection."""
    return torch.clamp(0.5 + gain * (x_adv - x), 0.0, 1.0)

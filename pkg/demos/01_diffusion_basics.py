"""Forward diffusion, reverse sampling, and edit-based purification.

Walks the diffusion stack bottom-up: corrupt an image with the closed
form q(x_t | x_0), draw unconditional samples with the respaced reverse
chain, and pull a noisy image back to the data manifold with the
K-step edit operation.  Requires demos/00_setup.py.
"""

from pathlib import Path

import torch

from diffadv.data import save_image
from diffadv.denoiser import load_denoiser
from diffadv.sampler import SdeditConfig, generate, sdedit
from diffadv.schedule import diffuse, respace

ROOT = Path(__file__).resolve().parent.parent / "demo_runs"
OUT = ROOT / "diffusion_basics"


def main():
    model, schedule, _ = load_denoiser(ROOT / "denoiser.pt")
    _, _, test_images, _ = torch.load(ROOT / "dataset.pt", weights_only=False)
    OUT.mkdir(parents=True, exist_ok=True)

    # 1. forward diffusion at increasing depth: watch the pattern dissolve
    x = test_images[:1]
    gen = torch.Generator().manual_seed(0)
    for t in (50, 200, 500, 1000):
        noise = torch.randn(x.shape, generator=gen)
        x_t = diffuse(2 * x - 1, t, schedule, noise)  # chain works in [-1, 1]
        save_image(((x_t + 1) / 2).clamp(0, 1)[0], OUT / f"forward_t{t:04d}.png")
    print("forward marginals written (forward_t*.png)")

    # 2. unconditional samples via the 50-step respaced ladder
    rs = respace(schedule, 50)
    samples = generate(model, rs, (8, 3, 32, 32), seed=1)
    for i in range(samples.shape[0]):
        save_image(samples[i], OUT / f"sample_{i}.png")
    print(f"unconditional samples: mean {samples.mean():.3f}, std {samples.std():.3f}")
    print(f"dataset moments:       mean {test_images.mean():.3f}, std {test_images.std():.3f}")

    # 3. purification: add pixel noise, then edit it away with K reverse steps
    noisy = (test_images[:4] + 0.08 * torch.randn(4, 3, 32, 32, generator=gen)).clamp(0, 1)
    with torch.no_grad():
        edited = sdedit(model, noisy, 5, rs, SdeditConfig(K=5, seed=2)).clamp(0, 1)
    for i in range(4):
        save_image(test_images[i], OUT / f"purify_{i}_clean.png")
        save_image(noisy[i], OUT / f"purify_{i}_noisy.png")
        save_image(edited[i], OUT / f"purify_{i}_edited.png")
    drift = (edited - test_images[:4]).abs().mean()
    print(f"edit pulled noisy inputs back toward the originals (mean |drift| {drift:.4f})")
    print(f"outputs in {OUT}")


if __name__ == "__main__":
    main()

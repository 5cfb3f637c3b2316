"""Region-restricted attacks with masked repainting.

Only a square region of each image may change.  The masked edit
resamples the untouched region from the anchor's forward marginals at
every reverse step, so the attacked square blends into its surroundings
instead of floating on top of them.  Requires demos/00_setup.py.
"""

from pathlib import Path

import torch

from diffadv.attacks import AttackConfig, diff_pgd, pgd
from diffadv.data import save_image, square_mask
from diffadv.denoiser import load_denoiser
from diffadv.evaluation import select_correct
from diffadv.models import load_classifier
from diffadv.schedule import respace

ROOT = Path(__file__).resolve().parent.parent / "demo_runs"
OUT = ROOT / "region_attack"


def main():
    classifier = load_classifier(ROOT / "classifier_a.pt")
    model, schedule, _ = load_denoiser(ROOT / "denoiser.pt")
    rs50 = respace(schedule, 50)
    _, _, test_images, test_labels = torch.load(ROOT / "dataset.pt", weights_only=False)
    OUT.mkdir(parents=True, exist_ok=True)

    pool = select_correct(classifier, test_images, test_labels, n=16)
    x, y = test_images[pool], test_labels[pool]
    mask = square_mask(32, frac=0.5)

    cfg = AttackConfig(epsilon=16 / 255, eta=2 / 255, n=10, K=2, seed=0)
    regional_pgd = pgd(classifier, x, y, cfg, mask=mask)
    regional_diff = diff_pgd(classifier, model, x, y, cfg, mask=mask, schedule=rs50)
    print(f"masked pgd success:        {regional_pgd.success_xn.float().mean():.2f}")
    print(f"masked diff-pgd (x_n0):    {regional_diff.success_xn0.float().mean():.2f}")

    # contract: pixels outside the mask are untouched
    outside = (1 - mask) * (regional_diff.x_n - x)
    print(f"max |x_n - x| outside mask: {outside.abs().max():.2e} (exact zero)")
    outside0 = (1 - mask) * (regional_diff.x_n0.clamp(0, 1) - x)
    print(f"max |x_n0 - x| outside mask: {outside0.abs().max():.2e} (< 1/255)")

    save_image(mask.expand(3, -1, -1), OUT / "mask.png")
    for i in range(4):
        save_image(x[i], OUT / f"{i}_clean.png")
        save_image(regional_pgd.x_n[i], OUT / f"{i}_rpgd.png")
        save_image(regional_diff.x_n0[i].clamp(0, 1), OUT / f"{i}_diff_rpgd.png")
    print(f"outputs in {OUT}")


if __name__ == "__main__":
    main()

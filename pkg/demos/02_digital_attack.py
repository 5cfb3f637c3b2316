"""Global digital attacks: plain PGD vs the diffusion-guided variant.

Generates both attacks at the headline setting (eps = 16/255,
eta = 2/255, n = 10; DDIM50 with K = 3 for the guided variant), then
compares success rates, perturbation structure, and what a purifier
does to each.  Requires demos/00_setup.py.
"""

from pathlib import Path

import torch

from diffadv.attacks import AttackConfig, diff_pgd, pgd
from diffadv.data import perturbation_view, save_image
from diffadv.denoiser import load_denoiser
from diffadv.evaluation import purify_then_classify, select_correct
from diffadv.models import load_classifier
from diffadv.sampler import SdeditConfig
from diffadv.schedule import respace

ROOT = Path(__file__).resolve().parent.parent / "demo_runs"
OUT = ROOT / "digital_attack"


def main():
    classifier = load_classifier(ROOT / "classifier_a.pt")
    model, schedule, _ = load_denoiser(ROOT / "denoiser.pt")
    rs50 = respace(schedule, 50)
    _, _, test_images, test_labels = torch.load(ROOT / "dataset.pt", weights_only=False)
    OUT.mkdir(parents=True, exist_ok=True)

    pool = select_correct(classifier, test_images, test_labels, n=32)
    x, y = test_images[pool], test_labels[pool]

    cfg = AttackConfig(epsilon=16 / 255, eta=2 / 255, n=10, seed=0)
    base = pgd(classifier, x, y, cfg)
    print(f"pgd success:              {base.success_xn.float().mean():.2f}")

    guided_cfg = AttackConfig(epsilon=16 / 255, eta=2 / 255, n=10, K=3, seed=0)
    guided = diff_pgd(classifier, model, x, y, guided_cfg, schedule=rs50)
    print(f"diff-pgd success (x_n):   {guided.success_xn.float().mean():.2f}")
    print(f"diff-pgd success (x_n0):  {guided.success_xn0.float().mean():.2f}")

    # the purifier wipes the plain attack but not the guided one
    purifier = SdeditConfig(K=5, seed=1234)
    for name, adv in (("pgd", base.x_n), ("diff_xn", guided.x_n), ("diff_xn0", guided.x_n0)):
        preds = purify_then_classify(classifier, model, adv.clamp(0, 1), purifier, rs50)
        print(f"success after purification, {name}: {(preds != y).float().mean():.2f}")

    # side-by-side artifacts; deltas are amplified 5x around mid-gray
    for i in range(4):
        save_image(x[i], OUT / f"{i}_clean.png")
        save_image(base.x_n[i], OUT / f"{i}_pgd.png")
        save_image(perturbation_view(base.x_n[i], x[i]), OUT / f"{i}_pgd_delta.png")
        save_image(guided.x_n0[i].clamp(0, 1), OUT / f"{i}_diff_xn0.png")
        save_image(perturbation_view(guided.x_n0[i].clamp(0, 1), x[i]), OUT / f"{i}_diff_delta.png")
    print(f"visual comparisons in {OUT}")


if __name__ == "__main__":
    main()

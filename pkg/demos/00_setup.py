"""Prepare the shared demo artifacts: dataset, diffusion model, classifiers.

Run this once before the other demos:

    python demos/00_setup.py

Everything lands under demo_runs/.  The configs here are scaled down for
a quick build (~10 minutes on two CPU cores); the test suite trains the
full desk models separately under .desk_cache/.
"""

from pathlib import Path

import torch

from diffadv.data import make_desk_dataset, save_dataset
from diffadv.denoiser import TrainConfig, save_denoiser, train_denoiser
from diffadv.models import ClassifierSpec, ClassifierTrainConfig, save_classifier, train_classifier
from diffadv.schedule import make_schedule
from diffadv.unet import ArchSpec

ROOT = Path(__file__).resolve().parent.parent / "demo_runs"


def main():
    ROOT.mkdir(exist_ok=True)
    print("generating the desk dataset (oriented stripes, 8 classes) ...")
    train_images, train_labels = make_desk_dataset(250, seed=0)
    test_images, test_labels = make_desk_dataset(40, seed=1)
    save_dataset(test_images[:64], test_labels[:64], ROOT / "test_images")
    torch.save((train_images, train_labels, test_images, test_labels), ROOT / "dataset.pt")

    print("training the denoiser (1500 steps, ~8 min on 2 CPU cores) ...")
    schedule = make_schedule(1000)
    model, state = train_denoiser(
        train_images,
        schedule,
        TrainConfig(steps=1500, batch_size=48, lr=3e-4, seed=0),
        spec=ArchSpec(base_width=32, channel_mults=(1, 2)),
        log_fn=lambda s, l: print(f"  step {s}: loss {l:.4f}"),
    )
    save_denoiser(ROOT / "denoiser.pt", model, schedule, state)

    print("training two classifiers (different seeds/widths) ...")
    clf_a = train_classifier(
        train_images, train_labels, ClassifierTrainConfig(epochs=3, seed=0),
        spec=ClassifierSpec(num_classes=8, base_width=32),
    )
    save_classifier(ROOT / "classifier_a.pt", clf_a, seed=0)
    clf_b = train_classifier(
        train_images, train_labels, ClassifierTrainConfig(epochs=3, seed=7),
        spec=ClassifierSpec(num_classes=8, base_width=24),
    )
    save_classifier(ROOT / "classifier_b.pt", clf_b, seed=7)
    print(f"done; artifacts in {ROOT}")


if __name__ == "__main__":
    main()

"""Session fixtures for the desk-scale lab.

Training the diffusion model takes ~30 CPU-minutes, so trained artifacts
are cached under .desk_cache/ keyed by their build configuration; delete
the directory to force a rebuild.
"""

import hashlib
import json
from pathlib import Path

import pytest
import torch

from diffadv.data import make_desk_dataset
from diffadv.denoiser import TrainConfig, load_denoiser, save_denoiser, train_denoiser
from diffadv.evaluation import select_correct
from diffadv.models import (
    AdversarialRecipe,
    ClassifierSpec,
    ClassifierTrainConfig,
    load_classifier,
    save_classifier,
    train_classifier,
)
from diffadv.schedule import make_schedule, respace
from diffadv.unet import ArchSpec

CACHE_DIR = Path(__file__).resolve().parent.parent / ".desk_cache"

DESK = {
    "resolution": 32,
    "num_classes": 8,
    "amp_min": 0.45,
    "max_mix": 0.3,
    "jitter_deg": 8.0,
    "train_per_class": 400,
    "test_per_class": 100,
    "train_seed": 0,
    "test_seed": 1,
}

DENOISER_CFG = {"width": 32, "mults": (1, 2), "steps": 4000, "batch": 48, "lr": 3e-4, "seed": 0}
CLF_A_CFG = {"epochs": 3, "seed": 0, "width": 32}
CLF_B_CFG = {"epochs": 3, "seed": 7, "width": 24}
ADV_CLF_CFG = {"epochs": 2, "seed": 3, "width": 32, "eps": 8 / 255, "eta": 2 / 255, "n": 4}

EVAL_POOL_SIZE = 250


def _key(name: str, cfg: dict) -> Path:
    digest = hashlib.sha256(json.dumps({**DESK, **cfg}, sort_keys=True).encode()).hexdigest()[:12]
    CACHE_DIR.mkdir(exist_ok=True)
    return CACHE_DIR / f"{name}_{digest}.pt"


def _desk_split(n_per_class: int, seed: int):
    return make_desk_dataset(
        n_per_class,
        resolution=DESK["resolution"],
        seed=seed,
        num_classes=DESK["num_classes"],
        amp_range=(DESK["amp_min"], 1.0),
        max_mix=DESK["max_mix"],
        jitter_deg=DESK["jitter_deg"],
    )


@pytest.fixture(scope="session")
def desk_train():
    return _desk_split(DESK["train_per_class"], DESK["train_seed"])


@pytest.fixture(scope="session")
def desk_test():
    return _desk_split(DESK["test_per_class"], DESK["test_seed"])


@pytest.fixture(scope="session")
def schedule():
    return make_schedule(1000)


@pytest.fixture(scope="session")
def ddim50(schedule):
    return respace(schedule, 50)


@pytest.fixture(scope="session")
def ddim10(schedule):
    return respace(schedule, 10)


@pytest.fixture(scope="session")
def denoiser(desk_train, schedule):
    path = _key("denoiser", DENOISER_CFG)
    if path.exists():
        model, _, _ = load_denoiser(path)
        return model
    images, _ = desk_train
    spec = ArchSpec(
        resolution=DESK["resolution"],
        base_width=DENOISER_CFG["width"],
        channel_mults=DENOISER_CFG["mults"],
    )
    cfg = TrainConfig(
        steps=DENOISER_CFG["steps"],
        batch_size=DENOISER_CFG["batch"],
        lr=DENOISER_CFG["lr"],
        seed=DENOISER_CFG["seed"],
    )
    model, state = train_denoiser(images, schedule, cfg, spec=spec)
    save_denoiser(path, model, schedule, state)
    return model


def _classifier_fixture(cfg: dict, desk_train, adversarial=None):
    name = "classifier_adv" if adversarial else "classifier"
    path = _key(name, cfg)
    if path.exists():
        return load_classifier(path)
    images, labels = desk_train
    spec = ClassifierSpec(
        resolution=DESK["resolution"], num_classes=DESK["num_classes"], base_width=cfg["width"]
    )
    model = train_classifier(
        images,
        labels,
        ClassifierTrainConfig(epochs=cfg["epochs"], seed=cfg["seed"]),
        spec=spec,
        adversarial=adversarial,
    )
    save_classifier(path, model, seed=cfg["seed"])
    return model


@pytest.fixture(scope="session")
def classifier_a(desk_train):
    return _classifier_fixture(CLF_A_CFG, desk_train)


@pytest.fixture(scope="session")
def classifier_b(desk_train):
    return _classifier_fixture(CLF_B_CFG, desk_train)


@pytest.fixture(scope="session")
def classifier_adv(desk_train):
    recipe = AdversarialRecipe(
        epsilon=ADV_CLF_CFG["eps"], eta=ADV_CLF_CFG["eta"], n=ADV_CLF_CFG["n"]
    )
    return _classifier_fixture(ADV_CLF_CFG, desk_train, adversarial=recipe)


@pytest.fixture(scope="session")
def eval_pool(classifier_a, desk_test):
    """The 250 correctly-classified held-out images used by every protocol."""
    images, labels = desk_test
    idx = select_correct(classifier_a, images, labels, n=EVAL_POOL_SIZE)
    assert idx.numel() >= EVAL_POOL_SIZE, "desk classifier too weak to fill the evaluation pool"
    return images[idx], labels[idx]

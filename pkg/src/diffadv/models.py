"""Target classifiers and the layered feature extractor for style losses.

Classifiers are small 3-stage residual convnets over [0, 1] images.  The
feature extractor reuses a trained classifier's convolutional trunk; the
first five convolutions serve as style layers and the fourth as the
content layer by default.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .denoiser import load_checkpoint, save_checkpoint
from .seeding import derive_seed


@dataclass(frozen=True)
class ClassifierSpec:
    resolution: int = 32
    channels: int = 3
    num_classes: int = 6
    base_width: int = 32
    recipe: str = "standard"  # standard | adversarial


def _gn(ch: int) -> nn.GroupNorm:
    for g in (8, 4, 2):
        if ch % g == 0 and ch >= 2 * g:
            return nn.GroupNorm(g, ch)
    return nn.GroupNorm(1, ch)


class _Block(nn.Module):
    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.norm1 = _gn(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.norm2 = _gn(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        if stride != 1 or in_ch != out_ch:
            self.skip = nn.Conv2d(in_ch, out_ch, 1, stride=stride)
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class SmallResNet(nn.Module):
    """3-stage residual classifier over images in [0, 1]."""

    def __init__(self, spec: ClassifierSpec = ClassifierSpec()):
        super().__init__()
        self.spec = spec
        w = spec.base_width
        self.stem = nn.Conv2d(spec.channels, w, 3, padding=1)
        self.stage1 = _Block(w, w)
        self.stage2 = _Block(w, 2 * w, stride=2)
        self.stage3 = _Block(2 * w, 4 * w, stride=2)
        self.head_norm = _gn(4 * w)
        self.fc = nn.Linear(4 * w, spec.num_classes)
        # ordered conv handles for feature extraction
        self.conv_sequence = [
            ("conv1", self.stem),
            ("conv2", self.stage1.conv1),
            ("conv3", self.stage1.conv2),
            ("conv4", self.stage2.conv1),
            ("conv5", self.stage2.conv2),
            ("conv6", self.stage3.conv1),
            ("conv7", self.stage3.conv2),
        ]

    def forward(self, x):
        if x.shape[-1] != self.spec.resolution or x.shape[-2] != self.spec.resolution:
            raise ValueError(
                f"input resolution {tuple(x.shape[-2:])} does not match "
                f"configured {self.spec.resolution}"
            )
        h = self.stem(2.0 * x - 1.0)
        h = self.stage1(h)
        h = self.stage2(h)
        h = self.stage3(h)
        h = F.silu(self.head_norm(h)).mean(dim=(-2, -1))
        return self.fc(h)


def new_classifier(spec: ClassifierSpec = ClassifierSpec(), seed: int = 0) -> SmallResNet:
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "classifier-init"))
        model = SmallResNet(spec)
    return model


def logits(classifier: SmallResNet, x: torch.Tensor) -> torch.Tensor:
    """Raw class scores; accepts a single (C, H, W) image or a batch."""
    single = x.ndim == 3
    if single:
        x = x[None]
    out = classifier(x)
    return out[0] if single else out


def predict(classifier: SmallResNet, x: torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        return logits(classifier, x).argmax(dim=-1)


@dataclass
class ClassifierTrainConfig:
    epochs: int = 4
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    noise_aug: float = 0.0  # std of Gaussian input noise during training


@dataclass
class AdversarialRecipe:
    """Inner-loop PGD settings for adversarial training."""

    epsilon: float = 8 / 255
    eta: float = 2 / 255
    n: int = 4


def train_classifier(
    images: torch.Tensor,
    labels: torch.Tensor,
    config: ClassifierTrainConfig = ClassifierTrainConfig(),
    spec: ClassifierSpec | None = None,
    adversarial: AdversarialRecipe | None = None,
    log_fn=None,
) -> SmallResNet:
    """Cross-entropy training; adversarial recipe swaps in PGD inputs."""
    if images.shape[0] == 0:
        raise ValueError("empty dataset")
    num_classes = int(labels.max()) + 1
    if spec is None:
        spec = ClassifierSpec(resolution=images.shape[-1], num_classes=num_classes)
    recipe = "adversarial" if adversarial is not None else "standard"
    spec = ClassifierSpec(**{**asdict(spec), "recipe": recipe})
    model = new_classifier(spec, seed=config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    gen = torch.Generator().manual_seed(derive_seed(config.seed, "classifier-train"))
    n = images.shape[0]

    for epoch in range(config.epochs):
        order = torch.randperm(n, generator=gen)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = images[idx], labels[idx]
            if config.noise_aug > 0:
                xb = torch.clamp(
                    xb + config.noise_aug * torch.randn(xb.shape, generator=gen, dtype=xb.dtype),
                    0.0,
                    1.0,
                )
            if adversarial is not None and adversarial.epsilon > 0:
                from .attacks import AttackConfig, pgd

                model.eval()
                cfg = AttackConfig(
                    epsilon=adversarial.epsilon,
                    eta=adversarial.eta,
                    n=adversarial.n,
                    seed=derive_seed(config.seed, "advtrain", epoch, start),
                )
                xb = pgd(model, xb, yb, cfg).x_n
                model.train()
            out = model(xb)
            loss = F.cross_entropy(out, yb)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite classifier loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
        if log_fn is not None:
            log_fn(epoch, float(loss.detach()))
    model.eval()
    return model


def accuracy(classifier: SmallResNet, images: torch.Tensor, labels: torch.Tensor, batch_size: int = 256) -> float:
    correct = 0
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            xb = images[start : start + batch_size]
            yb = labels[start : start + batch_size]
            correct += int((classifier(xb).argmax(dim=-1) == yb).sum())
    return correct / images.shape[0]


# ---------------------------------------------------------------------------
# Layered feature extraction over a classifier trunk

DEFAULT_STYLE_HANDLES = ("conv1", "conv2", "conv3", "conv4", "conv5")
DEFAULT_CONTENT_HANDLES = ("conv4",)


@dataclass
class FeatureExtractor:
    backbone: SmallResNet
    style_handles: tuple[str, ...] = DEFAULT_STYLE_HANDLES
    content_handles: tuple[str, ...] = DEFAULT_CONTENT_HANDLES

    def known_handles(self) -> list[str]:
        return [name for name, _ in self.backbone.conv_sequence]


def extract_features(extractor: FeatureExtractor, x: torch.Tensor, handles) -> list[torch.Tensor]:
    """Feature maps at the named conv layers, in handle order; differentiable."""
    known = dict(extractor.backbone.conv_sequence)
    for h in handles:
        if h not in known:
            raise KeyError(f"unknown feature handle: {h}")
    single = x.ndim == 3
    if single:
        x = x[None]
    captured: dict[str, torch.Tensor] = {}
    hooks = []
    try:
        for name, conv in extractor.backbone.conv_sequence:
            if name in handles:
                hooks.append(
                    conv.register_forward_hook(
                        lambda mod, inp, out, name=name: captured.__setitem__(name, out)
                    )
                )
        extractor.backbone(x)
    finally:
        for h in hooks:
            h.remove()
    feats = [captured[h] for h in handles]
    return [f[0] for f in feats] if single else feats


# ---------------------------------------------------------------------------
# Checkpoints (shared container format with the denoiser module)

def save_classifier(path, model: SmallResNet, seed: int | None = None) -> None:
    save_checkpoint(path, "classifier", asdict(model.spec), model.state_dict(), seed=seed)


def load_classifier(path) -> SmallResNet:
    payload = load_checkpoint(path, expect_kind="classifier")
    model = SmallResNet(ClassifierSpec(**payload["arch"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model

"""Training and persistence for the noise-prediction model.

The training objective is plain noise-prediction regression: draw a step
t uniformly, diffuse a clean image with known Gaussian noise, and
minimize the MSE between predicted and true noise.  All randomness is
drawn from one explicit generator so a (seed, thread-count) pair pins
the whole trajectory bitwise.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, asdict, field
from pathlib import Path

import torch

from .schedule import NoiseSchedule, make_schedule
from .seeding import derive_seed
from .unet import ArchSpec, NoisePredictor

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 0
    out_dir: str | None = None
    loss_window: int = 100


@dataclass
class TrainState:
    """Mutable training bookkeeping; enough to resume bit-identically."""

    step: int = 0
    seed: int = 0
    recent_losses: collections.deque = field(default_factory=lambda: collections.deque(maxlen=100))
    optimizer_state: dict | None = None
    generator_state: torch.Tensor | None = None

    def mean_recent_loss(self) -> float:
        if not self.recent_losses:
            return float("nan")
        return sum(self.recent_losses) / len(self.recent_losses)


def new_denoiser(spec: ArchSpec = ArchSpec(), seed: int = 0) -> NoisePredictor:
    """Construct a denoiser with seeded parameter init, leaving global RNG alone."""
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "denoiser-init"))
        model = NoisePredictor(spec)
    return model


def predict_noise(model: NoisePredictor, x_t: torch.Tensor, t) -> torch.Tensor:
    """Run the noise predictor; shape and resolution checks live in the model."""
    return model(x_t, t)


def training_loss(
    model: NoisePredictor,
    x0: torch.Tensor,
    t: torch.Tensor,
    noise: torch.Tensor,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """Noise-prediction MSE on a fixed (images, steps, noise) triple.

    ``x0`` is in [0, 1] and is mapped to the [-1, 1] working range here,
    at the module boundary.  Kept as a standalone function so gradient
    oracles can probe exactly what the optimizer sees.
    """
    x = 2.0 * x0 - 1.0
    a_bar = schedule.alpha_bars.to(x.dtype)[t - 1].view(-1, *([1] * (x.ndim - 1)))
    x_t = a_bar.sqrt() * x + (1.0 - a_bar).sqrt() * noise
    pred = model(x_t, t.to(x.dtype))
    return torch.mean((pred - noise) ** 2)


def train_denoiser(
    dataset: torch.Tensor,
    schedule: NoiseSchedule,
    config: TrainConfig = TrainConfig(),
    spec: ArchSpec = ArchSpec(),
    model: NoisePredictor | None = None,
    state: TrainState | None = None,
    log_fn=None,
) -> tuple[NoisePredictor, TrainState]:
    """Train (or continue training) a denoiser on images in [0, 1].

    Pass ``model`` and ``state`` from a loaded checkpoint to resume; the
    continuation is bit-identical to an uninterrupted run in
    single-threaded mode.
    """
    if dataset.numel() == 0 or dataset.shape[0] == 0:
        raise ValueError("empty dataset")
    if config.steps < 1 or config.batch_size < 1 or config.lr <= 0:
        raise ValueError("steps, batch_size and lr must be positive")

    if model is None:
        model = new_denoiser(spec, seed=config.seed)
    model.train()

    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    gen = torch.Generator(device="cpu")
    if state is None:
        state = TrainState(seed=config.seed)
        state.recent_losses = collections.deque(maxlen=config.loss_window)
        gen.manual_seed(derive_seed(config.seed, "denoiser-train"))
    else:
        if state.optimizer_state is not None:
            opt.load_state_dict(state.optimizer_state)
        if state.generator_state is not None:
            gen.set_state(state.generator_state)

    n = dataset.shape[0]
    T = schedule.T
    out_dir = Path(config.out_dir) if config.out_dir else None

    for _ in range(config.steps):
        idx = torch.randint(0, n, (config.batch_size,), generator=gen)
        t = torch.randint(1, T + 1, (config.batch_size,), generator=gen)
        noise = torch.randn(
            (config.batch_size, *dataset.shape[1:]), generator=gen, dtype=dataset.dtype
        )
        loss = training_loss(model, dataset[idx], t, noise, schedule)
        if not torch.isfinite(loss):
            raise RuntimeError(
                f"non-finite training loss {loss.item()} at step {state.step} "
                f"(lr={config.lr}, batch={config.batch_size})"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        state.step += 1
        state.recent_losses.append(float(loss.detach()))
        if log_fn is not None and state.step % 100 == 0:
            log_fn(state.step, state.mean_recent_loss())
        if out_dir and config.checkpoint_every and state.step % config.checkpoint_every == 0:
            _sync_state(state, opt, gen)
            save_denoiser(out_dir / f"denoiser_{state.step:07d}.pt", model, schedule, state)

    _sync_state(state, opt, gen)
    model.eval()
    return model, state


def _sync_state(state: TrainState, opt, gen) -> None:
    state.optimizer_state = opt.state_dict()
    state.generator_state = gen.get_state()


def denoising_mse(
    model: NoisePredictor,
    images: torch.Tensor,
    schedule: NoiseSchedule,
    seed: int = 0,
    draws: int = 4,
) -> float:
    """Held-out noise-prediction MSE over fixed (t, noise) draws."""
    model.eval()
    gen = torch.Generator().manual_seed(derive_seed(seed, "denoise-eval"))
    total = 0.0
    with torch.no_grad():
        for _ in range(draws):
            t = torch.randint(1, schedule.T + 1, (images.shape[0],), generator=gen)
            noise = torch.randn(images.shape, generator=gen, dtype=images.dtype)
            total += float(training_loss(model, images, t, noise, schedule))
    return total / draws


# ---------------------------------------------------------------------------
# Versioned checkpoint container (shared by denoiser and classifier modules)

def save_checkpoint(path, kind: str, arch: dict, state_dict: dict, **extra) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "arch": arch,
        "state_dict": state_dict,
    }
    payload.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path, expect_kind: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version}")
    if expect_kind is not None and payload.get("kind") != expect_kind:
        raise ValueError(f"expected a {expect_kind} checkpoint, got {payload.get('kind')}")
    return payload


def save_denoiser(path, model: NoisePredictor, schedule: NoiseSchedule, state: TrainState | None = None) -> None:
    extra = {"schedule": schedule.coefficients(), "seed": state.seed if state else None}
    if state is not None:
        extra["train_state"] = {
            "step": state.step,
            "recent_losses": list(state.recent_losses),
            "optimizer_state": state.optimizer_state,
            "generator_state": state.generator_state,
        }
    save_checkpoint(path, "denoiser", asdict(model.spec), model.state_dict(), **extra)


def load_denoiser(path) -> tuple[NoisePredictor, NoiseSchedule, TrainState]:
    payload = load_checkpoint(path, expect_kind="denoiser")
    arch = payload["arch"]
    arch["channel_mults"] = tuple(arch["channel_mults"])
    model = NoisePredictor(ArchSpec(**arch))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    sched_info = payload["schedule"]
    schedule = NoiseSchedule(betas=torch.tensor(sched_info["betas"], dtype=torch.float64))
    state = TrainState(seed=payload.get("seed") or 0)
    ts = payload.get("train_state")
    if ts:
        state.step = ts["step"]
        state.recent_losses = collections.deque(ts["recent_losses"], maxlen=100)
        state.optimizer_state = ts["optimizer_state"]
        state.generator_state = ts["generator_state"]
    return model, schedule, state

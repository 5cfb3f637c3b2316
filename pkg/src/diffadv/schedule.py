"""Diffusion coefficient tables and the closed-form forward process.

A schedule owns the beta/alpha/alpha-bar tables for T discrete steps
(t = 1..T, with alpha_bar(0) == 1 for the clean image).  A respaced
schedule keeps a strictly increasing subsequence of the parent indices
so samplers can take fewer reverse steps while reusing the parent
coefficients unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch


@dataclass(frozen=True)
class NoiseSchedule:
    """Coefficient tables for a T-step forward diffusion.

    ``betas[i]`` is the variance added at step t = i + 1.  All tables are
    float64 and immutable; cast at the point of use.
    """

    betas: torch.Tensor
    alphas: torch.Tensor = field(init=False)
    alpha_bars: torch.Tensor = field(init=False)

    def __post_init__(self):
        betas = torch.as_tensor(self.betas, dtype=torch.float64)
        if betas.ndim != 1 or betas.numel() < 1:
            raise ValueError("betas must be a non-empty 1-D sequence")
        if not torch.all((betas > 0) & (betas < 1)):
            raise ValueError("betas must lie strictly in (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", torch.cumprod(1.0 - betas, dim=0))

    @property
    def T(self) -> int:
        return self.betas.numel()

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal coefficient at absolute step t; t=0 is clean."""
        if not 0 <= t <= self.T:
            raise ValueError(f"step index {t} outside [0, {self.T}]")
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])

    def coefficients(self) -> dict:
        """Full-precision coefficient lists for manifest serialization."""
        return {
            "T": self.T,
            "betas": [float(b) for b in self.betas],
            "alpha_bars": [float(a) for a in self.alpha_bars],
        }


@dataclass(frozen=True)
class RespacedSchedule:
    """A uniform-stride subsequence of a parent schedule.

    ``indices`` are absolute parent steps (1-based), strictly increasing,
    ending at the parent's T.  Position k on the short ladder corresponds
    to absolute step ``indices[k]``; position -1 (clean) maps to step 0.
    """

    parent: NoiseSchedule
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) < 1:
            raise ValueError("respaced schedule needs at least one index")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("indices must be strictly increasing")
        if idx[0] < 1 or idx[-1] > self.parent.T:
            raise ValueError("indices must lie in [1, T]")
        object.__setattr__(self, "indices", idx)

    @property
    def T_s(self) -> int:
        return len(self.indices)

    def alpha_bar_at_position(self, k: int) -> float:
        """Effective alpha-bar at ladder position k; k=-1 is the clean image."""
        if k == -1:
            return 1.0
        return self.parent.alpha_bar(self.indices[k])

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        if t not in self.indices:
            raise ValueError(f"step {t} is not a retained index")
        return self.parent.alpha_bar(t)


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule from ``beta_start`` to ``beta_end`` over T steps.

    Defaults follow the standard 1000-step linear DDPM recipe.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    return NoiseSchedule(betas=betas)


def respace(schedule: NoiseSchedule, T_s: int) -> RespacedSchedule:
    """Keep a uniform-stride subsequence of length T_s ending at T."""
    T = schedule.T
    if not 1 <= T_s <= T:
        raise ValueError(f"T_s must lie in [1, {T}], got {T_s}")
    indices = tuple(-(-T * (k + 1) // T_s) for k in range(T_s))  # ceil division
    return RespacedSchedule(parent=schedule, indices=indices)


def diffuse(x0: torch.Tensor, t: int, schedule, noise: torch.Tensor) -> torch.Tensor:
    """Closed-form forward sample: sqrt(a_bar_t) * x0 + sqrt(1 - a_bar_t) * noise.

    Linear in (x0, noise); range-agnostic, so callers map to the model's
    working range before diffusing.  ``t`` is an absolute step in [1, T]
    (a retained index when ``schedule`` is respaced).
    """
    if x0.shape != noise.shape:
        raise ValueError(f"shape mismatch: x0 {tuple(x0.shape)} vs noise {tuple(noise.shape)}")
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    a_bar = schedule.alpha_bar(t)
    dtype = x0.dtype
    sqrt_ab = torch.tensor(a_bar, dtype=dtype).sqrt()
    sqrt_1mab = torch.tensor(1.0 - a_bar, dtype=dtype).sqrt()
    return sqrt_ab * x0 + sqrt_1mab * noise

"""Reverse diffusion sampling, masked repainting, and edit-based purification.

Everything here is differentiable with respect to the input image so the
attack loop can backpropagate through the whole chain.  Images cross the
module boundary in [0, 1]; internally the chain runs in [-1, 1].

The edit operation diffuses an input K steps up the respaced ladder and
denoises it back down; the masked variant re-samples the unmasked region
from the anchor's forward marginals after every reverse step, which makes
the final output match the anchor exactly outside the mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch.utils.checkpoint import checkpoint as _grad_checkpoint

from .schedule import RespacedSchedule, diffuse
from .seeding import derive_seed, make_generator


@dataclass
class SdeditConfig:
    """Reverse-chain knobs: step count K, DDPM-style noise vs DDIM, RNG seed."""

    K: int = 2
    stochastic: bool = False
    seed: int = 0
    grad_checkpoint: bool = False


@dataclass
class RepaintContext:
    """Mask (1 = editable) plus the anchor whose marginals fill the rest."""

    mask: torch.Tensor
    anchor: torch.Tensor

    def validate(self, x: torch.Tensor) -> None:
        m = self.mask
        if m.shape[-2:] != x.shape[-2:]:
            raise ValueError(f"mask spatial shape {tuple(m.shape[-2:])} != image {tuple(x.shape[-2:])}")
        if not torch.all((m == 0) | (m == 1)):
            raise ValueError("mask values must be exactly 0 or 1")
        if self.anchor.shape[-3:] != x.shape[-3:]:
            raise ValueError("anchor shape does not match image shape")


def _coeff(value: float, like: torch.Tensor) -> torch.Tensor:
    return torch.tensor(value, dtype=like.dtype, device=like.device)


def reverse_step(model, x_t: torch.Tensor, from_t: int, to_t: int, schedule: RespacedSchedule, config: SdeditConfig, noise: torch.Tensor | None = None) -> torch.Tensor:
    """One reverse step between absolute indices on the respaced ladder.

    Deterministic mode is the DDIM update; stochastic mode adds the
    posterior noise term (eta = 1).  Differentiable in ``x_t``.
    """
    if not from_t > to_t >= 0:
        raise ValueError(f"need from_t > to_t >= 0, got {from_t} -> {to_t}")
    ab_from = schedule.alpha_bar(from_t)
    ab_to = schedule.alpha_bar(to_t)

    eps = model(x_t, from_t)
    sqrt_ab_from = _coeff(ab_from, x_t).sqrt()
    sqrt_1m_from = _coeff(1.0 - ab_from, x_t).sqrt()
    x0_hat = (x_t - sqrt_1m_from * eps) / sqrt_ab_from

    if not config.stochastic:
        return _coeff(ab_to, x_t).sqrt() * x0_hat + _coeff(1.0 - ab_to, x_t).sqrt() * eps

    sigma2 = (1.0 - ab_to) / (1.0 - ab_from) * (1.0 - ab_from / ab_to) if to_t > 0 else 0.0
    dir_coeff = max(1.0 - ab_to - sigma2, 0.0)
    out = _coeff(ab_to, x_t).sqrt() * x0_hat + _coeff(dir_coeff, x_t).sqrt() * eps
    if sigma2 > 0:
        if noise is None:
            gen = make_generator(config.seed, "reverse-noise", from_t)
            noise = torch.randn(x_t.shape, generator=gen, dtype=x_t.dtype)
        out = out + _coeff(sigma2, x_t).sqrt() * noise
    return out


def _ladder(schedule: RespacedSchedule, K: int) -> list[tuple[int, int]]:
    """(from, to) absolute index pairs for K reverse steps ending at 0."""
    steps = []
    for k in range(K - 1, -1, -1):
        from_t = schedule.indices[k]
        to_t = schedule.indices[k - 1] if k > 0 else 0
        steps.append((from_t, to_t))
    return steps


def _check_k(K: int, schedule: RespacedSchedule) -> None:
    if not 0 <= K <= schedule.T_s:
        raise ValueError(f"K must lie in [0, {schedule.T_s}], got {K}")


def sdedit(model, x: torch.Tensor, K: int | None, schedule: RespacedSchedule, config: SdeditConfig) -> torch.Tensor:
    """Diffuse K retained steps up, denoise K steps back down.

    K=0 returns ``x`` untouched.  The output is not clamped; callers
    decide how to handle values that drift outside [0, 1].
    """
    if K is None:
        K = config.K
    _check_k(K, schedule)
    if K == 0:
        return x

    y = 2.0 * x - 1.0
    t_start = schedule.indices[K - 1]
    gen = make_generator(config.seed, "forward")
    fwd_noise = torch.randn(y.shape, generator=gen, dtype=y.dtype)
    y = diffuse(y, t_start, schedule, fwd_noise)

    for from_t, to_t in _ladder(schedule, K):
        if config.grad_checkpoint and torch.is_grad_enabled() and y.requires_grad:
            y = _grad_checkpoint(
                lambda inp, f=from_t, t=to_t: reverse_step(model, inp, f, t, schedule, config),
                y,
                use_reentrant=False,
            )
        else:
            y = reverse_step(model, y, from_t, to_t, schedule, config)
    return (y + 1.0) / 2.0


def generate(model, schedule: RespacedSchedule, shape: tuple, seed: int = 0, stochastic: bool = False) -> torch.Tensor:
    """Unconditional samples via the full reverse ladder from pure noise.

    Implemented as the edit operation at K = T_s from a mid-gray input:
    at the top of the ladder the forward marginal is indistinguishable
    from an isotropic Gaussian.
    """
    cfg = SdeditConfig(K=schedule.T_s, stochastic=stochastic, seed=seed)
    x = torch.full(shape, 0.5)
    with torch.no_grad():
        out = sdedit(model, x, schedule.T_s, schedule, cfg)
    return torch.clamp(out, 0.0, 1.0)


def rsdedit(model, ctx: RepaintContext, x_in: torch.Tensor, K: int | None, schedule: RespacedSchedule, config: SdeditConfig) -> torch.Tensor:
    """Mask-aware edit: reverse steps inside the mask, anchor marginals outside.

    After the final step the unmasked region is the anchor itself, so the
    output agrees with the anchor there exactly (up to float arithmetic).
    With an all-ones mask this reduces to ``sdedit`` under the same seed.
    """
    if K is None:
        K = config.K
    _check_k(K, schedule)
    ctx.validate(x_in)
    if K == 0:
        return x_in

    mask = ctx.mask.to(x_in.dtype)
    y = 2.0 * x_in - 1.0
    anchor_y = (2.0 * ctx.anchor - 1.0).detach()

    t_start = schedule.indices[K - 1]
    gen = make_generator(config.seed, "forward")
    fwd_noise = torch.randn(y.shape, generator=gen, dtype=y.dtype)
    y = diffuse(y, t_start, schedule, fwd_noise)

    # fixed per-call noise table so the unmasked trajectory is reproducible
    table_gen = make_generator(config.seed, "repaint-table")
    for from_t, to_t in _ladder(schedule, K):
        if config.grad_checkpoint and torch.is_grad_enabled() and y.requires_grad:
            y = _grad_checkpoint(
                lambda inp, f=from_t, t=to_t: reverse_step(model, inp, f, t, schedule, config),
                y,
                use_reentrant=False,
            )
        else:
            y = reverse_step(model, y, from_t, to_t, schedule, config)
        if to_t >= 1:
            z = torch.randn(y.shape, generator=table_gen, dtype=y.dtype)
            anchor_t = diffuse(anchor_y, to_t, schedule, z)
        else:
            anchor_t = anchor_y
        y = mask * y + (1.0 - mask) * anchor_t
    return (y + 1.0) / 2.0

"""The attack family: PGD baselines, diffusion-guided variants, style and patch attacks.

All bounded attacks share one engine so that the K=0 diffusion-guided
attack is the plain PGD trajectory bit-for-bit.  The engine differs only
in where the purifier sits and which tensor the loss gradient is taken
against: the attack input (full chain) or the purified image (the
constant-Jacobian approximation).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .sampler import RepaintContext, SdeditConfig, rsdedit, sdedit
from .schedule import RespacedSchedule
from .seeding import derive_seed, make_generator


class AttackError(RuntimeError):
    """Raised when an attack cannot proceed; carries the loss trace so far."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass
class AttackConfig:
    epsilon: float = 16 / 255
    eta: float = 2 / 255
    n: int = 10
    norm: str = "linf"  # linf | l2
    K: int = 0
    targeted: int | None = None
    seed: int = 0
    stochastic: bool = False
    grad_checkpoint: bool = False

    def __post_init__(self):
        if not 0.0 <= self.eta <= self.epsilon <= 1.0:
            raise ValueError(f"need 0 <= eta <= epsilon <= 1, got eta={self.eta}, epsilon={self.epsilon}")
        # n = 0 is a well-defined no-op (the patch-attack contract relies on it)
        if self.n < 0:
            raise ValueError(f"n must be >= 0, got {self.n}")
        if self.K < 0:
            raise ValueError(f"K must be >= 0, got {self.K}")
        if self.norm not in ("linf", "l2"):
            raise ValueError(f"norm must be 'linf' or 'l2', got {self.norm!r}")


@dataclass
class AttackOutput:
    x_n: torch.Tensor
    x_n0: torch.Tensor
    success_xn: torch.Tensor
    success_xn0: torch.Tensor
    loss_trace: list = field(default_factory=list)  # per iteration: per-sample losses
    pred_trace: list = field(default_factory=list)  # per iteration: per-sample predictions
    telemetry: dict = field(default_factory=dict)


@dataclass
class StyleConfig:
    style_image: torch.Tensor
    mask: torch.Tensor | None = None
    lambda_s: float = 4000.0
    lambda_c: float = 1.0
    eta_s: float = 0.01
    n_s: int = 100
    content_anchor: str = "original"  # or "style" to follow the two-loop recipe verbatim

    def __post_init__(self):
        if self.lambda_s < 0 or self.lambda_c < 0:
            raise ValueError("style and content weights must be >= 0")
        if self.n_s < 0:
            raise ValueError("n_s must be >= 0")
        if self.content_anchor not in ("original", "style"):
            raise ValueError(f"content_anchor must be 'original' or 'style', got {self.content_anchor!r}")


@dataclass
class TransformSpec:
    """Distribution of patch placements: background, scale, shift, brightness.

    ``base_size`` is the patch's nominal printed size in background
    pixels; the scale range multiplies it.  Defaults to the patch's own
    resolution when unset.
    """

    backgrounds: torch.Tensor
    scale_range: tuple[float, float] = (0.8, 1.2)
    translation_margin: int = 4
    brightness_range: tuple[float, float] = (0.5, 1.5)
    samples_per_step: int = 8
    base_size: int | None = None

    def __post_init__(self):
        if self.backgrounds.ndim != 4 or self.backgrounds.shape[0] == 0:
            raise ValueError("backgrounds must be a non-empty (M, C, H, W) tensor")
        if not (0 < self.scale_range[0] <= self.scale_range[1]):
            raise ValueError("scale range must be positive and ordered")
        if not (0 < self.brightness_range[0] <= self.brightness_range[1]):
            raise ValueError("brightness range must be positive and ordered")
        if self.translation_margin < 0 or self.samples_per_step < 1:
            raise ValueError("translation margin must be >= 0 and samples_per_step >= 1")


@dataclass(frozen=True)
class PatchTransform:
    """One deterministic draw from a TransformSpec."""

    bg_index: int
    scale: float
    brightness: float
    dy: int
    dx: int

    def __call__(self, patch: torch.Tensor, spec: TransformSpec) -> torch.Tensor:
        return apply_transform(self, patch, spec)


class GraphBytesMeter:
    """Sums bytes of tensors saved for backward inside the context.

    A CPU-friendly stand-in for accelerator memory statistics: the saved
    activations of the differentiated chain dominate an attack's peak
    memory, and the hook sees every one of them.
    """

    def __init__(self):
        self.bytes = 0

    def _pack(self, t):
        if isinstance(t, torch.Tensor):
            self.bytes += t.numel() * t.element_size()
        return t

    def __enter__(self):
        self._ctx = torch.autograd.graph.saved_tensors_hooks(self._pack, lambda t: t)
        self._ctx.__enter__()
        return self

    def __exit__(self, *exc):
        return self._ctx.__exit__(*exc)


# ---------------------------------------------------------------------------
# Projection

def project(x_candidate: torch.Tensor, x_anchor: torch.Tensor, epsilon: float, norm: str = "linf") -> torch.Tensor:
    """Project onto the epsilon-ball around the anchor, then into [0, 1]."""
    if x_candidate.shape != x_anchor.shape:
        raise ValueError(f"shape mismatch: {tuple(x_candidate.shape)} vs {tuple(x_anchor.shape)}")
    if norm == "linf":
        out = torch.clamp(x_candidate, x_anchor - epsilon, x_anchor + epsilon)
        return torch.clamp(out, 0.0, 1.0)
    if norm == "l2":
        single = x_candidate.ndim == 3
        cand = x_candidate[None] if single else x_candidate
        anch = x_anchor[None] if single else x_anchor
        delta = cand - anch
        norms = delta.flatten(start_dim=1).norm(dim=1)
        safe = norms.clamp_min(1e-12)
        scale = (epsilon / safe).view(-1, *([1] * (cand.ndim - 1)))
        inside = (norms <= epsilon).view(-1, *([1] * (cand.ndim - 1)))
        out = torch.where(inside, cand, anch + delta * scale)
        out = torch.clamp(out, 0.0, 1.0)
        return out[0] if single else out
    raise ValueError(f"unknown norm {norm!r}")


# ---------------------------------------------------------------------------
# Shared bounded-attack engine

def _as_batch(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (C, H, W) or (B, C, H, W), got {tuple(x.shape)}")


def _prep_mask(mask: torch.Tensor | None, x: torch.Tensor) -> torch.Tensor | None:
    if mask is None:
        return None
    m = mask.to(x.dtype)
    if m.ndim == 2:
        m = m[None]
    if m.ndim == 3:
        m = m[None]
    if m.shape[-2:] != x.shape[-2:]:
        raise ValueError(f"mask spatial shape {tuple(m.shape[-2:])} != image {tuple(x.shape[-2:])}")
    if not torch.all((m == 0) | (m == 1)):
        raise ValueError("mask values must be exactly 0 or 1")
    return m


def _adv_loss(classifier, image01, y, targeted):
    logit = classifier(torch.clamp(image01, 0.0, 1.0))
    target = y if targeted is None else torch.full_like(y, targeted)
    per_sample = F.cross_entropy(logit, target, reduction="none")
    return per_sample, logit


def _run_bounded_attack(classifier, x, y, cfg: AttackConfig, mask, purify, grad_through_chain: bool) -> AttackOutput:
    xb, single = _as_batch(x.detach())
    yb = y.view(-1) if torch.is_tensor(y) else torch.tensor([y])
    m = _prep_mask(mask, xb)
    anchor = xb.clone()
    x_c = xb.clone()
    x_t = xb.clone()

    loss_trace, pred_trace = [], []
    peak_graph = 0
    t_start = time.perf_counter()

    for it in range(cfg.n):
        meter = GraphBytesMeter()
        try:
            with meter:
                x_req = x_t.detach().requires_grad_(True)
                if grad_through_chain:
                    x0 = purify(x_req, it) if purify is not None else x_req
                    probe = x_req
                else:
                    with torch.no_grad():
                        x0 = purify(x_req, it) if purify is not None else x_req
                    x0 = x0.detach().requires_grad_(True)
                    probe = x0
                composed = m * x0 + (1.0 - m) * x_c if m is not None else x0
                per_sample, logit = _adv_loss(classifier, composed, yb, cfg.targeted)
                (g,) = torch.autograd.grad(per_sample.mean(), probe)
        except (RuntimeError, MemoryError) as e:
            if isinstance(e, MemoryError) or "memory" in str(e).lower():
                raise AttackError(
                    f"memory budget exceeded at K={cfg.K}, resolution={tuple(xb.shape)}",
                    trace=loss_trace,
                ) from e
            raise
        if not torch.isfinite(g).all():
            raise AttackError(f"non-finite gradient at iteration {it}", trace=loss_trace)
        peak_graph = max(peak_graph, meter.bytes)

        direction = g.sign() if cfg.targeted is None else -g.sign()
        step = cfg.eta * direction
        if m is not None:
            step = step * m
        with torch.no_grad():
            x_t = project(x_t + step, anchor, cfg.epsilon, cfg.norm)
        loss_trace.append([float(v) for v in per_sample.detach()])
        pred_trace.append([int(v) for v in logit.detach().argmax(dim=-1)])

    wall = time.perf_counter() - t_start
    x_n = x_t
    with torch.no_grad():
        x_n0 = purify(x_n, cfg.n) if purify is not None else x_n.clone()
        pred_n = classifier(torch.clamp(x_n, 0.0, 1.0)).argmax(dim=-1)
        pred_n0 = classifier(torch.clamp(x_n0, 0.0, 1.0)).argmax(dim=-1)
        ball_violation = float((x_n0 - anchor).abs().max() - cfg.epsilon)
    if cfg.targeted is None:
        success_xn, success_xn0 = pred_n != yb, pred_n0 != yb
    else:
        success_xn, success_xn0 = pred_n == cfg.targeted, pred_n0 == cfg.targeted

    if single:
        x_n, x_n0 = x_n[0], x_n0[0]
    return AttackOutput(
        x_n=x_n,
        x_n0=x_n0,
        success_xn=success_xn,
        success_xn0=success_xn0,
        loss_trace=loss_trace,
        pred_trace=pred_trace,
        telemetry={
            "wall_time_s": wall,
            "wall_time_per_sample_s": wall / xb.shape[0],
            "peak_graph_bytes": peak_graph,
            "x_n0_ball_violation": max(ball_violation, 0.0),
        },
    )


def _check_resolutions(classifier, model, x):
    res = x.shape[-1]
    clf_res = getattr(getattr(classifier, "spec", None), "resolution", None)
    mdl_res = getattr(getattr(model, "spec", None), "resolution", None)
    if clf_res is not None and clf_res != res:
        raise ValueError(f"classifier resolution {clf_res} != input {res}")
    if mdl_res is not None and mdl_res != res:
        raise ValueError(f"denoiser resolution {mdl_res} != input {res}")
    if clf_res is not None and mdl_res is not None and clf_res != mdl_res:
        raise ValueError(f"classifier resolution {clf_res} != denoiser resolution {mdl_res}")


def _purifier(model, schedule: RespacedSchedule, cfg: AttackConfig, mask):
    def purify(x, iteration):
        sd_cfg = SdeditConfig(
            K=cfg.K,
            stochastic=cfg.stochastic,
            seed=derive_seed(cfg.seed, "sdedit", iteration),
            grad_checkpoint=cfg.grad_checkpoint,
        )
        if mask is None:
            return sdedit(model, x, cfg.K, schedule, sd_cfg)
        ctx = RepaintContext(mask=_prep_mask(mask, x), anchor=x.detach())
        return rsdedit(model, ctx, x, cfg.K, schedule, sd_cfg)

    return purify


# ---------------------------------------------------------------------------
# Public attack operations

def pgd(classifier, x, y, cfg: AttackConfig, mask=None) -> AttackOutput:
    """Plain signed-gradient attack with per-step projection; x_n0 copies x_n."""
    return _run_bounded_attack(classifier, x, y, cfg, mask, purify=None, grad_through_chain=True)


def diff_pgd(classifier, model, x, y, cfg: AttackConfig, mask=None, *, schedule: RespacedSchedule) -> AttackOutput:
    """Diffusion-guided attack: loss at the purified image, gradient through the chain."""
    if cfg.K > schedule.T_s:
        raise ValueError(f"K={cfg.K} exceeds respaced step count {schedule.T_s}")
    _check_resolutions(classifier, model, x)
    purify = _purifier(model, schedule, cfg, mask)
    return _run_bounded_attack(classifier, x, y, cfg, mask, purify, grad_through_chain=True)


def diff_pgd_accel(classifier, model, x, y, cfg: AttackConfig, mask=None, *, schedule: RespacedSchedule) -> AttackOutput:
    """Constant-Jacobian variant: same loop, gradient taken at the purified image only.

    The sampler runs inference-only, so nothing along the chain is saved
    for backward; with the update being a sign step, any positive
    Jacobian constant yields the identical trajectory.
    """
    if cfg.K > schedule.T_s:
        raise ValueError(f"K={cfg.K} exceeds respaced step count {schedule.T_s}")
    _check_resolutions(classifier, model, x)
    purify = _purifier(model, schedule, cfg, mask)
    return _run_bounded_attack(classifier, x, y, cfg, mask, purify, grad_through_chain=False)


# ---------------------------------------------------------------------------
# Style stage

def gram(feature: torch.Tensor) -> torch.Tensor:
    """Channel Gram matrix F F^T over flattened space, normalized by C*S."""
    if feature.numel() == 0:
        raise ValueError("empty feature map")
    single = feature.ndim == 3
    f = feature[None] if single else feature
    b, c = f.shape[0], f.shape[1]
    flat = f.reshape(b, c, -1)
    s = flat.shape[2]
    g = flat @ flat.transpose(1, 2) / (c * s)
    return g[0] if single else g


def _style_content_losses(extractor, x_hat, style_cfg: StyleConfig, content_ref):
    from .models import extract_features

    style_feats = extract_features(extractor, x_hat, extractor.style_handles)
    target_feats = extract_features(extractor, style_cfg.style_image, extractor.style_handles)
    l_s = sum(
        torch.sum((gram(fh) - gram(ft)) ** 2) for fh, ft in zip(style_feats, target_feats)
    )
    content_feats = extract_features(extractor, x_hat, extractor.content_handles)
    ref_feats = extract_features(extractor, content_ref, extractor.content_handles)
    l_c = sum(torch.sum((fh - fr) ** 2) for fh, fr in zip(content_feats, ref_feats))
    return l_s, l_c


def style_transfer(extractor, x: torch.Tensor, style_cfg: StyleConfig) -> torch.Tensor:
    """Stage one: masked gradient descent on style + content loss only."""
    if x.shape[-2:] != style_cfg.style_image.shape[-2:]:
        raise ValueError("style reference resolution does not match the input")
    if style_cfg.n_s == 0:
        return x.detach().clone()
    m = _prep_mask(style_cfg.mask, x[None] if x.ndim == 3 else x)
    if m is not None and x.ndim == 3:
        m = m[0]
    content_ref = (x if style_cfg.content_anchor == "original" else style_cfg.style_image).detach()

    delta = torch.zeros_like(x, requires_grad=True)
    opt = torch.optim.Adam([delta], lr=style_cfg.eta_s)
    for it in range(style_cfg.n_s):
        x_hat = x + (m * delta if m is not None else delta)
        l_s, l_c = _style_content_losses(extractor, x_hat, style_cfg, content_ref)
        loss = style_cfg.lambda_s * l_s + style_cfg.lambda_c * l_c
        if not torch.isfinite(loss):
            raise AttackError(f"non-finite style loss at iteration {it}")
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        x_hat = x + (m * delta if m is not None else delta)
        return torch.clamp(x_hat, 0.0, 1.0)


def style_losses(extractor, x_hat, style_cfg: StyleConfig, x_original) -> tuple[float, float]:
    """Evaluate (style, content) losses at a point; used for reporting."""
    content_ref = x_original if style_cfg.content_anchor == "original" else style_cfg.style_image
    with torch.no_grad():
        l_s, l_c = _style_content_losses(extractor, x_hat, style_cfg, content_ref.detach())
    return float(l_s), float(l_c)


def style_attack(classifier, model, extractor, x, y, style_cfg: StyleConfig, cfg: AttackConfig, *, schedule: RespacedSchedule) -> AttackOutput:
    """Two-stage pipeline: style-only edit first, then the masked diffusion attack."""
    x_styled = style_transfer(extractor, x, style_cfg)
    return diff_pgd(classifier, model, x_styled, y, cfg, mask=style_cfg.mask, schedule=schedule)


# ---------------------------------------------------------------------------
# Physical-adapter simulation (expectation over transformation)

def sample_transform(spec: TransformSpec, seed: int) -> PatchTransform:
    """Draw one deterministic composite transform from the spec."""
    gen = make_generator(seed, "transform")
    bg_index = int(torch.randint(0, spec.backgrounds.shape[0], (1,), generator=gen))
    lo, hi = spec.scale_range
    scale = lo + (hi - lo) * float(torch.rand(1, generator=gen))
    blo, bhi = spec.brightness_range
    brightness = blo + (bhi - blo) * float(torch.rand(1, generator=gen))
    m = spec.translation_margin
    dy = int(torch.randint(-m, m + 1, (1,), generator=gen)) if m > 0 else 0
    dx = int(torch.randint(-m, m + 1, (1,), generator=gen)) if m > 0 else 0
    return PatchTransform(bg_index=bg_index, scale=scale, brightness=brightness, dy=dy, dx=dx)


def apply_transform(tf: PatchTransform, patch: torch.Tensor, spec: TransformSpec) -> torch.Tensor:
    """Scale, brighten, and paste the patch onto its background; differentiable in the patch."""
    bg = spec.backgrounds[tf.bg_index]
    c, h, w = bg.shape
    p = spec.base_size if spec.base_size else patch.shape[-1]
    target = max(1, int(round(p * tf.scale)))
    if target > h or target > w:
        raise ValueError(f"patch of scaled size {target} exceeds background {h}x{w}")
    scaled = F.interpolate(patch[None], size=(target, target), mode="bilinear", align_corners=False)[0]
    scaled = torch.clamp(scaled * tf.brightness, 0.0, 1.0)

    top = (h - target) // 2 + tf.dy
    left = (w - target) // 2 + tf.dx
    top = min(max(top, 0), h - target)
    left = min(max(left, 0), w - target)
    padded = F.pad(scaled, (left, w - left - target, top, h - top - target))
    region = F.pad(torch.ones(1, target, target, dtype=patch.dtype), (left, w - left - target, top, h - top - target))
    return bg * (1.0 - region) + padded * region


def scene_prediction(classifier, patch: torch.Tensor, spec: TransformSpec, seed: int, draws: int = 32) -> torch.Tensor:
    """Majority prediction of the classifier over transform draws of the patch."""
    votes = []
    with torch.no_grad():
        for j in range(draws):
            tf = sample_transform(spec, derive_seed(seed, "scene", j))
            comp = apply_transform(tf, patch, spec)
            votes.append(int(classifier(comp[None]).argmax(dim=-1)))
    return torch.tensor(votes).mode().values


def fooling_rate(classifier, patch: torch.Tensor, spec: TransformSpec, y_ref: int, seed: int, draws: int = 64, targeted: int | None = None) -> float:
    """Fraction of held-out transform draws on which the scene prediction leaves y_ref."""
    fooled = 0
    with torch.no_grad():
        for j in range(draws):
            tf = sample_transform(spec, derive_seed(seed, "holdout", j))
            comp = apply_transform(tf, patch, spec)
            pred = int(classifier(comp[None]).argmax(dim=-1))
            if targeted is None:
                fooled += pred != y_ref
            else:
                fooled += pred == targeted
    return fooled / draws


def diff_phys(classifier, model, patch: torch.Tensor, spec: TransformSpec, cfg: AttackConfig, *, schedule: RespacedSchedule) -> AttackOutput:
    """Unbounded patch optimization against the purified, transformed composite.

    Untargeted mode pushes away from the clean scene's majority label;
    targeted mode descends the loss toward ``cfg.targeted``.  No
    epsilon-ball projection is applied; the patch stays a valid image via
    a [0, 1] clamp.
    """
    if patch.ndim != 3:
        raise ValueError(f"patch must be (C, H, W), got {tuple(patch.shape)}")
    if cfg.K > schedule.T_s:
        raise ValueError(f"K={cfg.K} exceeds respaced step count {schedule.T_s}")
    model_res = getattr(getattr(model, "spec", None), "resolution", None)
    if model_res is not None and patch.shape[-1] != model_res:
        if spec.base_size is None:
            spec = TransformSpec(
                backgrounds=spec.backgrounds,
                scale_range=spec.scale_range,
                translation_margin=spec.translation_margin,
                brightness_range=spec.brightness_range,
                samples_per_step=spec.samples_per_step,
                base_size=patch.shape[-1],
            )
        patch = F.interpolate(
            patch[None], size=(model_res, model_res), mode="bilinear", align_corners=False
        )[0]
    y_ref = int(scene_prediction(classifier, patch, spec, derive_seed(cfg.seed, "reference")))
    y_t = torch.tensor([y_ref])

    x_t = patch.detach().clone()[None]  # model and chain operate batched
    loss_trace, pred_trace = [], []
    t_start = time.perf_counter()
    for it in range(cfg.n):
        x_req = x_t.detach().requires_grad_(True)
        sd_cfg = SdeditConfig(
            K=cfg.K,
            stochastic=cfg.stochastic,
            seed=derive_seed(cfg.seed, "sdedit", it),
            grad_checkpoint=cfg.grad_checkpoint,
        )
        x0 = sdedit(model, x_req, cfg.K, schedule, sd_cfg)
        losses = []
        preds = []
        for j in range(spec.samples_per_step):
            tf = sample_transform(spec, derive_seed(cfg.seed, "eot", it, j))
            comp = apply_transform(tf, torch.clamp(x0[0], 0.0, 1.0), spec)
            per_sample, logit = _adv_loss(classifier, comp[None], y_t, cfg.targeted)
            losses.append(per_sample[0])
            preds.append(int(logit.argmax(dim=-1)))
        loss = torch.stack(losses).mean()
        if not torch.isfinite(loss):
            raise AttackError(f"non-finite patch loss at iteration {it}", trace=loss_trace)
        (g,) = torch.autograd.grad(loss, x_req)
        if not torch.isfinite(g).all():
            raise AttackError(f"non-finite gradient at iteration {it}", trace=loss_trace)
        direction = g.sign() if cfg.targeted is None else -g.sign()
        with torch.no_grad():
            x_t = torch.clamp(x_t + cfg.eta * direction, 0.0, 1.0)
        loss_trace.append([float(loss.detach())])
        pred_trace.append(preds)
    wall = time.perf_counter() - t_start

    with torch.no_grad():
        final_cfg = SdeditConfig(
            K=cfg.K, stochastic=cfg.stochastic, seed=derive_seed(cfg.seed, "sdedit", cfg.n)
        )
        x_n0 = torch.clamp(sdedit(model, x_t, cfg.K, schedule, final_cfg), 0.0, 1.0)
    x_t, x_n0 = x_t[0], x_n0[0]
    eval_seed = derive_seed(cfg.seed, "final-eval")
    rate_n = fooling_rate(classifier, x_t, spec, y_ref, eval_seed, draws=16, targeted=cfg.targeted)
    rate_n0 = fooling_rate(classifier, x_n0, spec, y_ref, eval_seed, draws=16, targeted=cfg.targeted)
    return AttackOutput(
        x_n=x_t,
        x_n0=x_n0,
        success_xn=torch.tensor([rate_n >= 0.5]),
        success_xn0=torch.tensor([rate_n0 >= 0.5]),
        loss_trace=loss_trace,
        pred_trace=pred_trace,
        telemetry={
            "wall_time_s": wall,
            "reference_label": y_ref,
            "fooling_rate_xn": rate_n,
            "fooling_rate_xn0": rate_n0,
        },
    )

"""Evaluation harness: success rates, transferability, anti-purification.

Rates always travel with their sample counts; anything computed over
fewer than 50 samples is flagged as not significant.  Purified
evaluations share one purifier seed so every method faces the identical
purifier realization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .sampler import SdeditConfig, sdedit
from .schedule import RespacedSchedule

SIGNIFICANCE_MIN_COUNT = 50


@dataclass(frozen=True)
class RateEntry:
    rate: float
    count: int

    @property
    def significant(self) -> bool:
        return self.count >= SIGNIFICANCE_MIN_COUNT

    def as_dict(self) -> dict:
        return {"rate": self.rate, "count": self.count, "significant": self.significant}


@dataclass
class EvalReport:
    success: dict = field(default_factory=dict)          # method -> RateEntry
    success_curve: dict = field(default_factory=dict)    # method -> list[(iteration, rate)]
    transfer: dict = field(default_factory=dict)         # {"sources": [...], "targets": [...], "matrix": [[RateEntry]]}
    anti_purification: dict = field(default_factory=dict)  # sample kind -> RateEntry
    perturbation: dict = field(default_factory=dict)     # method -> {"linf_mean":, "l2_mean":}
    runtime: dict = field(default_factory=dict)          # method -> telemetry summary

    def as_dict(self) -> dict:
        def conv(v):
            if isinstance(v, RateEntry):
                return v.as_dict()
            if isinstance(v, dict):
                return {k: conv(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [conv(x) for x in v]
            return v

        return {
            "success": conv(self.success),
            "success_curve": conv(self.success_curve),
            "transfer": conv(self.transfer),
            "anti_purification": conv(self.anti_purification),
            "perturbation": conv(self.perturbation),
            "runtime": conv(self.runtime),
        }


def _gather(outputs, which: str) -> torch.Tensor:
    if not isinstance(outputs, (list, tuple)):
        outputs = [outputs]
    pieces = []
    for out in outputs:
        x = getattr(out, which) if not torch.is_tensor(out) else out
        pieces.append(x[None] if x.ndim == 3 else x)
    return torch.cat(pieces, dim=0)


def _predict_batched(classifier, images: torch.Tensor, batch_size: int = 128) -> torch.Tensor:
    preds = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            xb = torch.clamp(images[start : start + batch_size], 0.0, 1.0)
            preds.append(classifier(xb).argmax(dim=-1))
    return torch.cat(preds)


def select_correct(classifier, images: torch.Tensor, labels: torch.Tensor, n: int | None = None) -> torch.Tensor:
    """Indices of correctly classified samples (the attack evaluation pool)."""
    preds = _predict_batched(classifier, images)
    idx = torch.nonzero(preds == labels, as_tuple=False).flatten()
    return idx if n is None else idx[:n]


def success_rate(classifier, outputs, labels: torch.Tensor, which: str = "x_n", targeted: int | None = None) -> RateEntry:
    """Misclassification (or target-hit) rate of the chosen attack output."""
    images = _gather(outputs, which)
    if images.shape[0] == 0:
        raise ValueError("empty evaluation set")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"images/labels count mismatch: {images.shape[0]} vs {labels.shape[0]}")
    preds = _predict_batched(classifier, images)
    if targeted is None:
        hits = preds != labels
    else:
        hits = preds == targeted
    return RateEntry(rate=float(hits.float().mean()), count=int(labels.shape[0]))


def success_curve(outputs, labels: torch.Tensor, targeted: int | None = None) -> list[tuple[int, float]]:
    """Per-iteration success from the attack's prediction trace."""
    if not isinstance(outputs, (list, tuple)):
        outputs = [outputs]
    n_iter = len(outputs[0].pred_trace)
    curve = []
    for it in range(n_iter):
        preds = torch.tensor(sum((o.pred_trace[it] for o in outputs), []))
        if targeted is None:
            rate = float((preds != labels).float().mean())
        else:
            rate = float((preds == targeted).float().mean())
        curve.append((it + 1, rate))
    return curve


def purify_then_classify(
    classifier,
    model,
    x: torch.Tensor,
    purifier_cfg: SdeditConfig,
    schedule: RespacedSchedule,
    batch_size: int = 64,
) -> torch.Tensor:
    """Classify after pushing inputs back toward the data distribution."""
    single = x.ndim == 3
    xb = x[None] if single else x
    preds = []
    with torch.no_grad():
        for start in range(0, xb.shape[0], batch_size):
            chunk = xb[start : start + batch_size]
            purified = sdedit(model, chunk, purifier_cfg.K, schedule, purifier_cfg)
            preds.append(classifier(torch.clamp(purified, 0.0, 1.0)).argmax(dim=-1))
    preds = torch.cat(preds)
    return preds[0] if single else preds


def purified_success_rate(
    classifier, model, images: torch.Tensor, labels: torch.Tensor,
    purifier_cfg: SdeditConfig, schedule: RespacedSchedule, targeted: int | None = None,
) -> RateEntry:
    preds = purify_then_classify(classifier, model, images, purifier_cfg, schedule)
    hits = (preds != labels) if targeted is None else (preds == targeted)
    return RateEntry(rate=float(hits.float().mean()), count=int(labels.shape[0]))


def transfer_matrix(classifiers: list, outputs_per_source: list, labels: torch.Tensor, which: str = "x_n", targeted: int | None = None) -> list[list[RateEntry]]:
    """Entry (i, j): success of attacks crafted on classifier i against classifier j."""
    if len(classifiers) < 2:
        raise ValueError("transferability needs at least two classifiers")
    if len(outputs_per_source) != len(classifiers):
        raise ValueError("need one output set per source classifier")
    num_classes = {getattr(c.spec, "num_classes", None) for c in classifiers}
    if len(num_classes) != 1:
        raise ValueError("classifiers must share one label space")
    matrix = []
    for outputs in outputs_per_source:
        row = [success_rate(clf, outputs, labels, which=which, targeted=targeted) for clf in classifiers]
        matrix.append(row)
    return matrix


def anti_purification_report(
    classifier, model, samples: dict[str, torch.Tensor], labels: torch.Tensor,
    purifier_cfg: SdeditConfig, schedule: RespacedSchedule, targeted: int | None = None,
) -> dict[str, RateEntry]:
    """Post-purification success per sample kind, same purifier seed for all."""
    counts = {name: x.shape[0] for name, x in samples.items()}
    if len(set(counts.values())) > 1:
        raise ValueError(f"sample sets must share one evaluation set, got counts {counts}")
    report = {}
    for name, x in samples.items():
        if x.shape[0] == 0:
            report[name] = RateEntry(rate=0.0, count=0)
            continue
        report[name] = purified_success_rate(
            classifier, model, x, labels, purifier_cfg, schedule, targeted=targeted
        )
    return report


def perturbation_stats(x_adv: torch.Tensor, x: torch.Tensor) -> dict:
    delta = (x_adv - x).flatten(start_dim=1)
    return {
        "linf_mean": float(delta.abs().max(dim=1).values.mean()),
        "l2_mean": float(delta.norm(dim=1).mean()),
    }


# ---------------------------------------------------------------------------
# Rendering

def render_rate_table(title: str, entries: dict[str, RateEntry]) -> str:
    lines = [title, "-" * len(title)]
    width = max((len(k) for k in entries), default=8)
    for name, e in entries.items():
        sig = "" if e.significant else "  (n < 50, not significant)"
        lines.append(f"{name:<{width}}  {e.rate:7.3f}  n={e.count}{sig}")
    return "\n".join(lines) + "\n"


def render_transfer_table(sources: list[str], targets: list[str], matrix: list[list[RateEntry]]) -> str:
    width = max(len(s) for s in sources + targets) + 2
    header = " " * width + "".join(f"{t:>{width}}" for t in targets)
    lines = ["transfer matrix (crafted on row, tested on column)", header]
    for src, row in zip(sources, matrix):
        lines.append(f"{src:<{width}}" + "".join(f"{e.rate:>{width}.3f}" for e in row))
    return "\n".join(lines) + "\n"


def plot_success_curve(curves: dict[str, list[tuple[int, float]]], path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, curve in sorted(curves.items()):
        xs = [p[0] for p in curve]
        ys = [p[1] for p in curve]
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel("iterations")
    ax.set_ylabel("success rate")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def _bar_chart(entries: dict[str, RateEntry], ylabel: str, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = sorted(entries)
    values = [entries[n].rate for n in names]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(names, values)
    ax.set_ylabel(ylabel)
    ax.set_ylim(0, 1.05)
    for i, v in enumerate(values):
        ax.text(i, v + 0.02, f"{v:.2f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_transfer_bars(entries: dict[str, RateEntry], path) -> None:
    _bar_chart(entries, "off-source success rate", path)


def plot_antipurify_bars(entries: dict[str, RateEntry], path) -> None:
    _bar_chart(entries, "post-purification success rate", path)

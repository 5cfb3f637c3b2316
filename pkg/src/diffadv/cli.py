"""Command-line front end tying the lab together into reproducible runs.

Every command writes exactly one manifest into its output directory;
``rerun --from <dir>`` replays a command from that manifest.  Exit codes:
2 usage error, 3 missing checkpoint/file, 4 malformed config,
5 resolution mismatch, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import torch

from . import data as data_io
from . import evaluation as ev
from .attacks import (
    AttackConfig,
    StyleConfig,
    TransformSpec,
    diff_pgd,
    diff_pgd_accel,
    diff_phys,
    fooling_rate,
    pgd,
    style_attack,
)
from .denoiser import TrainConfig, load_denoiser, save_denoiser, train_denoiser
from .manifest import (
    ConfigError,
    RunManifest,
    dumps_stable,
    load_manifest,
    parse_fraction,
    read_config_file,
    resolve_config,
)
from .models import (
    AdversarialRecipe,
    ClassifierTrainConfig,
    FeatureExtractor,
    load_classifier,
    save_classifier,
    train_classifier,
)
from .sampler import SdeditConfig, generate
from .schedule import make_schedule, respace
from .seeding import derive_seed
from .unet import ArchSpec

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_CONFIG = 4
EXIT_RESOLUTION = 5


def _apply_execution_flags(params: dict) -> None:
    if params.get("deterministic"):
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    elif params.get("jobs"):
        torch.set_num_threads(int(params["jobs"]))


def _load_data(params: dict) -> tuple[torch.Tensor, torch.Tensor]:
    if params.get("data"):
        return data_io.load_dataset(params["data"])
    return data_io.make_desk_dataset(
        n_per_class=params["n_per_class"],
        resolution=params["resolution"],
        seed=params["data_seed"],
        num_classes=params["classes"],
        max_mix=params["max_mix"],
        jitter_deg=params["jitter_deg"],
    )

_DATA_DEFAULTS = {
    "data": "",
    "n_per_class": 400,
    "resolution": 32,
    "data_seed": 0,
    "classes": 8,
    "max_mix": 0.3,
    "jitter_deg": 8.0,
}

_EXEC_DEFAULTS = {"deterministic": False, "jobs": 0}


def _add_common(parser, extra_defaults: dict) -> None:
    parser.add_argument("--out", required=True, help="artifact directory")
    parser.add_argument("--config", default=None, help="KEY=VALUE config file")
    for key, default in extra_defaults.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            parser.add_argument(flag, action="store_const", const=True, default=None)
        elif isinstance(default, float):
            parser.add_argument(flag, type=parse_fraction, default=None)
        elif isinstance(default, int):
            parser.add_argument(flag, type=int, default=None)
        else:
            parser.add_argument(flag, type=str, default=None)


def _resolved(args, defaults: dict) -> dict:
    file_values = read_config_file(args.config) if args.config else None
    flag_values = {k: getattr(args, k) for k in defaults if hasattr(args, k)}
    return resolve_config(defaults, file_values, flag_values)


# ---------------------------------------------------------------------------
# Command handlers (each takes a resolved params dict plus the out dir)

TRAIN_DIFFUSION_DEFAULTS = {
    **_DATA_DEFAULTS,
    **_EXEC_DEFAULTS,
    "steps": 3000,
    "batch": 48,
    "lr": 3e-4,
    "seed": 0,
    "width": 24,
    "mults": "1,2",
    "timesteps": 1000,
    "beta_start": 1e-4,
    "beta_end": 0.02,
}


def cmd_train_diffusion(params: dict, out_dir: Path) -> dict:
    _apply_execution_flags(params)
    images, _ = _load_data(params)
    schedule = make_schedule(params["timesteps"], params["beta_start"], params["beta_end"])
    spec = ArchSpec(
        resolution=params["resolution"],
        base_width=params["width"],
        channel_mults=tuple(int(m) for m in str(params["mults"]).split(",")),
    )
    cfg = TrainConfig(
        steps=params["steps"], batch_size=params["batch"], lr=params["lr"], seed=params["seed"]
    )
    model, state = train_denoiser(images, schedule, cfg, spec=spec)
    ckpt = out_dir / "denoiser.pt"
    save_denoiser(ckpt, model, schedule, state)
    manifest = RunManifest("train-diffusion", params)
    manifest.add_seed("train", params["seed"])
    manifest.add_checkpoint("denoiser", ckpt)
    manifest.add_metric("final_loss", state.mean_recent_loss())
    manifest.extra("schedule", schedule.coefficients())
    manifest.finalize(out_dir)
    return {"final_loss": state.mean_recent_loss()}


TRAIN_CLASSIFIER_DEFAULTS = {
    **_DATA_DEFAULTS,
    **_EXEC_DEFAULTS,
    "epochs": 3,
    "batch": 128,
    "lr": 1e-3,
    "seed": 0,
    "width": 32,
    "noise_aug": 0.0,
    "adversarial": False,
    "adv_eps": 8 / 255,
    "adv_eta": 2 / 255,
    "adv_n": 4,
    "holdout": 0,
}


def cmd_train_classifier(params: dict, out_dir: Path) -> dict:
    _apply_execution_flags(params)
    images, labels = _load_data(params)
    holdout = params["holdout"]
    if holdout:
        images, labels = images[:-holdout], labels[:-holdout]
    from .models import ClassifierSpec

    spec = ClassifierSpec(
        resolution=params["resolution"],
        num_classes=int(labels.max()) + 1,
        base_width=params["width"],
    )
    adv = None
    if params["adversarial"]:
        adv = AdversarialRecipe(epsilon=params["adv_eps"], eta=params["adv_eta"], n=params["adv_n"])
    model = train_classifier(
        images,
        labels,
        ClassifierTrainConfig(
            epochs=params["epochs"],
            batch_size=params["batch"],
            lr=params["lr"],
            seed=params["seed"],
            noise_aug=params["noise_aug"],
        ),
        spec=spec,
        adversarial=adv,
    )
    ckpt = out_dir / "classifier.pt"
    save_classifier(ckpt, model, seed=params["seed"])
    from .models import accuracy

    train_acc = accuracy(model, images[:1000], labels[:1000])
    manifest = RunManifest("train-classifier", params)
    manifest.add_seed("train", params["seed"])
    manifest.add_checkpoint("classifier", ckpt)
    manifest.add_metric("train_accuracy", train_acc)
    manifest.finalize(out_dir)
    return {"train_accuracy": train_acc}


SAMPLE_DEFAULTS = {**_EXEC_DEFAULTS, "model": "", "num": 16, "ddim": 50, "seed": 0}


def cmd_sample(params: dict, out_dir: Path) -> dict:
    _apply_execution_flags(params)
    model, schedule, _ = load_denoiser(_require(params, "model"))
    rs = respace(schedule, params["ddim"])
    shape = (params["num"], model.spec.channels, model.spec.resolution, model.spec.resolution)
    samples = generate(model, rs, shape, seed=params["seed"])
    for i in range(samples.shape[0]):
        data_io.save_image(samples[i], out_dir / "samples" / f"{i:04d}.png")
    manifest = RunManifest("sample", params)
    manifest.add_seed("sample", params["seed"])
    manifest.add_checkpoint("denoiser", params["model"])
    manifest.add_output("samples", out_dir / "samples")
    manifest.add_metric("pixel_mean", float(samples.mean()))
    manifest.add_metric("pixel_std", float(samples.std()))
    manifest.finalize(out_dir)
    return {"pixel_mean": float(samples.mean()), "pixel_std": float(samples.std())}


ATTACK_DEFAULTS = {
    **_DATA_DEFAULTS,
    **_EXEC_DEFAULTS,
    "variant": "pgd",
    "classifier": "",
    "model": "",
    "eps": 16 / 255,
    "eta": 2 / 255,
    "n": 10,
    "norm": "linf",
    "ddim": 50,
    "k": 0,
    "targeted": -1,
    "seed": 0,
    "num": 50,
    "batch": 25,
    "mask": "",
    "mask_frac": 0.0,
    "style_ref": "",
    "style_weight": 4000.0,
    "content_weight": 1.0,
    "style_lr": 0.01,
    "style_iters": 100,
    "patch": "",
    "patch_size": 16,
    "bg_dir": "",
    "scale_min": 0.8,
    "scale_max": 1.2,
    "brightness_min": 0.5,
    "brightness_max": 1.5,
    "margin": 4,
    "eot_samples": 8,
}

ATTACK_VARIANTS = ("pgd", "diff-pgd", "diff-rpgd", "diff-pgd-acc", "style", "phys")


def _require(params: dict, key: str) -> str:
    value = params.get(key)
    if not value:
        raise ConfigError(f"missing required option --{key.replace('_', '-')}")
    return value


def cmd_attack(params: dict, out_dir: Path) -> dict:
    _apply_execution_flags(params)
    variant = params["variant"]
    if variant not in ATTACK_VARIANTS:
        raise ConfigError(f"unknown attack variant {variant!r}; choose from {ATTACK_VARIANTS}")
    classifier = load_classifier(_require(params, "classifier"))
    targeted = params["targeted"] if params["targeted"] >= 0 else None
    cfg = AttackConfig(
        epsilon=params["eps"],
        eta=params["eta"],
        n=params["n"],
        norm=params["norm"],
        K=params["k"],
        targeted=targeted,
        seed=params["seed"],
    )

    model = schedule = rs = None
    if variant != "pgd":
        model, schedule, _ = load_denoiser(_require(params, "model"))
        rs = respace(schedule, params["ddim"])

    if variant == "phys":
        return _attack_phys(params, out_dir, classifier, model, rs, cfg)

    images, labels = _load_data(params)
    pool = ev.select_correct(classifier, images, labels, n=params["num"])
    images, labels = images[pool], labels[pool]

    mask = None
    if params["mask"]:
        mask = data_io.load_mask(params["mask"])
    elif params["mask_frac"] > 0:
        mask = data_io.square_mask(images.shape[-1], params["mask_frac"])
    if variant == "diff-rpgd" and mask is None:
        raise ConfigError("diff-rpgd needs --mask or --mask-frac")

    outputs = []
    for start in range(0, images.shape[0], params["batch"]):
        xb = images[start : start + params["batch"]]
        yb = labels[start : start + params["batch"]]
        batch_cfg = AttackConfig(
            epsilon=cfg.epsilon, eta=cfg.eta, n=cfg.n, norm=cfg.norm, K=cfg.K,
            targeted=cfg.targeted, seed=derive_seed(cfg.seed, "batch", start),
        )
        if variant == "pgd":
            outputs.append(pgd(classifier, xb, yb, batch_cfg, mask=mask))
        elif variant in ("diff-pgd", "diff-rpgd"):
            outputs.append(diff_pgd(classifier, model, xb, yb, batch_cfg, mask=mask, schedule=rs))
        elif variant == "diff-pgd-acc":
            outputs.append(diff_pgd_accel(classifier, model, xb, yb, batch_cfg, mask=mask, schedule=rs))
        elif variant == "style":
            style_cfg = StyleConfig(
                style_image=data_io.load_image(_require(params, "style_ref")),
                mask=mask,
                lambda_s=params["style_weight"],
                lambda_c=params["content_weight"],
                eta_s=params["style_lr"],
                n_s=params["style_iters"],
            )
            extractor = FeatureExtractor(backbone=classifier)
            for i in range(xb.shape[0]):
                outputs.append(
                    style_attack(
                        classifier, model, extractor, xb[i], yb[i : i + 1], style_cfg,
                        batch_cfg, schedule=rs,
                    )
                )
    metrics = _persist_attack_run(params, out_dir, images, labels, outputs, cfg)
    return metrics


def _persist_attack_run(params, out_dir: Path, images, labels, outputs, cfg) -> dict:
    x_n = torch.cat([o.x_n if o.x_n.ndim == 4 else o.x_n[None] for o in outputs])
    x_n0 = torch.cat([o.x_n0 if o.x_n0.ndim == 4 else o.x_n0[None] for o in outputs])
    success_xn = torch.cat([o.success_xn for o in outputs])
    success_xn0 = torch.cat([o.success_xn0 for o in outputs])
    for i in range(images.shape[0]):
        data_io.save_image(images[i], out_dir / "inputs" / f"{i:04d}.png")
        data_io.save_image(x_n[i], out_dir / "adv" / f"{i:04d}.png")
        data_io.save_image(torch.clamp(x_n0[i], 0, 1), out_dir / "purified" / f"{i:04d}.png")
        data_io.save_image(
            data_io.perturbation_view(x_n[i], images[i]), out_dir / "delta_adv" / f"{i:04d}.png"
        )
        data_io.save_image(
            data_io.perturbation_view(torch.clamp(x_n0[i], 0, 1), images[i]),
            out_dir / "delta_purified" / f"{i:04d}.png",
        )
    trace = {
        "labels": [int(v) for v in labels],
        "success_xn": [bool(v) for v in success_xn],
        "success_xn0": [bool(v) for v in success_xn0],
        "loss_trace": [o.loss_trace for o in outputs],
        "pred_trace": [o.pred_trace for o in outputs],
        "telemetry": [o.telemetry for o in outputs],
        "config": {k: (v if not isinstance(v, Path) else str(v)) for k, v in params.items()},
    }
    (out_dir / "trace.json").write_text(dumps_stable(trace))
    pert = ev.perturbation_stats(x_n, images)
    metrics = {
        "success_rate_xn": float(success_xn.float().mean()),
        "success_rate_xn0": float(success_xn0.float().mean()),
        "count": int(images.shape[0]),
        **pert,
    }
    manifest = RunManifest("attack", params)
    manifest.add_seed("attack", cfg.seed)
    if params.get("classifier"):
        manifest.add_checkpoint("classifier", params["classifier"])
    if params.get("model"):
        manifest.add_checkpoint("denoiser", params["model"])
    for name in ("inputs", "adv", "purified", "delta_adv", "delta_purified"):
        manifest.add_output(name, out_dir / name)
    manifest.add_output("trace", out_dir / "trace.json")
    for k, v in metrics.items():
        manifest.add_metric(k, v)
    manifest.finalize(out_dir)
    return metrics


def _attack_phys(params, out_dir: Path, classifier, model, rs, cfg) -> dict:
    if params["patch"]:
        patch = data_io.load_image(params["patch"])
    else:
        gen_images, _ = _load_data(params)
        patch = torch.nn.functional.interpolate(
            gen_images[:1], size=(params["patch_size"], params["patch_size"]), mode="bilinear",
            align_corners=False,
        )[0]
    if params["bg_dir"]:
        backgrounds, _ = data_io.load_dataset(params["bg_dir"])
    else:
        bg_images, _ = _load_data(params)
        backgrounds = bg_images[:2]
    spec = TransformSpec(
        backgrounds=backgrounds,
        scale_range=(params["scale_min"], params["scale_max"]),
        translation_margin=params["margin"],
        brightness_range=(params["brightness_min"], params["brightness_max"]),
        samples_per_step=params["eot_samples"],
    )
    out = diff_phys(classifier, model, patch, spec, cfg, schedule=rs)
    data_io.save_image(patch, out_dir / "patch_clean.png")
    data_io.save_image(out.x_n, out_dir / "patch_adv.png")
    data_io.save_image(out.x_n0, out_dir / "patch_purified.png")
    y_ref = out.telemetry["reference_label"]
    eval_seed = derive_seed(cfg.seed, "cli-holdout")
    metrics = {
        "reference_label": y_ref,
        "fooling_rate_clean": fooling_rate(classifier, patch, spec, y_ref, eval_seed, draws=64, targeted=cfg.targeted),
        "fooling_rate_adv": fooling_rate(classifier, out.x_n, spec, y_ref, eval_seed, draws=64, targeted=cfg.targeted),
        "fooling_rate_purified": fooling_rate(classifier, out.x_n0, spec, y_ref, eval_seed, draws=64, targeted=cfg.targeted),
    }
    manifest = RunManifest("attack", params)
    manifest.add_seed("attack", cfg.seed)
    manifest.add_checkpoint("classifier", params["classifier"])
    manifest.add_checkpoint("denoiser", params["model"])
    for k, v in metrics.items():
        manifest.add_metric(k, v)
    manifest.finalize(out_dir)
    return metrics


PURIFY_DEFAULTS = {**_EXEC_DEFAULTS, "model": "", "images": "", "ddim": 50, "k": 5, "seed": 1234, "batch": 64}


def cmd_purify(params: dict, out_dir: Path) -> dict:
    _apply_execution_flags(params)
    model, schedule, _ = load_denoiser(_require(params, "model"))
    rs = respace(schedule, params["ddim"])
    src = Path(_require(params, "images"))
    paths = sorted(src.glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no .png images under {src}")
    images = torch.stack([data_io.load_image(p) for p in paths])
    sd_cfg = SdeditConfig(K=params["k"], seed=params["seed"])
    purified = []
    with torch.no_grad():
        for start in range(0, images.shape[0], params["batch"]):
            from .sampler import sdedit

            out = sdedit(model, images[start : start + params["batch"]], params["k"], rs, sd_cfg)
            purified.append(torch.clamp(out, 0.0, 1.0))
    purified = torch.cat(purified)
    for p, img in zip(paths, purified):
        data_io.save_image(img, out_dir / "purified" / p.name)
    manifest = RunManifest("purify", params)
    manifest.add_seed("purify", params["seed"])
    manifest.add_checkpoint("denoiser", params["model"])
    manifest.add_output("purified", out_dir / "purified")
    manifest.add_metric("count", len(paths))
    manifest.finalize(out_dir)
    return {"count": len(paths)}


EVAL_SUCCESS_DEFAULTS = {**_EXEC_DEFAULTS, "run": "", "classifier": "", "targeted": -1}


def _load_attack_artifacts(run_dir: Path):
    trace = json.loads((Path(run_dir) / "trace.json").read_text())
    labels = torch.tensor(trace["labels"], dtype=torch.long)
    inputs = torch.stack(
        [data_io.load_image(p) for p in sorted((Path(run_dir) / "inputs").glob("*.png"))]
    )
    x_n = torch.stack([data_io.load_image(p) for p in sorted((Path(run_dir) / "adv").glob("*.png"))])
    x_n0 = torch.stack(
        [data_io.load_image(p) for p in sorted((Path(run_dir) / "purified").glob("*.png"))]
    )
    return inputs, x_n, x_n0, labels, trace


def cmd_eval_success(params: dict, out_dir: Path) -> dict:
    _apply_execution_flags(params)
    classifier = load_classifier(_require(params, "classifier"))
    _, x_n, x_n0, labels, _ = _load_attack_artifacts(_require(params, "run"))
    targeted = params["targeted"] if params["targeted"] >= 0 else None
    rate_n = ev.success_rate(classifier, x_n, labels, targeted=targeted)
    rate_n0 = ev.success_rate(classifier, x_n0, labels, targeted=targeted)
    metrics = {"success_rate_xn": rate_n.as_dict(), "success_rate_xn0": rate_n0.as_dict()}
    manifest = RunManifest("eval-success", params)
    manifest.add_checkpoint("classifier", params["classifier"])
    for k, v in metrics.items():
        manifest.add_metric(k, v)
    manifest.finalize(out_dir)
    return metrics


EVAL_TRANSFER_DEFAULTS = {**_EXEC_DEFAULTS, "runs": "", "classifiers": "", "which": "x_n", "targeted": -1}


def cmd_eval_transfer(params: dict, out_dir: Path) -> dict:
    _apply_execution_flags(params)
    run_dirs = [s for s in _require(params, "runs").split(",") if s]
    clf_paths = [s for s in _require(params, "classifiers").split(",") if s]
    classifiers = [load_classifier(p) for p in clf_paths]
    targeted = params["targeted"] if params["targeted"] >= 0 else None
    outputs, labels = [], None
    for rd in run_dirs:
        _, x_n, x_n0, run_labels, _ = _load_attack_artifacts(rd)
        outputs.append(x_n if params["which"] == "x_n" else x_n0)
        labels = run_labels
    matrix = ev.transfer_matrix(classifiers, outputs, labels, which="x_n", targeted=targeted)
    names_src = [Path(r).name for r in run_dirs]
    names_tgt = [Path(c).stem for c in clf_paths]
    table = ev.render_transfer_table(names_src, names_tgt, matrix)
    (out_dir / "transfer.txt").write_text(table)
    metrics = {
        "matrix": [[e.as_dict() for e in row] for row in matrix],
        "sources": names_src,
        "targets": names_tgt,
    }
    manifest = RunManifest("eval-transfer", params)
    for k, v in metrics.items():
        manifest.add_metric(k, v)
    manifest.finalize(out_dir)
    print(table)
    return metrics


EVAL_PURIFY_DEFAULTS = {
    **_EXEC_DEFAULTS,
    "runs": "",  # name=dir,name=dir
    "classifier": "",
    "model": "",
    "ddim": 50,
    "purify_k": 5,
    "purify_seed": 1234,
    "targeted": -1,
}


def cmd_eval_purify(params: dict, out_dir: Path) -> dict:
    _apply_execution_flags(params)
    classifier = load_classifier(_require(params, "classifier"))
    model, schedule, _ = load_denoiser(_require(params, "model"))
    rs = respace(schedule, params["ddim"])
    targeted = params["targeted"] if params["targeted"] >= 0 else None
    samples, labels = {}, None
    for part in _require(params, "runs").split(","):
        name, run_dir = part.split("=", 1)
        _, x_n, x_n0, run_labels, _ = _load_attack_artifacts(run_dir)
        samples[f"{name}_xn"] = x_n
        samples[f"{name}_xn0"] = x_n0
        labels = run_labels
    pur_cfg = SdeditConfig(K=params["purify_k"], seed=params["purify_seed"])
    report = ev.anti_purification_report(classifier, model, samples, labels, pur_cfg, rs, targeted=targeted)
    table = ev.render_rate_table("post-purification success", report)
    (out_dir / "anti_purification.txt").write_text(table)
    ev.plot_antipurify_bars(report, out_dir / "anti_purification.png")
    metrics = {k: v.as_dict() for k, v in report.items()}
    manifest = RunManifest("eval-purify", params)
    manifest.add_seed("purify", params["purify_seed"])
    for k, v in metrics.items():
        manifest.add_metric(k, v)
    manifest.finalize(out_dir)
    print(table)
    return metrics


REPORT_DEFAULTS = {**_EXEC_DEFAULTS, "run": ""}


def cmd_report(params: dict, out_dir: Path) -> dict:
    _apply_execution_flags(params)
    run_dir = Path(_require(params, "run"))
    inputs, x_n, x_n0, labels, trace = _load_attack_artifacts(run_dir)
    report = ev.EvalReport()
    n = labels.shape[0]
    report.success["x_n"] = ev.RateEntry(
        rate=sum(trace["success_xn"]) / n, count=n
    )
    report.success["x_n0"] = ev.RateEntry(rate=sum(trace["success_xn0"]) / n, count=n)
    report.perturbation["x_n"] = ev.perturbation_stats(x_n, inputs)
    report.perturbation["x_n0"] = ev.perturbation_stats(x_n0, inputs)

    curve = {}
    outputs = _TraceView(trace)
    curve["attack"] = ev.success_curve(outputs, labels)
    report.success_curve = curve

    (out_dir / "report.json").write_text(dumps_stable(report.as_dict()))
    tables = ev.render_rate_table("attack success", report.success)
    (out_dir / "tables.txt").write_text(tables)
    ev.plot_success_curve(curve, out_dir / "success_curve.png")
    manifest = RunManifest("report", params)
    manifest.add_output("report", out_dir / "report.json")
    manifest.finalize(out_dir)
    print(tables)
    return report.as_dict()


class _TraceView:
    """Adapter exposing persisted traces with the attack-output interface."""

    def __init__(self, trace: dict):
        merged = []
        for per_run in trace["pred_trace"]:
            if not merged:
                merged = [list(step) for step in per_run]
            else:
                for acc, step in zip(merged, per_run):
                    acc.extend(step)
        self.pred_trace = merged


def cmd_rerun(params: dict, out_dir: Path) -> dict:
    source = load_manifest(_require(params, "source"))
    command = source["command"]
    config = dict(source["config"])
    if params.get("deterministic"):
        config["deterministic"] = True
    handler, _ = COMMANDS[command]
    return handler(config, out_dir)


RERUN_DEFAULTS = {**_EXEC_DEFAULTS, "source": ""}

COMMANDS = {
    "train-diffusion": (cmd_train_diffusion, TRAIN_DIFFUSION_DEFAULTS),
    "train-classifier": (cmd_train_classifier, TRAIN_CLASSIFIER_DEFAULTS),
    "sample": (cmd_sample, SAMPLE_DEFAULTS),
    "attack": (cmd_attack, ATTACK_DEFAULTS),
    "purify": (cmd_purify, PURIFY_DEFAULTS),
    "eval-success": (cmd_eval_success, EVAL_SUCCESS_DEFAULTS),
    "eval-transfer": (cmd_eval_transfer, EVAL_TRANSFER_DEFAULTS),
    "eval-purify": (cmd_eval_purify, EVAL_PURIFY_DEFAULTS),
    "report": (cmd_report, REPORT_DEFAULTS),
    "rerun": (cmd_rerun, RERUN_DEFAULTS),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffadv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, defaults) in COMMANDS.items():
        p = sub.add_parser(name)
        _add_common(p, defaults)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_USAGE
    handler, defaults = COMMANDS[args.command]
    try:
        params = _resolved(args, defaults)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics = handler(params, out_dir)
        print(dumps_stable({"command": args.command, "metrics": metrics}), end="")
        return EXIT_OK
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except ValueError as e:
        if "resolution" in str(e).lower():
            print(f"error: {e}", file=sys.stderr)
            return EXIT_RESOLUTION
        print(f"error: {e}", file=sys.stderr)
        return EXIT_OTHER
    except Exception as e:  # noqa: BLE001 - single diagnostic line, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())

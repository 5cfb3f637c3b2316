import json
from pathlib import Path

import pytest
import torch

from diffadv.cli import (
    EXIT_CONFIG,
    EXIT_MISSING,
    EXIT_OK,
    EXIT_RESOLUTION,
    EXIT_USAGE,
    main,
)
from diffadv.manifest import ConfigError, load_manifest, parse_fraction, read_config_file, resolve_config


def test_parse_fraction_equivalence():
    assert parse_fraction("16/255") == 16 / 255
    assert parse_fraction(str(16 / 255)) == 16 / 255
    assert parse_fraction("0.5") == 0.5
    with pytest.raises(ConfigError):
        parse_fraction("sixteen/255")
    with pytest.raises(ConfigError):
        parse_fraction("1/0")


def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("steps=5\nlr=3e-4  # comment\n\n# full line comment\nseed=2\n")
    values = read_config_file(cfg)
    assert values == {"steps": "5", "lr": "3e-4", "seed": "2"}
    bad = tmp_path / "bad.cfg"
    bad.write_text("not a pair\n")
    with pytest.raises(ConfigError):
        read_config_file(bad)


def test_config_precedence(tmp_path):
    defaults = {"steps": 10, "lr": 1e-3, "seed": 0}
    cfg = tmp_path / "c.cfg"
    cfg.write_text("steps=20\nlr=2/10\n")
    resolved = resolve_config(defaults, read_config_file(cfg), {"steps": 30, "lr": None, "seed": None})
    assert resolved == {"steps": 30, "lr": 0.2, "seed": 0}
    with pytest.raises(ConfigError):
        resolve_config(defaults, {"bogus": "1"}, {})


def test_unknown_flag_exits_2(capsys):
    assert main(["attack", "--out", "/tmp/x", "--no-such-flag"]) == EXIT_USAGE


def test_unknown_subcommand_exits_2():
    assert main(["frobnicate", "--out", "/tmp/x"]) == EXIT_USAGE


def test_missing_checkpoint_exits_3(tmp_path):
    rc = main(
        ["sample", "--out", str(tmp_path / "o"), "--model", str(tmp_path / "missing.pt")]
    )
    assert rc == EXIT_MISSING


def test_malformed_config_exits_4(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("garbage line\n")
    rc = main(["sample", "--out", str(tmp_path / "o"), "--config", str(bad)])
    assert rc == EXIT_CONFIG


@pytest.fixture(scope="module")
def tiny_artifacts(tmp_path_factory):
    """A minimal end-to-end CLI workspace: tiny denoiser + classifier + data."""
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    from diffadv.data import make_desk_dataset, save_dataset

    x, y = make_desk_dataset(6, resolution=8, seed=0)
    save_dataset(x, y, data_dir)

    assert (
        main(
            [
                "train-diffusion", "--out", str(root / "diff"), "--data", str(data_dir),
                "--steps", "5", "--batch", "4", "--width", "8", "--mults", "1",
                "--timesteps", "20", "--resolution", "8",
            ]
        )
        == EXIT_OK
    )
    assert (
        main(
            [
                "train-classifier", "--out", str(root / "clf"), "--data", str(data_dir),
                "--epochs", "1", "--batch", "16", "--width", "8", "--resolution", "8",
            ]
        )
        == EXIT_OK
    )
    return root, data_dir


def test_cli_end_to_end_attack_and_report(tiny_artifacts):
    root, data_dir = tiny_artifacts
    rc = main(
        [
            "attack", "--out", str(root / "run_pgd"), "--variant", "pgd",
            "--classifier", str(root / "clf" / "classifier.pt"),
            "--data", str(data_dir), "--num", "4", "--batch", "4",
            "--eps", "16/255", "--eta", "2/255", "--n", "2", "--resolution", "8",
        ]
    )
    assert rc == EXIT_OK
    run_dir = root / "run_pgd"
    manifest = load_manifest(run_dir)
    assert manifest["command"] == "attack"
    assert manifest["config"]["eps"] == 16 / 255
    assert (run_dir / "trace.json").exists()
    assert len(list((run_dir / "adv").glob("*.png"))) == 4

    # report regeneration is byte-identical
    assert main(["report", "--out", str(root / "rep1"), "--run", str(run_dir)]) == EXIT_OK
    assert main(["report", "--out", str(root / "rep2"), "--run", str(run_dir)]) == EXIT_OK
    for name in ("report.json", "tables.txt", "success_curve.png"):
        a = (root / "rep1" / name).read_bytes()
        b = (root / "rep2" / name).read_bytes()
        assert a == b, f"{name} differs between report regenerations"


def test_cli_attack_k0_diff_equals_pgd(tiny_artifacts):
    root, data_dir = tiny_artifacts
    common = [
        "--classifier", str(root / "clf" / "classifier.pt"),
        "--model", str(root / "diff" / "denoiser.pt"),
        "--data", str(data_dir), "--num", "4", "--batch", "4",
        "--eps", "16/255", "--eta", "2/255", "--n", "2", "--k", "0",
        "--ddim", "10", "--resolution", "8", "--seed", "3",
    ]
    assert main(["attack", "--out", str(root / "run_diff_k0"), "--variant", "diff-pgd", *common]) == EXIT_OK
    assert main(["attack", "--out", str(root / "run_pgd_k0"), "--variant", "pgd", *common]) == EXIT_OK
    for name in sorted((root / "run_diff_k0" / "adv").glob("*.png")):
        a = name.read_bytes()
        b = (root / "run_pgd_k0" / "adv" / name.name).read_bytes()
        assert a == b


def test_cli_resolution_mismatch_exits_5(tiny_artifacts, tmp_path):
    root, _ = tiny_artifacts
    from diffadv.data import make_desk_dataset, save_dataset

    x, y = make_desk_dataset(2, resolution=16, seed=0)
    wrong = tmp_path / "wrong_res"
    save_dataset(x, y, wrong)
    rc = main(
        [
            "attack", "--out", str(tmp_path / "r"), "--variant", "pgd",
            "--classifier", str(root / "clf" / "classifier.pt"),
            "--data", str(wrong), "--num", "2", "--batch", "2", "--n", "1",
        ]
    )
    assert rc == EXIT_RESOLUTION


def test_cli_rerun_reproduces_attack(tiny_artifacts):
    root, data_dir = tiny_artifacts
    args = [
        "attack", "--out", str(root / "orig"), "--variant", "pgd",
        "--classifier", str(root / "clf" / "classifier.pt"),
        "--data", str(data_dir), "--num", "3", "--batch", "3",
        "--n", "2", "--resolution", "8", "--deterministic",
    ]
    assert main(args) == EXIT_OK
    assert (
        main(["rerun", "--out", str(root / "replay"), "--source", str(root / "orig")]) == EXIT_OK
    )
    for name in sorted((root / "orig" / "adv").glob("*.png")):
        assert name.read_bytes() == (root / "replay" / "adv" / name.name).read_bytes()
    m1 = load_manifest(root / "orig")
    m2 = load_manifest(root / "replay")
    assert m1["metrics"] == m2["metrics"]


def test_manifest_records_checkpoint_digests(tiny_artifacts):
    root, _ = tiny_artifacts
    manifest = load_manifest(root / "diff")
    entry = manifest["checkpoints"]["denoiser"]
    assert len(entry["sha256"]) == 64
    assert manifest["schedule"]["T"] == 20
    assert manifest["tool_version"]

"""Run manifests, config files, and the flag-value parsing they share.

A manifest is the single JSON record in every artifact directory:
command, fully resolved config, seeds, checkpoint digests, output paths,
metrics, and timing.  Rerunning a command from its manifest in
deterministic mode must reproduce the artifacts bit for bit, so floats
are serialized with repr round-tripping (the json module already
guarantees this).
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

TOOL_VERSION = "0.1.0"
MANIFEST_NAME = "manifest.json"


class ConfigError(ValueError):
    """Malformed config file or flag value."""


def parse_fraction(text: str) -> float:
    """Accept '16/255' or a decimal literal; both parse to the same float."""
    s = str(text).strip()
    try:
        if "/" in s:
            num, den = s.split("/", 1)
            return float(num) / float(den)
        return float(s)
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigError(f"cannot parse fraction value {text!r}") from e


def read_config_file(path) -> dict[str, str]:
    """Plain-text KEY=VALUE pairs; '#' starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected KEY=VALUE, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{ln}: empty key")
        out[key] = value.strip()
    return out


def resolve_config(defaults: dict, file_values: dict | None, flag_values: dict) -> dict:
    """Precedence: command-line flags > config file > defaults."""
    resolved = dict(defaults)
    if file_values:
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, raw in file_values.items():
            resolved[key] = _coerce_like(defaults[key], raw, key)
    for key, val in flag_values.items():
        if val is not None:
            resolved[key] = val
    return resolved


def _coerce_like(default, raw: str, key: str):
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"key {key}: expected boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as e:
            raise ConfigError(f"key {key}: expected integer, got {raw!r}") from e
    if isinstance(default, float):
        return parse_fraction(raw)
    return raw


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    """Collects everything needed to replay and audit one command."""

    def __init__(self, command: str, config: dict):
        self.payload = {
            "tool_version": TOOL_VERSION,
            "command": command,
            "config": config,
            "seeds": {},
            "checkpoints": {},
            "outputs": {},
            "metrics": {},
            "timing": {},
        }
        self._t0 = time.perf_counter()

    def add_seed(self, name: str, value: int) -> None:
        self.payload["seeds"][name] = int(value)

    def add_checkpoint(self, name: str, path) -> None:
        self.payload["checkpoints"][name] = {"path": str(path), "sha256": sha256_file(path)}

    def add_output(self, name: str, path) -> None:
        self.payload["outputs"][name] = str(path)

    def add_metric(self, name: str, value) -> None:
        self.payload["metrics"][name] = value

    def extra(self, key: str, value) -> None:
        self.payload[key] = value

    def finalize(self, out_dir) -> Path:
        self.payload["timing"]["wall_clock_s"] = round(time.perf_counter() - self._t0, 3)
        try:
            import psutil

            self.payload["timing"]["peak_rss_bytes"] = psutil.Process().memory_info().rss
        except Exception:
            pass
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / MANIFEST_NAME
        path.write_text(dumps_stable(self.payload))
        return path


def dumps_stable(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def load_manifest(run_dir) -> dict:
    path = Path(run_dir)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    return json.loads(path.read_text())

"""Layered key=value configuration and the per-run manifest.

Resolution order: built-in defaults < config file < command-line flags.
The manifest is written into every output directory before any work starts
and holds the fully resolved configuration, so a run can be replayed from
the manifest alone.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

# Base layer. Optimizer and regularization scalars follow the pretraining
# configuration this toolkit reproduces; bsz/peak_lr/warmup/days_factor
# default to the best configuration found by the reference sweep.
DEFAULTS: dict[str, Any] = {
    # model
    "preset": "large",
    "dropout": 0.1,
    "attention_dropout": 0.1,
    # optimizer
    "weight_decay": 0.01,
    "adam_beta1": 0.9,
    "adam_beta2": 0.98,
    "adam_eps": 1e-6,
    "grad_clip": 0.0,
    "lr_decay": "linear",
    # training run
    "bsz": 4096,
    "peak_lr": 2e-3,
    "warmup": 0.06,
    "days_factor": 1.0,
    "budget_seconds": 86400.0,
    "seed": 0,
    "micro_bsz": 32,
    "calib_steps": 8,
    "dtype": "float32",
    "include_calibration_in_budget": False,
    # data pipeline
    "seq_len": 128,
    "copies": 10,
    "mask_prob": 0.15,
    "val_fraction": 0.005,
    "shard_size": 65536,
    # sweep
    "slots": 1,
}


def _coerce(key: str, raw: str) -> Any:
    """Parse a raw string to the type of the default for `key`."""
    default = DEFAULTS[key]
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean {key}={raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def load_config(path: str | Path) -> dict[str, Any]:
    """Parse a key=value config file against the known keys."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            near = difflib.get_close_matches(key, DEFAULTS.keys(), n=1)
            hint = f"; did you mean {near[0]!r}?" if near else ""
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}{hint}")
        try:
            values[key] = _coerce(key, value)
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: {e}") from e
    return values


def resolve_config(
    file_values: dict[str, Any] | None = None,
    overrides: dict[str, Any] | None = None,
) -> dict[str, Any]:
    """defaults < file < overrides; None-valued overrides are ignored."""
    resolved = dict(DEFAULTS)
    if file_values:
        resolved.update(file_values)
    if overrides:
        resolved.update({k: v for k, v in overrides.items() if v is not None})
    return resolved


@dataclass
class RunManifest:
    """What happened in this output directory, written before any work."""

    command: str
    config: dict[str, Any]
    seeds: list[int]
    code_version: str
    clock_mode: str
    outputs: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"command={self.command}",
            f"code_version={self.code_version}",
            f"clock_mode={self.clock_mode}",
            f"seeds={','.join(str(s) for s in self.seeds)}",
            f"outputs={','.join(self.outputs)}",
        ]
        for key in sorted(self.config):
            lines.append(f"config.{key}={self.config[key]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunManifest":
        fields: dict[str, str] = {}
        config: dict[str, str] = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            if key.startswith("config."):
                config[key[len("config."):]] = value
            else:
                fields[key] = value
        return cls(
            command=fields.get("command", ""),
            config=config,
            seeds=[int(s) for s in fields.get("seeds", "").split(",") if s],
            code_version=fields.get("code_version", ""),
            clock_mode=fields.get("clock_mode", "real"),
            outputs=[o for o in fields.get("outputs", "").split(",") if o],
        )


MANIFEST_NAME = "manifest.txt"


def write_manifest(out_dir: str | Path, manifest: RunManifest) -> Path:
    """Write (or verify) the single manifest of an output directory.

    A fresh directory gets the manifest before anything else. Re-running
    with the same command and config (a resume) keeps the original; anything
    else is refused rather than silently mixing two runs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / MANIFEST_NAME
    if path.exists():
        existing = RunManifest.from_text(path.read_text(encoding="utf-8"))
        same = (
            existing.command == manifest.command
            and existing.config == {k: str(v) for k, v in manifest.config.items()}
        )
        if not same:
            raise ConfigError(
                f"{path} already describes a different run; "
                "use a new --out directory or delete the old one"
            )
        return path
    path.write_text(manifest.to_text(), encoding="utf-8")
    return path


def read_manifest(out_dir: str | Path) -> RunManifest:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        raise ConfigError(f"no manifest under {out_dir}")
    return RunManifest.from_text(path.read_text(encoding="utf-8"))

"""key=value run configuration with strict keys and a provenance digest."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .edt import EdtConfig
from .factors import ProductLabelSpace, parse_factor_roster


class ConfigError(ValueError):
    """A config file or override is malformed."""


_DEFAULT_ROSTER = "color:cyclic:5,shape:categorical:3,scale:ordinal:3,pos_x:ordinal:8,pos_y:ordinal:8"


@dataclass
class RunConfig:
    """Everything a command needs; every field has a working default."""

    factors: str = _DEFAULT_ROSTER
    split: str = "paths:10,56"
    seed: int = 0
    l0: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    l3: float = 1.0
    pixel_distance: str = "bce"
    lr_aug: float = 1e-3
    lr_pred: float = 1e-4
    batch: int = 32
    aug_iters: int = 10000
    pred_iters: int = 5000
    aug_hidden: int = 512
    l3_max_power: int = 1
    use_aug: str = "learned"
    arms: str = "erm,edt-l0l3,edt-full,edt-oracle"
    n_seeds: int = 5
    law_batch: int = 128
    log_every: int = 100
    jobs: int = 0

    def space(self) -> ProductLabelSpace:
        try:
            return parse_factor_roster(self.factors)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def edt_config(self) -> EdtConfig:
        try:
            return EdtConfig(
                l0=self.l0, l1=self.l1, l2=self.l2, l3=self.l3,
                pixel_distance=self.pixel_distance,
                lr_aug=self.lr_aug, lr_pred=self.lr_pred,
                batch=self.batch,
                aug_iters=self.aug_iters, pred_iters=self.pred_iters,
                aug_hidden=self.aug_hidden, l3_max_power=self.l3_max_power,
                use_aug=self.use_aug, seed=self.seed, log_every=self.log_every,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def arm_list(self) -> list[str]:
        return [a.strip() for a in self.arms.split(",") if a.strip()]

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name!r}: {raw!r}") from exc


def parse_config_text(text: str) -> RunConfig:
    """Parse 'key = value' lines; unknown keys are rejected."""
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, value))
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def write_echo(cfg: RunConfig, out_dir):
    """Write the effective config next to the outputs for provenance."""
    path = out_dir / "config_echo.txt"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# digest {cfg.digest()}\n")
        fh.write(cfg.to_text())
    return path

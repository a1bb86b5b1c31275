"""Run configuration: an INI file with fixed sections and keys.

Unknown sections or keys are rejected with a :class:`ConfigError` naming the
offender. The resolved configuration (defaults filled in) hashes to a short
hex digest that names the run directory.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

__all__ = ["ConfigError", "RunConfig", "load_config"]

METHODS = ("sparse", "nnhash", "diffhash", "mm")


class ConfigError(ValueError):
    """Invalid configuration file or value."""


@dataclass
class ModelSection:
    m: int = 48
    T: int = 1
    beta: float = 3.0
    theta: float = 0.0
    alphabet: str = "ternary"


@dataclass
class LossSection:
    alpha: float = 0.1
    lam: float = 0.012
    margin: float = 40.0


@dataclass
class SgdSection:
    lr: float = 0.003
    gamma: float = 0.98
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 25
    seed: int = 0


@dataclass
class DataSection:
    features: str = ""
    labels: str = ""
    pairs: str = ""  # explicit pair list; otherwise sampled from labels
    n_pos: int = 1500
    neg_ratio: float = 3.0
    features_y: str = ""  # second modality (method = mm)
    mm_pairs: str = ""  # "kind a b s" lines (method = mm)


@dataclass
class MultimodalSection:
    mu1: float = 1.0
    mu2: float = 1.0


@dataclass
class ExperimentSection:
    radii: tuple[int, ...] = (0, 1, 2)
    R: int = 10
    K: int = 100


@dataclass
class RunSection:
    method: str = "sparse"


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    sgd: SgdSection = field(default_factory=SgdSection)
    data: DataSection = field(default_factory=DataSection)
    multimodal: MultimodalSection = field(default_factory=MultimodalSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def validate(self) -> None:
        if self.run.method not in METHODS:
            raise ConfigError(f"run.method must be one of {METHODS}, got {self.run.method!r}")
        if self.model.alphabet not in ("ternary", "binary"):
            raise ConfigError("model.alphabet must be 'ternary' or 'binary'")
        checks = [
            ("model.m", self.model.m >= 1),
            ("model.T", self.model.T >= 0),
            ("model.beta", self.model.beta > 0),
            ("model.theta", self.model.theta >= 0),
            ("loss.alpha", self.loss.alpha >= 0),
            ("loss.lam", self.loss.lam >= 0),
            ("loss.margin", self.loss.margin > 0),
            ("sgd.lr", self.sgd.lr > 0),
            ("sgd.gamma", 0 < self.sgd.gamma <= 1),
            ("sgd.momentum", 0 <= self.sgd.momentum < 1),
            ("sgd.batch_size", self.sgd.batch_size >= 1),
            ("sgd.epochs", self.sgd.epochs >= 1),
            ("data.n_pos", self.data.n_pos >= 0),
            ("data.neg_ratio", self.data.neg_ratio >= 0),
            ("multimodal.mu1", self.multimodal.mu1 >= 0),
            ("multimodal.mu2", self.multimodal.mu2 >= 0),
            ("experiment.R", self.experiment.R >= 1),
            ("experiment.K", self.experiment.K >= 1),
        ]
        for key, ok in checks:
            if not ok:
                raise ConfigError(f"{key} is out of range")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["experiment"]["radii"] = list(self.experiment.radii)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def to_ini(self) -> str:
        lines = []
        for sec in fields(self):
            lines.append(f"[{sec.name}]")
            for f in fields(getattr(self, sec.name)):
                v = getattr(getattr(self, sec.name), f.name)
                lines.append(f"{f.name} = {','.join(map(str, v)) if isinstance(v, tuple) else v}")
            lines.append("")
        return "\n".join(lines)


def _convert(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(p) for p in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw.strip()


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case (T, R, K)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from None
    cfg = RunConfig()
    sections = {f.name for f in fields(cfg)}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]")
        sec = getattr(cfg, name)
        known = {f.name: getattr(sec, f.name) for f in fields(sec)}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
            value = _convert(raw, known[key], f"{name}.{key}")
            if name == "data" and isinstance(value, str) and value and base_dir is not None:
                value = str((base_dir / value).resolve()) if not Path(value).is_absolute() else value
            setattr(sec, key, value)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    """Read an INI file; relative data paths resolve against its directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    return parse_config(path.read_text(), base_dir=path.parent.resolve())

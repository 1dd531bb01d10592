"""Pipeline configuration: sectioned INI files mapped onto dataclasses.

Every key has a default; unknown sections or keys are errors. Lists are
comma-separated, maps are ``key:value`` pairs separated by commas.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
import typing
from dataclasses import dataclass, field, fields

OUT_ENV = "FRAUDLAB_OUT"


@dataclass
class RunSection:
    seed: int = 42
    out_dir: str = "out"
    # existing corpus directory; empty means generate one
    input_dir: str = ""


@dataclass
class GenSection:
    n_transactions: int = 50_000
    n_cards: int = 500
    n_merchants: int = 120
    anomaly_rate: float = 0.015


@dataclass
class IngestSection:
    cap_quantile: float = 0.999
    cap: bool = True


@dataclass
class IForestSection:
    n_trees: int = 100
    contamination: float = 0.01
    subsample: int = 256


@dataclass
class OcsvmSection:
    nu: float = 0.01
    gamma: float = 0.1
    tol: float = 1e-3
    max_passes: int = 50
    subsample_cap: int = 10_000


@dataclass
class AutoencoderSection:
    max_epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    validation_fraction: float = 0.1
    patience: int = 10
    lr_patience: int = 5
    min_lr: float = 1e-5
    activation: str = "tanh"
    threshold_quantile: float = 0.99


@dataclass
class ClusterSection:
    k: int = 3
    n_init: int = 10
    max_iter: int = 300
    elbow_max_k: int = 10
    silhouette_sample: int = 2000
    eps: float = 0.25
    min_samples: int = 5


@dataclass
class RiskSection:
    weight_amount: float = 0.05
    weight_unusual_spend: float = 0.84
    weight_suspicious_sequence: float = 0.76
    weight_rapid_use: float = 0.53
    # score the top-5% mark is taken on: "composite" or "weighted"
    high_risk_on: str = "composite"

    def weights(self) -> dict:
        return {"amount": self.weight_amount, "unusual_spend": self.weight_unusual_spend,
                "suspicious_sequence": self.weight_suspicious_sequence, "rapid_use": self.weight_rapid_use}


@dataclass
class ArfSection:
    learning_rate: float = 0.01
    margin: float = 1.0
    tau_quantile: float = 0.95
    tau_window: int = 10_000
    warmup: int = 100
    batch_size: int = 32
    w_max: float = 5.0
    region_priors: dict = field(default_factory=lambda: {"Metro-Y": 0.005, "Tier2-Z": 0.01, "Rural-X": 0.02})
    volatility: float = 0.0
    legal_weight: float = 0.0


@dataclass
class SweepSection:
    contamination: list = field(default_factory=list)
    gamma: list = field(default_factory=list)


SECTIONS = {
    "run": RunSection, "gen": GenSection, "ingest": IngestSection, "iforest": IForestSection,
    "ocsvm": OcsvmSection, "autoencoder": AutoencoderSection, "cluster": ClusterSection,
    "risk": RiskSection, "arf": ArfSection, "sweep": SweepSection,
}


@dataclass
class PipelineConfig:
    run: RunSection = field(default_factory=RunSection)
    gen: GenSection = field(default_factory=GenSection)
    ingest: IngestSection = field(default_factory=IngestSection)
    iforest: IForestSection = field(default_factory=IForestSection)
    ocsvm: OcsvmSection = field(default_factory=OcsvmSection)
    autoencoder: AutoencoderSection = field(default_factory=AutoencoderSection)
    cluster: ClusterSection = field(default_factory=ClusterSection)
    risk: RiskSection = field(default_factory=RiskSection)
    arf: ArfSection = field(default_factory=ArfSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ValueError(f"unknown config section(s): {sorted(unknown)}")
        parts = {}
        for name, klass in SECTIONS.items():
            values = dict(d.get(name, {}))
            names = {f.name for f in fields(klass)}
            bad = set(values) - names
            if bad:
                raise ValueError(f"unknown key(s) in [{name}]: {sorted(bad)}")
            parts[name] = klass(**values)
        return cls(**parts)

    def to_ini(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for f in fields(getattr(self, name)):
                lines.append(f"{f.name} = {_format(getattr(getattr(self, name), f.name))}")
            lines.append("")
        return "\n".join(lines)

    def with_overrides(self, seed=None, out_dir=None) -> "PipelineConfig":
        d = self.to_dict()
        if seed is not None:
            d["run"]["seed"] = int(seed)
        if out_dir is not None:
            d["run"]["out_dir"] = str(out_dir)
        return PipelineConfig.from_dict(d)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, dict):
        return ", ".join(f"{k}:{v!r}" for k, v in value.items())
    if isinstance(value, (list, tuple)):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, kind, key: str):
    text = text.strip()
    origin = typing.get_origin(kind) or kind
    try:
        if kind is bool or kind == "bool":
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
        if origin in (list, "list"):
            return [float(x) for x in text.split(",") if x.strip()]
        if origin in (dict, "dict"):
            out = {}
            for item in filter(None, (x.strip() for x in text.split(","))):
                k, v = item.rsplit(":", 1)
                out[k.strip()] = float(v)
            return out
        return text
    except ValueError as exc:
        raise ValueError(f"bad value for {key}: {text!r}") from exc


def parse_ini(text: str) -> PipelineConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    cp.read_string(text)
    d = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        kinds = {f.name: f.type for f in fields(SECTIONS[section])}
        values = {}
        for key, raw in cp.items(section):
            if key not in kinds:
                raise ValueError(f"unknown key in [{section}]: {key}")
            values[key] = _parse(raw, kinds[key], f"{section}.{key}")
        d[section] = values
    return PipelineConfig.from_dict(d)


def load_config(path=None, seed=None, out_dir=None, environ=None) -> PipelineConfig:
    """Defaults, then the INI file, then FRAUDLAB_OUT, then explicit overrides."""
    cfg = PipelineConfig()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            cfg = parse_ini(fh.read())
    env = os.environ if environ is None else environ
    env_out = env.get(OUT_ENV)
    if env_out and out_dir is None:
        out_dir = env_out
    return cfg.with_overrides(seed=seed, out_dir=out_dir)

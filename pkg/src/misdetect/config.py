"""Run configuration: one YAML file, with command-line overrides applied on top."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .backends import BackendDescriptor
from .contrastive import DEFAULT_MASK_WEIGHTS, DEFAULT_TEMPERATURE
from .fusion import DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_M_VALUES, FusionConfig
from .labels import DEFAULT_COLUMN_MAP
from .reasoning import DEFAULT_CANDIDATES
from .reranking import DEFAULT_NEGATIVES
from .retrieval import DEFAULT_K

BACKEND_ROLES = ("embedder", "reasoner", "teacher", "judge", "reranker")


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    outputs: Path = Path("out")
    dataset: Path | None = None
    records: Path | None = None
    index: Path | None = None
    instances: Path | None = None
    distilled: Path | None = None
    predictions: Path | None = None
    truths: Path | None = None

    def output(self, name: str) -> Path:
        return self.outputs / name

    @property
    def records_path(self) -> Path:
        return self.records or self.output("records.jsonl")

    @property
    def index_path(self) -> Path:
        return self.index or self.output("index.bin")

    @property
    def distilled_path(self) -> Path:
        return self.distilled or self.output("distilled.jsonl")

    @property
    def predictions_path(self) -> Path:
        return self.predictions or self.output("predictions.jsonl")

    @property
    def truths_path(self) -> Path:
        return self.truths or self.records_path


@dataclass
class Hyperparameters:
    k: int = DEFAULT_K
    tau: float = DEFAULT_TEMPERATURE
    mask_weights: tuple[float, float, float] = DEFAULT_MASK_WEIGHTS
    m_candidates: int = DEFAULT_CANDIDATES
    m_negatives: int = DEFAULT_NEGATIVES
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    m_values: tuple[int, ...] = DEFAULT_M_VALUES

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not self.tau > 0:
            raise ConfigError("tau must be > 0")
        w = self.mask_weights
        if len(w) != 3 or not (1.0 >= w[0] >= w[1] >= w[2] >= 0.0):
            raise ConfigError("mask_weights must satisfy 1 >= w_exact >= w_type >= w_correct >= 0")
        if self.m_candidates < 1:
            raise ConfigError("m_candidates must be >= 1")
        if self.m_negatives < 0:
            raise ConfigError("m_negatives must be >= 0")
        if not self.m_values or min(self.m_values) < 1:
            raise ConfigError("m_values must be positive integers")
        try:
            FusionConfig(self.alpha, self.beta)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    backends: dict[str, BackendDescriptor] = field(default_factory=dict)
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    seed: int = 0
    workers: int = 1
    delimiter: str = ","
    column_map: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_COLUMN_MAP))
    max_rejection_rate: float = 0.1
    exclude_self: bool = False

    @property
    def fusion(self) -> FusionConfig:
        return FusionConfig(self.hyper.alpha, self.hyper.beta)

    def backend(self, role: str) -> BackendDescriptor:
        try:
            return self.backends[role]
        except KeyError:
            raise ConfigError(f"no backend configured for role {role!r}") from None

    def apply_overrides(self, **overrides: Any) -> RunConfig:
        for name in ("seed", "workers"):
            if overrides.get(name) is not None:
                setattr(self, name, overrides[name])
        for name in ("k", "alpha", "beta"):
            if overrides.get(name) is not None:
                setattr(self.hyper, name, overrides[name])
        self.validate()
        return self

    def validate(self) -> None:
        self.hyper.validate()
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0.0 <= self.max_rejection_rate <= 1.0:
            raise ConfigError("max_rejection_rate must be in [0, 1]")


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def config_from_dict(raw: Mapping[str, Any], base_dir: Path | str = ".") -> RunConfig:
    base = Path(base_dir)
    raw = dict(raw or {})
    known = {"paths", "backends", "hyperparameters", "seed", "workers", "ingest", "predict"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")

    praw = dict(raw.get("paths") or {})
    path_names = {f.name for f in fields(Paths)}
    if set(praw) - path_names:
        raise ConfigError(f"unknown path key(s): {sorted(set(praw) - path_names)}")
    paths = Paths(**{k: _resolve(base, v) for k, v in praw.items()})
    if paths.outputs is None or "outputs" not in praw:
        paths.outputs = base / "out"

    backends = {}
    for role, spec in (raw.get("backends") or {}).items():
        if role not in BACKEND_ROLES:
            raise ConfigError(f"unknown backend role {role!r}; expected one of {BACKEND_ROLES}")
        spec = dict(spec)
        if spec.get("kind") == "fixture":
            spec["endpoint"] = str(_resolve(base, spec.get("endpoint")))
        try:
            backends[role] = BackendDescriptor(**spec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"backend {role!r}: {exc}") from None

    hraw = dict(raw.get("hyperparameters") or {})
    hnames = {f.name for f in fields(Hyperparameters)}
    if set(hraw) - hnames:
        raise ConfigError(f"unknown hyperparameter(s): {sorted(set(hraw) - hnames)}")
    if "mask_weights" in hraw:
        hraw["mask_weights"] = tuple(float(x) for x in hraw["mask_weights"])
    if "m_values" in hraw:
        hraw["m_values"] = tuple(int(x) for x in hraw["m_values"])
    hyper = Hyperparameters(**hraw)

    ingest = dict(raw.get("ingest") or {})
    cfg = RunConfig(
        paths=paths,
        backends=backends,
        hyper=hyper,
        seed=int(raw.get("seed", 0)),
        workers=int(raw.get("workers", 1)),
        delimiter=ingest.get("delimiter", ","),
        column_map={**DEFAULT_COLUMN_MAP, **(ingest.get("column_map") or {})},
        max_rejection_rate=float(ingest.get("max_rejection_rate", 0.1)),
        exclude_self=bool((raw.get("predict") or {}).get("exclude_self", False)),
    )
    cfg.validate()
    return cfg


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    return config_from_dict(raw, path.parent)

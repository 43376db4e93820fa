"""Run configuration: one TOML file with sections, plus command-line overrides."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import tomli_w

from .errors import ConfigError
from .llm.backend import BackendConfig
from .optimizer import OptimizerConfig, RewardMode
from .runstore import config_hash

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class PathsConfig:
    catalog: str = "catalog.jsonl"
    train: str = "train.jsonl"
    test: str = "test.jsonl"
    valid: str = ""
    run_dir: str = ""  # empty: <runs_root>/<timestamp>-<data hash>
    runs_root: str = "runs"


@dataclass(frozen=True)
class IngestConfig:
    n_initial: int = 100
    seed: int = 0


@dataclass(frozen=True)
class RerankerConfig:
    k_filter: int = 20
    scorer: str = "lexical"  # "lexical" | "remote"
    endpoint: str = ""


@dataclass(frozen=True)
class MetricsConfig:
    cutoffs: tuple[int, ...] = (1, 5)


_SECTIONS = {
    "paths": PathsConfig,
    "ingest": IngestConfig,
    "reranker": RerankerConfig,
    "backend": BackendConfig,
    "optimizer": OptimizerConfig,
    "metrics": MetricsConfig,
}


@dataclass(frozen=True)
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    reranker: RerankerConfig = field(default_factory=RerankerConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self) -> None:
        k = self.reranker.k_filter
        if not self.metrics.cutoffs or min(self.metrics.cutoffs) < 1:
            raise ConfigError("metrics.cutoffs must be positive integers")
        if not self.ingest.n_initial > k:
            raise ConfigError(f"ingest.n_initial ({self.ingest.n_initial}) must exceed reranker.k_filter ({k})")
        if k < max(self.metrics.cutoffs):
            raise ConfigError(f"reranker.k_filter ({k}) must be >= the largest cutoff ({max(self.metrics.cutoffs)})")
        if self.reranker.scorer not in ("lexical", "remote"):
            raise ConfigError(f"unknown scorer {self.reranker.scorer!r}")
        if self.reranker.scorer == "remote" and not self.reranker.endpoint:
            raise ConfigError("remote scorer needs reranker.endpoint")

    # -- (de)serialization ----------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: str | Path = ".") -> RunConfig:
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        sections = {}
        for name, kind in _SECTIONS.items():
            raw = dict(data.get(name, {}))
            allowed = {f.name for f in fields(kind)}
            extra = set(raw) - allowed
            if extra:
                raise ConfigError(f"unknown key(s) in [{name}]: {sorted(extra)}")
            if name == "metrics" and "cutoffs" in raw:
                raw["cutoffs"] = tuple(raw["cutoffs"])
            try:
                sections[name] = kind(**raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{name}]: {exc}") from None
        return cls(**sections, base_dir=Path(base_dir))

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for name in _SECTIONS:
            section = asdict(getattr(self, name))
            for key, value in section.items():
                if isinstance(value, RewardMode):
                    section[key] = value.value
                elif isinstance(value, tuple):
                    section[key] = list(value)
            out[name] = section
        return out

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str, base_dir: str | Path = ".") -> RunConfig:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from None
        return cls.from_dict(data, base_dir)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.loads(path.read_text(encoding="utf-8"), base_dir=path.parent)

    # -- helpers ---------------------------------------------------------------

    def resolve(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def with_overrides(self, *, seed: int | None = None, backend: str | None = None,
                       mock_script: str | None = None, run_dir: str | None = None,
                       max_trials: int | None = None) -> RunConfig:
        cfg = self
        try:
            if seed is not None:
                cfg = replace(cfg, ingest=replace(cfg.ingest, seed=seed),
                              optimizer=replace(cfg.optimizer, seed=seed))
            if backend is not None:
                cfg = replace(cfg, backend=replace(cfg.backend, kind=backend))
            if mock_script is not None:
                cfg = replace(cfg, backend=replace(cfg.backend, mock_script=str(Path(mock_script).resolve())))
            if run_dir is not None:
                cfg = replace(cfg, paths=replace(cfg.paths, run_dir=str(Path(run_dir).resolve())))
            if max_trials is not None:
                cfg = replace(cfg, optimizer=replace(cfg.optimizer, max_trials=max_trials))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cfg

    def data_hash(self) -> str:
        """Hash of everything that determines the candidate sets."""
        d = self.to_dict()
        paths = {k: v for k, v in d["paths"].items() if k not in ("run_dir", "runs_root")}
        return config_hash({"paths": paths, "ingest": d["ingest"], "reranker": d["reranker"]})

    def require_files(self, *keys: str) -> None:
        for key in keys:
            value = getattr(self.paths, key)
            if not value:
                raise ConfigError(f"paths.{key} is not set")
            if not self.resolve(value).is_file():
                raise ConfigError(f"paths.{key}: file not found: {self.resolve(value)}")
        if self.backend.kind == "mock" and self.backend.mock_script:
            if not self.resolve(self.backend.mock_script).is_file():
                raise ConfigError(f"backend.mock_script: file not found: {self.backend.mock_script}")

"""Pipeline configuration: a TOML file with environment overrides for service endpoints and keys."""
from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .learners import KINDS


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    main_board: str | None = None
    sme: str | None = None
    gmp: str | None = None
    news: str | None = None
    macro: str | None = None
    prospectus_dir: str | None = None
    cache_dir: str = ".ipo_cache"
    output_dir: str = "ipo_out"


@dataclass
class Services:
    embed_url: str | None = None
    embed_model: str | None = None
    embed_dimension: int = 768
    embed_max_input: int = 8192
    gen_url: str | None = None
    gen_model: str | None = None
    temperature: float = 0.0
    timeout: float = 60.0
    retries: int = 2
    max_in_flight: int = 4
    offline_dimension: int = 256


@dataclass
class FeatureSection:
    imputation: str = "median"
    rare_category_threshold: int = 5


@dataclass
class LearnerSection:
    budget: int = 1
    folds: int = 5
    kinds: list[str] = field(default_factory=lambda: list(KINDS))


@dataclass
class TextModelSection:
    kinds: list[str] = field(default_factory=lambda: list(KINDS))
    budget: int = 1
    folds: int = 5
    min_texts: int = 20


@dataclass
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    services: Services = field(default_factory=Services)
    features: FeatureSection = field(default_factory=FeatureSection)
    learners: LearnerSection = field(default_factory=LearnerSection)
    text_models: TextModelSection = field(default_factory=TextModelSection)
    seed: int = 42
    base_dir: Path = field(default=Path("."), repr=False)

    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.path(self.paths.output_dir)

    @property
    def cache_dir(self) -> Path:
        return self.path(self.paths.cache_dir)

    def digest(self) -> str:
        obj = asdict(self)
        obj.pop("base_dir")
        obj["services"].pop("embed_url", None)
        obj["services"].pop("gen_url", None)
        return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()

    def validate(self) -> None:
        if self.paths.main_board is None and self.paths.sme is None:
            raise ConfigError("paths.main_board or paths.sme must be set")
        for name in ("main_board", "sme", "gmp", "news", "macro", "prospectus_dir"):
            value = getattr(self.paths, name)
            if value is not None and not self.path(value).exists():
                raise ConfigError(f"paths.{name} does not exist: {self.path(value)}")
        if self.features.rare_category_threshold < 1:
            raise ConfigError("features.rare_category_threshold must be >= 1")
        for section in (self.learners, self.text_models):
            unknown = set(section.kinds) - set(KINDS)
            if unknown:
                raise ConfigError(f"unknown learner kinds {sorted(unknown)}; choose from {list(KINDS)}")
            if section.budget < 1:
                raise ConfigError("budget must be >= 1")


_SECTIONS = {"paths": Paths, "services": Services, "features": FeatureSection, "learners": LearnerSection,
             "text_models": TextModelSection}


def load_config(path: str | Path | None) -> PipelineConfig:
    raw: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        base = path.parent
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = raw.pop(name, {})
        try:
            kwargs[name] = cls(**section)
        except TypeError as exc:
            raise ConfigError(f"[{name}]: {exc}") from exc
    seed = raw.pop("seed", 42)
    if raw:
        raise ConfigError(f"unknown config keys: {sorted(raw)}")
    cfg = PipelineConfig(seed=int(seed), base_dir=base, **kwargs)
    env = os.environ
    cfg.services.embed_url = env.get("IPO_EMBED_URL", cfg.services.embed_url)
    cfg.services.gen_url = env.get("IPO_GEN_URL", cfg.services.gen_url)
    return cfg

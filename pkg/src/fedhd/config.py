"""Plain-text run configuration.

Format: ``[section]`` headers followed by ``key = value`` lines; ``#`` starts
a comment. Lists are comma separated, nested lists (class priors) separate
rows with ``;``. Unknown sections or keys are rejected with their line
number.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .cohort import CohortSpec
from .distill import DistillConfig
from .federation import ARMS, CurriculumConfig, ProtocolConfig
from .mil import TrainConfig
from .privacy import MiaConfig


class ConfigError(ValueError):
    pass


@dataclass
class Ablation:
    fdd_only: bool = False
    o2o: bool = True
    gma: bool = True
    cbf: bool = True


@dataclass
class RunSection:
    seeds: list = field(default_factory=lambda: [0])
    out: str = "runs"
    threads: int = 1
    arms: list = field(default_factory=lambda: list(ARMS))


@dataclass
class RunConfig:
    cohort: CohortSpec = field(default_factory=CohortSpec)
    distill: DistillConfig = field(default_factory=DistillConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    mia: MiaConfig = field(default_factory=MiaConfig)
    ablation: Ablation = field(default_factory=Ablation)
    run: RunSection = field(default_factory=RunSection)

    def effective_distill(self) -> DistillConfig:
        d = self.distill
        if self.ablation.fdd_only:
            return dataclasses.replace(d, o2o=False, gma=False)
        return dataclasses.replace(d, o2o=self.ablation.o2o and d.o2o,
                                   gma=self.ablation.gma and d.gma)

    def protocol(self, seed: int, arms=None) -> ProtocolConfig:
        return ProtocolConfig(seed=seed, epochs=self.train.epochs,
                              distill=self.effective_distill(), train=self.train,
                              curriculum=self.curriculum, arms=tuple(arms or self.run.arms),
                              threads=self.run.threads, cbf=self.ablation.cbf)


_SECTIONS = {f.name: f for f in dataclasses.fields(RunConfig)}

# fields whose defaults are None need an explicit parser
_OVERRIDES = {("cohort", "class_priors"): "matrix", ("distill", "cov_mode"): "str"}


def _kind(section: str, key: str, default):
    if (section, key) in _OVERRIDES:
        return _OVERRIDES[(section, key)]
    if isinstance(default, bool):
        return "bool"
    if isinstance(default, int):
        return "int"
    if isinstance(default, float):
        return "float"
    if isinstance(default, list):
        return "list"
    return "str"


def _scalar(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _convert(kind: str, raw: str):
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "list":
        return [_scalar(p.strip()) for p in raw.split(",") if p.strip()]
    if kind == "matrix":
        return [[float(p) for p in row.split(",")] for row in raw.split(";") if row.strip()]
    if raw.lower() in ("none", "auto", ""):
        return None
    return raw


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, dict] = {name: {} for name in _SECTIONS}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{source}:{lineno}: malformed section header {line!r}")
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key outside of any [section]")
        key, raw = (p.strip() for p in line.split("=", 1))
        cls = _SECTIONS[section].default_factory
        known = {f.name: f for f in dataclasses.fields(cls)}
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} in [{section}]")
        default = getattr(cls(), key)
        try:
            values[section][key] = _convert(_kind(section, key, default), raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    kwargs = {}
    for name, f in _SECTIONS.items():
        try:
            kwargs[name] = f.default_factory(**values[name])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: invalid [{name}] section: {exc}") from None
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))

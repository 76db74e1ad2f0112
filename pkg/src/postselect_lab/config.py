"""Experiment configuration: one JSON file fully determines a run."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from postselect_lab.data import GENERATORS
from postselect_lab.learners import LearnerFamily

PROTOCOLS = ("gen-data", "lost-luck", "cv-audit", "nested-cv-audit", "superlearner", "report")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    generator: str = "pure-noise-labels"
    d: int = 400
    dim: int = 2
    num_labels: int = 2


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.5, 0.25, 0.25)
    folds: int = 5
    output_folds: int = 2
    # extra samples generated and withheld as T by the audit protocols
    test_size: int = 200


@dataclass(frozen=True)
class LearnerSpec:
    name: str
    params: dict = field(default_factory=dict)

    def family(self) -> LearnerFamily:
        return LearnerFamily(self.name, dict(self.params))


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    csv: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str = "lost-luck"
    master_seed: int = 0
    dataset: DatasetSpec = DatasetSpec()
    split: SplitSpec = SplitSpec()
    learners: tuple[LearnerSpec, ...] = (LearnerSpec("random-prototype", {"prototypes": 4}),)
    trials: int = 1000
    top_m: int = 1
    repetitions: int = 1
    grid_step: float = 0.1
    # superlearner: validate over nested input/output cells instead of plain folds
    nested: bool = False
    tolerance_se: float = 3.0
    honest_tolerance: float = 0.1
    threads: int = 1
    luckiest_only: bool = False
    output: OutputSpec = OutputSpec()

    def validate(self) -> "ExperimentConfig":
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; expected one of {PROTOCOLS}")
        if self.dataset.generator not in GENERATORS:
            raise ConfigError(f"invalid generator kind {self.dataset.generator!r}")
        f_fit, f_val, f_test = self.split.fractions
        if f_fit <= 0:
            raise ConfigError("empty fit set")
        if f_val <= 0:
            raise ConfigError("empty validation set")
        if not self.learners:
            raise ConfigError("at least one learner family is required")
        for spec in self.learners:
            try:
                spec.family()
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        for name in ("trials", "top_m", "repetitions", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.luckiest_only:
            raise ConfigError("refusing luckiest-only reporting: all trials must be reported")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["split"]["fractions"] = list(self.split.fractions)
        out["learners"] = [asdict(s) for s in self.learners]
        return out

    def provenance_dict(self) -> dict:
        """The config as echoed into reports; excludes fields that must not change results."""
        out = self.to_dict()
        out.pop("threads")
        out.pop("output")
        return out

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(payload)
        try:
            if "dataset" in kw:
                kw["dataset"] = DatasetSpec(**kw["dataset"])
            if "split" in kw:
                split = dict(kw["split"])
                if "fractions" in split:
                    split["fractions"] = tuple(float(x) for x in split["fractions"])
                    if len(split["fractions"]) != 3:
                        raise ConfigError("split.fractions must have 3 entries")
                kw["split"] = SplitSpec(**split)
            if "learners" in kw:
                kw["learners"] = tuple(LearnerSpec(l["name"], dict(l.get("params", {}))) for l in kw["learners"])
            if "output" in kw:
                kw["output"] = OutputSpec(**kw["output"])
            return cls(**kw)
        except (TypeError, KeyError, AttributeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed config: {exc!r}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            payload = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError("malformed config: top level must be an object")
        return cls.from_dict(payload)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        clean = {k: v for k, v in overrides.items() if v is not None}
        if "out" in clean:
            clean["output"] = replace(self.output, dir=clean.pop("out"))
        if "csv" in clean:
            csv_flag = clean.pop("csv")
            clean["output"] = replace(clean.get("output", self.output), csv=self.output.csv or csv_flag)
        return replace(self, **clean)

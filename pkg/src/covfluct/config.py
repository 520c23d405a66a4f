"""Run configuration: a versioned JSON document validated by pydantic.

Unknown keys are rejected at every level, and ``RunConfig.model_dump`` followed
by ``RunConfig.model_validate`` is lossless.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from covfluct.ensemble import EnsembleSpec, EntryDist, Truncation
from covfluct.errors import ConfigError, CovfluctError
from covfluct.testfunctions import TestFunction

CONFIG_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EntryModel(_Strict):
    kind: Literal["gaussian", "rademacher", "uniform", "centered_exponential", "two_point"] = "gaussian"
    sigma2: float = Field(1.0, gt=0)
    p: Optional[float] = None


class TruncationModel(_Strict):
    level: float = Field(0.1, gt=0)


class EnsembleModel(_Strict):
    N: int = Field(ge=1)
    n: int = Field(ge=1)
    field: Literal["real", "complex"] = "real"
    entry: EntryModel = EntryModel()
    truncation: Optional[TruncationModel] = None


class FunctionModel(_Strict):
    family: str
    params: dict[str, Any] = {}

    @model_validator(mode="after")
    def _check(self):
        try:
            TestFunction.from_dict(self.model_dump())
        except (CovfluctError, TypeError, ValueError) as exc:
            raise ValueError(str(exc)) from exc
        return self


class Tolerances(_Strict):
    rel_band: float = Field(0.1, gt=0)
    band_abs: Optional[float] = Field(None, gt=0)
    ks_alpha: float = Field(0.01, gt=0, lt=1)
    independence: float = Field(0.1, gt=0, le=1)
    block_rel_band: float = Field(0.15, gt=0)
    block_abs_band: Optional[float] = Field(None, gt=0)


class TestToggles(_Strict):
    __test__ = False
    variance: bool = True
    ks: bool = True
    independence: bool = True
    cov_blocks: bool = True


class Overrides(_Strict):
    """Replace parts of the prediction (used to build negative controls)."""
    kappa4: Optional[float] = None
    variances: Optional[list[float]] = None


class OutputModel(_Strict):
    dir: str = "out"
    format: Literal["json", "csv", "both"] = "json"


class RunConfig(_Strict):
    version: Literal[1] = CONFIG_VERSION
    ensemble: EnsembleModel
    function: FunctionModel = FunctionModel(family="polynomial", params={"coeffs": [0.0, 1.0]})
    target: Literal["entries", "resolvent"] = "entries"
    pairs: list[tuple[int, int]] = [(1, 2)]
    points: list[tuple[float, float]] = []
    m: int = Field(2, ge=1, le=8)
    trials: int = Field(1000, ge=1)
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)
    centering: Literal["empirical", "analytic"] = "empirical"
    tolerances: Tolerances = Tolerances()
    tests: TestToggles = TestToggles()
    overrides: Overrides = Overrides()
    output: OutputModel = OutputModel()
    workers: Optional[int] = Field(None, ge=1)

    @field_validator("pairs")
    @classmethod
    def _pairs(cls, v):
        for i, j in v:
            if not 1 <= i <= j:
                raise ValueError(f"pair ({i}, {j}) must satisfy 1 <= i <= j")
        return v

    @model_validator(mode="after")
    def _cross(self):
        if self.target == "resolvent" and not self.points:
            raise ValueError("target 'resolvent' needs at least one entry in 'points'")
        if self.overrides.variances is not None and self.target == "entries" \
                and len(self.overrides.variances) != len(self.pairs):
            raise ValueError("overrides.variances needs one value per pair")
        return self

    # -- conversions --------------------------------------------------------
    def ensemble_spec(self, seed: int) -> EnsembleSpec:
        e = self.ensemble
        try:
            return EnsembleSpec(
                N=e.N, n=e.n, field=e.field,
                entry=EntryDist(e.entry.kind, e.entry.sigma2, e.entry.p),
                truncation=None if e.truncation is None else Truncation(e.truncation.level),
                seed=seed,
            )
        except CovfluctError as exc:
            raise ConfigError(f"ensemble: {exc}") from exc

    def test_function(self) -> TestFunction:
        return TestFunction.from_dict(self.function.model_dump())

    def complex_points(self) -> list[complex]:
        return [complex(re, im) for re, im in self.points]

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)


def _format_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"config key '{loc}': {err['msg']}")
    return "; ".join(lines)


def parse_config(data: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(data)

"""Pipeline configuration and experiment presets."""

from __future__ import annotations

import hashlib
from importlib import resources
import json
from pathlib import Path
from typing import Any, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .grid import (
    ClearDisc,
    ClearLayer,
    GridSpec,
    Obstacle,
    PhantomSpec,
    Side,
    TimeGrid,
)

PRESETS = ("exp1", "exp2", "exp3", "fig1")


class GridConfig(BaseModel):
    """Pixel grid."""

    model_config = ConfigDict(extra="forbid")

    nx: int = Field(50, ge=4)
    ny: int = Field(50, ge=4)
    dx: float = Field(0.1, gt=0)

    def spec(self) -> GridSpec:
        """Grid as a domain object."""
        return GridSpec(self.nx, self.ny, self.dx)


class SolverConfig(BaseModel):
    """Discretisation of angle and time."""

    model_config = ConfigDict(extra="forbid")

    n_dirs: int = Field(12, ge=4)
    g: float = Field(0.9, gt=-1.0, lt=1.0)
    dt_rec: float = Field(0.2, gt=0)
    n_rec: int = Field(100, ge=1)
    substeps: int = Field(4, ge=1)
    c: float = Field(1.0, gt=0)
    cfl_max: float = Field(1.0, gt=0, le=1.0)

    @field_validator("n_dirs")
    @classmethod
    def _even_dirs(cls, value: int) -> int:
        if value % 2:
            raise ValueError("direction count must be even")
        return value

    def time_grid(self, n_rec: int | None = None) -> TimeGrid:
        """Time grid, optionally with another number of recorded steps."""
        return TimeGrid(
            dt_rec=self.dt_rec,
            n_rec=self.n_rec if n_rec is None else n_rec,
            substeps=self.substeps,
            c=self.c,
        )


class SourcesConfig(BaseModel):
    """Layout of the boundary sources."""

    model_config = ConfigDict(extra="forbid")

    per_side: int = Field(4, ge=1)
    width_px: int = Field(5, ge=1)
    span_px: int = Field(20, ge=1)
    order: List[Side] = [Side.BOTTOM, Side.RIGHT, Side.TOP, Side.LEFT]
    amplitude: float = 1.0


class ReceiversConfig(BaseModel):
    """Receiver distance and time window."""

    model_config = ConfigDict(extra="forbid")

    min_arc: float = Field(5.0, ge=0)
    window: Tuple[float, float] = (8.0, 20.0)

    @model_validator(mode="after")
    def _ordered_window(self) -> ReceiversConfig:
        if not self.window[0] < self.window[1]:
            raise ValueError("time window must satisfy start < end")
        return self


class ClearLayerConfig(BaseModel):
    """Clear ring near the boundary."""

    model_config = ConfigDict(extra="forbid")

    offset_px: int = Field(5, ge=0)
    thickness_px: int = Field(3, ge=0)
    a: float = Field(0.01, gt=0)
    b: float = Field(0.01, gt=0)


class ClearDiscConfig(BaseModel):
    """Clear disc."""

    model_config = ConfigDict(extra="forbid")

    center: Tuple[float, float]
    radius: float = Field(ge=0)
    a: float = Field(0.01, gt=0)
    b: float = Field(0.01, gt=0)


class ObstacleConfig(BaseModel):
    """Absorbing disc of the true medium."""

    model_config = ConfigDict(extra="forbid")

    center: Tuple[float, float]
    radius: float = Field(ge=0)
    a: float = Field(gt=0)


class PhantomConfig(BaseModel):
    """True medium used to generate data."""

    model_config = ConfigDict(extra="forbid")

    a_b: float = Field(0.1, gt=0)
    b_b: float = Field(100.0, gt=0)
    clear_layer: Optional[ClearLayerConfig] = ClearLayerConfig()
    clear_discs: List[ClearDiscConfig] = []
    obstacles: List[ObstacleConfig] = []

    def spec(self) -> PhantomSpec:
        """Phantom as a domain object."""
        layer = self.clear_layer
        return PhantomSpec(
            a_b=self.a_b,
            b_b=self.b_b,
            clear_layer=None if layer is None else ClearLayer(**layer.model_dump()),
            clear_discs=tuple(
                ClearDisc(center=d.center, radius=d.radius, a=d.a, b=d.b)
                for d in self.clear_discs
            ),
            obstacles=tuple(
                Obstacle(center=o.center, radius=o.radius, a=o.a) for o in self.obstacles
            ),
        )


class InversionConfig(BaseModel):
    """TBT and level set parameters."""

    model_config = ConfigDict(extra="forbid")

    a_hat: float = Field(0.5, gt=0)
    a_min: float = Field(0.01, gt=0)
    a_max: float = Field(2.0, gt=0)
    tbt_sweeps: int = Field(20, ge=0)
    eta_tbt: Optional[float] = Field(None, ge=0)
    eta_tbt_target: float = Field(0.05, gt=0)
    tbt_snapshots: List[int] = [5, 20]
    tbt_taper_px: Optional[float] = Field(4.0, gt=0)
    ls_sweeps: int = Field(1, ge=0)
    eta_ls: Optional[float] = Field(None, gt=0)
    max_step_cells: Optional[float] = Field(1.5, gt=0)
    gamma_ls: float = Field(0.9, gt=0, lt=1)
    init_margin_px: float = Field(3.0, ge=0)
    rho: float = Field(1.5, ge=1)
    rescale_target: float = Field(1.0, gt=0)
    ls_snapshot_steps: List[int] = [6, 16]
    snapshot_every: Optional[int] = Field(None, ge=1)
    plateau_tol: Optional[float] = Field(None, gt=0)
    freeze_outside_layer: bool = True

    @model_validator(mode="after")
    def _ordered_bounds(self) -> InversionConfig:
        if not self.a_min < self.a_max:
            raise ValueError("absorption bounds must satisfy a_min < a_max")
        return self


class SourcePointConfig(BaseModel):
    """A single source given by its side and center offset."""

    model_config = ConfigDict(extra="forbid")

    side: Side
    center: float = Field(ge=0)
    width_px: int = Field(5, ge=1)
    amplitude: float = 1.0


class ReceiverPointConfig(BaseModel):
    """A boundary point given by its side and offset."""

    model_config = ConfigDict(extra="forbid")

    side: Side
    position: float = Field(ge=0)


class SensitivityConfig(BaseModel):
    """Source, receivers and times of a sensitivity map batch."""

    model_config = ConfigDict(extra="forbid")

    n_rec: int = Field(130, ge=1)
    source: SourcePointConfig = SourcePointConfig(side=Side.LEFT, center=2.5)
    receivers: List[ReceiverPointConfig] = [ReceiverPointConfig(side=Side.TOP, position=2.5)]
    times: List[float] = [10.0, 24.0]


class PipelineConfig(BaseModel):
    """Full configuration of a run."""

    model_config = ConfigDict(extra="forbid")

    name: str = "custom"
    grid: GridConfig = GridConfig()
    solver: SolverConfig = SolverConfig()
    sources: SourcesConfig = SourcesConfig()
    receivers: ReceiversConfig = ReceiversConfig()
    phantom: PhantomConfig = PhantomConfig()
    inversion: InversionConfig = InversionConfig()
    sensitivity: SensitivityConfig = SensitivityConfig()
    threads: int = Field(1, ge=1)
    output_dir: str = "out"


def _config_error(err: ValidationError, origin: str) -> ConfigError:
    """Flatten a pydantic error into field-path messages."""
    paths = [".".join(str(part) for part in item["loc"]) or "<root>" for item in err.errors()]
    lines = [
        f"{path}: {item['msg']}" for path, item in zip(paths, err.errors())
    ]
    return ConfigError(f"invalid configuration {origin}:\n  " + "\n  ".join(lines), paths)


def config_from_dict(data: dict[str, Any], origin: str = "<dict>") -> PipelineConfig:
    """Validate a configuration mapping."""
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as err:
        raise _config_error(err, origin) from err


def parse_config(path: str | Path) -> PipelineConfig:
    """Read and validate a JSON configuration file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"cannot read configuration {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a JSON object")
    return config_from_dict(data, str(path))


def load_preset(name: str) -> PipelineConfig:
    """Configuration of a shipped experiment preset."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}, expected one of {', '.join(PRESETS)}")
    preset = resources.files("dotshape").joinpath("presets").joinpath(f"{name}.json")
    text = preset.read_text(encoding="utf-8")
    return config_from_dict(json.loads(text), f"preset {name}")


def dump_config(config: PipelineConfig) -> str:
    """JSON text that parses back to an equal configuration."""
    return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True)


def config_hash(config: PipelineConfig) -> str:
    """SHA-256 of the canonical JSON form."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def with_overrides(config: PipelineConfig, overrides: dict[str, Any]) -> PipelineConfig:
    """Copy with dotted-path overrides such as {"inversion.ls_sweeps": 3}, revalidated."""
    data = config.model_dump(mode="json")
    for dotted, value in overrides.items():
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node[key]
        node[leaf] = value
    return config_from_dict(data, "with overrides")

"""Strict JSON experiment configuration.

Unknown keys anywhere in the document are rejected. After parsing, every field
carries an explicit value (the default phantom is expanded into its shapes), so
``ExperimentConfig.model_dump()`` is a complete record of a run.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .classical import TkdConfig
from .dipole import Orientation
from .errors import ConfigError
from .grid import GridSpec
from .losses import HyperParams
from .phantom import Box, Cylinder, NoiseSpec, PhantomSpec, Sphere, default_phantom_spec
from .training import TrainConfig

Vec3 = tuple[float, float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridModel(_Strict):
    dims: tuple[int, int, int] = (32, 32, 32)
    voxel_size: Vec3 = (1.0, 1.0, 1.0)


class SphereModel(_Strict):
    kind: Literal["sphere"]
    center: Vec3
    radius: float = Field(gt=0)
    chi: float


class CylinderModel(_Strict):
    kind: Literal["cylinder"]
    axis: Vec3
    center: Vec3
    radius: float = Field(gt=0)
    chi: float
    length: Optional[float] = Field(default=None, gt=0)


class BoxModel(_Strict):
    kind: Literal["box"]
    lower: Vec3
    upper: Vec3
    chi: float


ShapeModel = Annotated[Union[SphereModel, CylinderModel, BoxModel], Field(discriminator="kind")]


class PhantomModel(_Strict):
    # None expands to the built-in sphere/cylinder/box phantom scaled to the grid
    shapes: Optional[list[ShapeModel]] = None
    background: float = 0.0
    seed: int = 0


class NoiseModel(_Strict):
    kind: Literal["gaussian"] = "gaussian"
    sigma: float = Field(default=0.0, ge=0)
    seed: int = 0


class HyperParamsModel(_Strict):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    tau: float = Field(default=0.15, gt=0)
    eps: float = Field(default=0.1, gt=0)
    lam: Optional[float] = Field(default=None, ge=0, alias="lambda")
    w_dipole: Optional[float] = Field(default=None, ge=0)
    w_model: float = Field(default=0.4, ge=0)
    w_grad: float = Field(default=0.1, ge=0)
    w_voxel: float = Field(default=0.2, ge=0)
    t_tkd: float = Field(default=0.2, gt=0, le=1 / 3)
    M: int = Field(default=1, ge=1)
    t_cone: float = Field(default=0.2, gt=0, lt=1 / 3)

    @model_validator(mode="after")
    def _alias(self):
        lam, wd = self.lam, self.w_dipole
        if lam is not None and wd is not None and lam != wd:
            raise ValueError(f"lambda ({lam}) and w_dipole ({wd}) name the same weight but differ")
        value = lam if lam is not None else wd if wd is not None else HyperParams().lam
        object.__setattr__(self, "lam", value)
        object.__setattr__(self, "w_dipole", value)
        return self

    def build(self) -> HyperParams:
        d = self.model_dump(exclude={"w_dipole"})
        return HyperParams(**d)


class TrainModel(_Strict):
    steps: int = Field(default=2000, ge=2)
    ratio: tuple[int, int] = (1, 1)
    objective: Literal["total", "dipole"] = "total"
    dc_mode: Literal["as_written", "per_orientation_fields"] = "as_written"
    lr_recon: float = Field(default=1e-3, gt=0)
    lr_inr: float = Field(default=1e-4, gt=0)
    siren_depth: int = Field(default=5, ge=1)
    siren_width: int = Field(default=128, ge=1)
    omega0: float = Field(default=30.0, gt=0)
    channels: tuple[int, ...] = (1, 8, 8, 1)

    @field_validator("ratio")
    @classmethod
    def _ratio(cls, v):
        if min(v) < 1:
            raise ValueError("ratio entries must be >= 1")
        return v

    def build(self) -> TrainConfig:
        return TrainConfig(
            siren_depth=self.siren_depth, siren_width=self.siren_width, omega0=self.omega0,
            channels=self.channels, lr_recon=self.lr_recon, lr_inr=self.lr_inr,
            recon_per_cycle=self.ratio[0], inr_per_cycle=self.ratio[1],
            inr_phase_objective=self.objective, dc_mode=self.dc_mode,
        )


SWEEP_KEYS = ("w_model", "w_grad", "w_dipole", "w_voxel", "tau", "eps")


class SweepModel(_Strict):
    """Weight combinations: a cartesian ``grid`` of value lists or explicit ``combinations``."""

    grid: Optional[dict[str, list[float]]] = None
    combinations: Optional[list[dict[str, float]]] = None

    @model_validator(mode="after")
    def _keys(self):
        if self.grid is not None and self.combinations is not None:
            raise ValueError("give either grid or combinations, not both")
        dicts = [self.grid or {}] + list(self.combinations or [])
        for d in dicts:
            for k in d:
                if k not in SWEEP_KEYS:
                    raise ValueError(f"unknown sweep key {k!r}")
        return self

    def expand(self) -> list[dict[str, float]]:
        if self.combinations is not None:
            return [dict(c) for c in self.combinations]
        if not self.grid:
            return [{}]
        keys = list(self.grid)
        return [dict(zip(keys, vals)) for vals in itertools.product(*(self.grid[k] for k in keys))]


class OrientationSweepModel(_Strict):
    n: int = Field(default=18, ge=1)
    cap_deg: float = Field(default=30.0, gt=0, le=90)
    seed: int = 0


class TkdModel(_Strict):
    t: float = Field(default=0.2, gt=0, le=1 / 3)
    zero_fill: bool = False

    def build(self) -> TkdConfig:
        return TkdConfig(self.t, self.zero_fill)


class CosmosModel(_Strict):
    damping: float = Field(default=0.0, ge=0)


class ExperimentConfig(_Strict):
    grid: GridModel = GridModel()
    phantom: PhantomModel = PhantomModel()
    noise: NoiseModel = NoiseModel()
    orientations: list[Vec3] = [(0.0, 0.0, 1.0)]
    hyperparams: HyperParamsModel = HyperParamsModel()
    train: TrainModel = TrainModel()
    sweep: SweepModel = SweepModel()
    orientation_sweep: OrientationSweepModel = OrientationSweepModel()
    tkd: TkdModel = TkdModel()
    cosmos: CosmosModel = CosmosModel()
    seed: int = Field(default=0, ge=0)
    out: str = "out"

    @field_validator("orientations")
    @classmethod
    def _unit(cls, v):
        if not v:
            raise ValueError("need at least one orientation")
        out = []
        for b in v:
            n = float(np.linalg.norm(b))
            if not np.isfinite(n) or n == 0:
                raise ValueError(f"orientation {b} has zero length")
            out.append(Orientation.from_vector(b).b)
        return out

    @model_validator(mode="after")
    def _expand_phantom(self):
        if self.phantom.shapes is None:
            grid = self.grid_spec()
            if len(set(grid.dims)) != 1 or len(set(grid.voxel_size)) != 1:
                raise ValueError("the built-in phantom needs a cubic grid; list phantom.shapes")
            spec = default_phantom_spec(grid.dims[0], grid.voxel_size[0])
            shapes = [_shape_to_model(s) for s in spec.shapes]
            object.__setattr__(self, "phantom", self.phantom.model_copy(update={"shapes": shapes}))
        return self

    def grid_spec(self) -> GridSpec:
        return GridSpec(tuple(self.grid.dims), tuple(self.grid.voxel_size))

    def phantom_spec(self) -> PhantomSpec:
        shapes = tuple(_model_to_shape(s) for s in self.phantom.shapes)
        return PhantomSpec(self.grid_spec(), shapes, self.phantom.background, self.phantom.seed)

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(self.noise.sigma, self.noise.seed, self.noise.kind)

    def orientation_list(self) -> list[Orientation]:
        return [Orientation(b) for b in self.orientations]

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True)


def _shape_to_model(s):
    if isinstance(s, Sphere):
        return SphereModel(kind="sphere", center=s.center, radius=s.radius, chi=s.chi)
    if isinstance(s, Cylinder):
        return CylinderModel(kind="cylinder", axis=s.axis, center=s.center, radius=s.radius,
                             chi=s.chi, length=s.length)
    return BoxModel(kind="box", lower=s.lower, upper=s.upper, chi=s.chi)


def _model_to_shape(m):
    if m.kind == "sphere":
        return Sphere(tuple(m.center), m.radius, m.chi)
    if m.kind == "cylinder":
        return Cylinder(tuple(m.axis), tuple(m.center), m.radius, m.chi, m.length)
    return Box(tuple(m.lower), tuple(m.upper), m.chi)


def _describe(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_describe(exc)}") from exc
    except ValueError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return parse_config(data)


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()

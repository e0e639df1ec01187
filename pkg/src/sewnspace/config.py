"""
Run configuration: one pydantic section per command, TOML files, flag overrides.
"""

import tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import ParameterError
from .tools.convergence_lab import DEFAULT_A_TUBE_FACTOR, DEFAULT_LIP_PAIRS, DEFAULT_STRING_NODES
from .tools.metric_core import PROBE_MIN_POINTS
from .tools.sewing_sim import DEFAULT_SHELL_NODES, default_schedule
from .tools.tunnel_curve import ALPHA_MAX, ALPHA_MIN, DEFAULT_ALPHA_BEND
from .utils.cache import parameter_hash
from .utils.file_handler import FileHandler

COMMANDS = ("tunnel", "sew", "pull", "probe", "converge")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    def config_hash(self) -> str:
        """md5 of the section's sorted-key JSON dump."""
        return parameter_hash(self.model_dump(mode="json"))


class _SphereSection(_Section):
    N: int = Field(8000, ge=10)
    K: float = Field(1.0, gt=0.0, le=1.0)
    seed: int = Field(0, ge=0)
    string_nodes: int = Field(DEFAULT_STRING_NODES, ge=1)
    a_tube_factor: float = Field(DEFAULT_A_TUBE_FACTOR, gt=0.0)


class TunnelConfig(_Section):
    K: float = Field(1.0, gt=0.0, le=1.0)
    delta0: float = Field(0.01, gt=0.0, lt=0.5)
    delta: Optional[float] = Field(None, gt=0.0, lt=2.0)
    alpha_bend: float = DEFAULT_ALPHA_BEND
    smooth_width: Optional[float] = Field(None, ge=0.0)
    step: Optional[float] = Field(None, gt=0.0)
    tail_length: Optional[float] = Field(None, gt=0.0)
    epsilon: float = Field(0.05, gt=0.0, lt=1.0)
    search_delta0: bool = True

    @field_validator("alpha_bend")
    @classmethod
    def _alpha_in_range(cls, v: float) -> float:
        if not ALPHA_MIN < v < ALPHA_MAX:
            raise ValueError(f"alpha_bend must lie in ({ALPHA_MIN:.6f}, {ALPHA_MAX:.6f})")
        return v

    @model_validator(mode="after")
    def _delta_above_inner(self) -> "TunnelConfig":
        if self.delta is not None and not self.delta0 < self.delta / 2.0:
            raise ValueError("delta0 must be below delta / 2")
        return self

    @property
    def outer_delta(self) -> float:
        return 10.0 * self.delta0 if self.delta is None else self.delta


class SewConfig(_SphereSection):
    n: int = Field(3, ge=0)
    delta: float = Field(0.2, gt=0.0, lt=2.0)
    delta0: Optional[float] = Field(None, gt=0.0)
    shell_width: Optional[float] = Field(None, gt=0.0)
    shell_nodes: int = Field(DEFAULT_SHELL_NODES, ge=0)
    rho_connect: Optional[float] = Field(None, gt=0.0)
    epsilon: float = Field(0.05, gt=0.0, lt=1.0)
    fidelity_pairs: int = Field(1000, ge=1)
    workers: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _delta0_below_half(self) -> "SewConfig":
        if self.delta0 is not None and not self.delta0 < self.delta / 2.0:
            raise ValueError("delta0 must be below delta / 2")
        return self


class PullConfig(_SphereSection):
    N: int = Field(20000, ge=10)
    K_set: Literal["geodesic"] = "geodesic"
    max_dense: int = Field(4000, ge=0)
    n_triples: int = Field(10**5, ge=1)


class ProbeConfig(_SphereSection):
    N: int = Field(20000, ge=10)
    space: str = "sphere"
    r: List[float] = Field(default_factory=lambda: FileHandler.parse_grid("0.3:0.6:0.05"))
    at: Union[Literal["all", "p0"], int] = "all"
    min_points: int = Field(PROBE_MIN_POINTS, ge=1)
    max_centers: Optional[int] = Field(None, ge=1)

    @field_validator("r", mode="before")
    @classmethod
    def _parse_r(cls, v: Any) -> Any:
        return FileHandler.parse_grid(v) if isinstance(v, str) else v

    @field_validator("r")
    @classmethod
    def _positive_r(cls, v: List[float]) -> List[float]:
        if not v or min(v) <= 0.0:
            raise ValueError("radii must be positive")
        return sorted(set(v))

    @field_validator("at", mode="before")
    @classmethod
    def _parse_at(cls, v: Any) -> Any:
        return FileHandler.parse_point(v) if isinstance(v, str) else v

    @field_validator("space")
    @classmethod
    def _known_space(cls, v: str) -> str:
        if v not in ("sphere", "pulled") and not v.endswith(".npz"):
            raise ValueError("space must be 'sphere', 'pulled' or a .npz container")
        return v


class ConvergeConfig(_SphereSection):
    schedule: List[Tuple[float, int]] = Field(default_factory=default_schedule)
    r: List[float] = Field(default_factory=lambda: FileHandler.parse_grid("0.2:0.6:0.1"))
    shell_nodes: int = Field(DEFAULT_SHELL_NODES, ge=0)
    rho_connect: Optional[float] = Field(None, gt=0.0)
    epsilon: float = Field(0.05, gt=0.0, lt=1.0)
    lip_pairs: int = Field(DEFAULT_LIP_PAIRS, ge=1)
    workers: Optional[int] = Field(None, ge=1)

    @field_validator("schedule", mode="before")
    @classmethod
    def _parse_schedule(cls, v: Any) -> Any:
        return FileHandler.parse_schedule(v) if isinstance(v, str) else v

    @field_validator("schedule")
    @classmethod
    def _decreasing(cls, v: List[Tuple[float, int]]) -> List[Tuple[float, int]]:
        if not v:
            raise ValueError("schedule must not be empty")
        if any(d <= 0.0 or n < 0 for d, n in v):
            raise ValueError("schedule entries need delta > 0 and n >= 0")
        deltas = [d for d, _ in v]
        if any(b >= a for a, b in zip(deltas, deltas[1:])):
            raise ValueError("schedule deltas must be strictly decreasing")
        return v

    @field_validator("r", mode="before")
    @classmethod
    def _parse_r(cls, v: Any) -> Any:
        return FileHandler.parse_grid(v) if isinstance(v, str) else v


class RunConfig(BaseModel):
    """Parameters of every command plus the output directory."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    out: Path = Path("out")
    tunnel: TunnelConfig = Field(default_factory=TunnelConfig)
    sew: SewConfig = Field(default_factory=SewConfig)
    pull: PullConfig = Field(default_factory=PullConfig)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    converge: ConvergeConfig = Field(default_factory=ConvergeConfig)

    def section(self, command: str) -> _Section:
        if command not in COMMANDS:
            raise ParameterError(f"unknown command '{command}'")
        return getattr(self, command)


def _merge(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, Mapping):
            merged[key] = _merge(merged.get(key) or {}, value)
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Load a run configuration from a TOML file and apply overrides.

    Overrides are nested like the file ({"tunnel": {"K": 1.0}, "out": "dir"});
    None values are skipped so unset flags never mask file values.

    Raises:
        ParameterError: If the file is missing or not valid TOML
        pydantic.ValidationError: If a value violates its section's constraints
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ParameterError(f"config file not found: {path}")
        try:
            with open(path, "rb") as handle:
                data = tomllib.load(handle)
        except tomllib.TOMLDecodeError as e:
            raise ParameterError(f"invalid TOML in {path}: {e}") from e
    return RunConfig.model_validate(_merge(data, overrides or {}))

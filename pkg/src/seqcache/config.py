"""Experiment configuration files: INI sections with a strict schema.

Every section and key is optional; missing values take the defaults of the
reference experiment (N=100 in five categories, M=30, lambda=0.02, d=10,
eps=0.1, gamma=1, gamma_out=5, gamma_in=2.4, c_in=69). Unknown sections,
unknown keys and unparsable values raise :class:`ConfigError`.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .allocator import AllocatorConfig, CacheProblem
from .errors import InfeasibleError
from .placement import NetworkModel
from .popularity import LibraryModel
from .simulator import SimConfig

CASES = {
    "A": (20, 20, 20, 20, 20),
    "B": (35, 25, 20, 15, 5),
    "C": (5, 15, 20, 25, 35),
}

DEFAULT_LAMBDA_GRID = (0.005, 0.01, 0.015, 0.02, 0.025, 0.03)


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(";", ",").split(",") if x.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _gamma_in(text: str):
    vals = _floats(text)
    return vals[0] if len(vals) == 1 else vals


def _str(text: str) -> str:
    return text.strip()


# section -> key -> (attribute name, parser)
SCHEMA = {
    "library": {
        "case": ("case", lambda s: s.strip().upper() if s.strip().lower() != "custom" else "custom"),
        "sizes": ("sizes", _ints),
        "gamma": ("gamma", float),
        "gamma_out": ("gamma_out", float),
        "gamma_in": ("gamma_in", _gamma_in),
        "c_in": ("c_in", float),
    },
    "network": {
        "kind": ("network_kind", _str),
        "lambda": ("lam", float),
        "radius": ("radius", float),
        "node_count_pmf": ("node_count_pmf", _floats),
    },
    "request": {
        "epsilon": ("epsilon", float),
    },
    "optimize": {
        "m": ("M", int),
        "objective": ("objective", _str),
        "mode": ("mode", _str),
        "max_sweeps": ("max_sweeps", int),
        "convergence_tol": ("convergence_tol", float),
        "placement_weights": ("placement_weights", _str),
    },
    "sweep": {
        "parameter": ("sweep_param", _str),
        "values": ("sweep_values", _str),
    },
    "simulation": {
        "enabled": ("simulate", _bool),
        "n_sessions": ("n_sessions", int),
        "seed": ("seed", int),
        "outside_popularity": ("outside_popularity", _str),
        "resample": ("resample", _str),
        "stop_on_miss": ("stop_on_miss", _bool),
        "batch_size": ("batch_size", int),
        "trace": ("trace_path", _str),
    },
    "output": {
        "path": ("out_path", _str),
        "experiment_id": ("experiment_id", _str),
    },
}

SWEEPABLE = {
    "lambda": "lam", "radius": "radius", "epsilon": "epsilon", "gamma": "gamma",
    "gamma_out": "gamma_out", "gamma_in": "gamma_in", "c_in": "c_in", "M": "M", "case": "case",
}


@dataclass(frozen=True)
class ExperimentConfig:
    case: str = "A"
    sizes: tuple[int, ...] | None = None
    gamma: float = 1.0
    gamma_out: float = 5.0
    gamma_in: float | tuple[float, ...] = 2.4
    c_in: float = 69.0
    network_kind: str = "poisson-disk"
    lam: float = 0.02
    radius: float = 10.0
    node_count_pmf: tuple[float, ...] | None = None
    epsilon: float = 0.1
    M: int = 30
    objective: str = "hit"
    mode: str = "paper"
    max_sweeps: int = 50
    convergence_tol: float = 1e-12
    placement_weights: str = "within"
    sweep_param: str | None = None
    sweep_values: str | None = None
    simulate: bool = False
    n_sessions: int = 100_000
    seed: int = 0
    outside_popularity: str | None = None
    resample: str = "request"
    stop_on_miss: bool = True
    batch_size: int = 10_000
    trace_path: str | None = None
    out_path: str | None = None
    experiment_id: str = "exp"

    def __post_init__(self) -> None:
        if self.case not in ("A", "B", "C", "custom"):
            raise ConfigError(f"case must be A, B, C or custom, got {self.case!r}")
        if self.case == "custom" and not self.sizes:
            raise ConfigError("case = custom needs library.sizes")
        if self.case != "custom" and self.sizes is not None:
            raise ConfigError("library.sizes is only allowed with case = custom")
        if self.sweep_param is not None and self.sweep_param not in SWEEPABLE:
            raise ConfigError(f"cannot sweep {self.sweep_param!r}; choose from {sorted(SWEEPABLE)}")
        if (self.sweep_param is None) != (self.sweep_values is None):
            raise ConfigError("sweep needs both parameter and values")
        # build everything once so invalid values fail before any computation
        try:
            self.problem()
            self.allocator_config()
            self.sim_config()
            self.sweep_points()
        except (ConfigError, InfeasibleError):
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def category_sizes(self) -> tuple[int, ...]:
        return tuple(self.sizes) if self.case == "custom" else CASES[self.case]

    def library(self) -> LibraryModel:
        return LibraryModel(self.category_sizes, gamma=self.gamma, gamma_out=self.gamma_out,
                            gamma_in=self.gamma_in, c_in=self.c_in)

    def network(self) -> NetworkModel:
        if self.network_kind == "poisson-disk":
            return NetworkModel.poisson_disk(self.lam, self.radius)
        if self.network_kind == "explicit-pmf":
            if self.node_count_pmf is None:
                raise ConfigError("explicit-pmf network needs node_count_pmf")
            return NetworkModel.explicit(self.node_count_pmf)
        raise ConfigError(f"unknown network kind {self.network_kind!r}")

    def problem(self) -> CacheProblem:
        return CacheProblem(self.library(), self.network(), epsilon=self.epsilon, M=self.M,
                            placement_weights=self.placement_weights)

    def allocator_config(self) -> AllocatorConfig:
        return AllocatorConfig(objective=self.objective, mode=self.mode,
                               max_sweeps=self.max_sweeps, convergence_tol=self.convergence_tol)

    def sim_config(self, outside_default: str = "exact-mzipf", workers: int = 1) -> SimConfig:
        return SimConfig(
            n_sessions=self.n_sessions, seed=self.seed,
            outside_popularity=self.outside_popularity or outside_default,
            resample=self.resample, stop_on_miss=self.stop_on_miss,
            record_traces=self.trace_path is not None,
            batch_size=self.batch_size, workers=workers,
        )

    def sweep_points(self) -> list:
        if self.sweep_param is None:
            return []
        raw = [v.strip() for v in self.sweep_values.replace(";", ",").split(",") if v.strip()]
        if not raw:
            raise ConfigError("sweep.values is empty")
        if self.sweep_param == "case":
            return [v.upper() for v in raw]
        if self.sweep_param == "M":
            return [int(v) for v in raw]
        return [float(v) for v in raw]

    def with_value(self, param: str, value) -> "ExperimentConfig":
        return dataclasses.replace(self, **{SWEEPABLE[param]: value})

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def parse_config(text: str, source: str = "<config>",
                 default_id: str = "exp") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    values = {"experiment_id": default_id}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            spec = SCHEMA[section].get(key)
            if spec is None:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            attr, conv = spec
            try:
                values[attr] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {section}.{key}: {raw!r}") from exc
    return ExperimentConfig(**values)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, source=str(path), default_id=path.stem)

"""Experiment configuration files (TOML).

Schema, all sections optional except ``model``::

    [model]       kind = "advdiff" | "matrix"
                  n, nu, f, c              (advdiff)
                  path                     (matrix; relative to the config file)
    [mask]        lo, hi                   (default 0, 1)
    [controller]  kind = "real" | "complex"
                  target_rate              (negative; tuned by doubling sigma)
                  sigma                    (fixed intensity, overrides tuning)
                  tuning_paths, tuning_T
    [sde]         T, dt, paths, seed, record_dt, scheme, x0 = "ones" | "random"
    [certify]     gamma (default: half the ensemble-minimum rate), window
    [output]      directory, per_path
    [sweep]       param = "sigma" | "mask_width", values, paths
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError

__all__ = [
    "ModelConfig",
    "MaskConfig",
    "ControllerConfig",
    "SdeConfig",
    "CertifyConfig",
    "OutputConfig",
    "SweepConfig",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "bundled_config",
]


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "advdiff"
    n: int = 200
    nu: float = 0.01
    f: float = 0.0
    c: float = 0.0
    path: str | None = None

    def validate(self):
        if self.kind == "advdiff":
            if not isinstance(self.n, int) or self.n < 8:
                raise ConfigError("model.n must be an integer >= 8")
            if not self.nu > 0:
                raise ConfigError("model.nu must be positive")
        elif self.kind == "matrix":
            if self.path is None:
                raise ConfigError("model.path is required for kind = 'matrix'")
            if not Path(self.path).is_file():
                raise ConfigError(f"model.path {self.path!r} does not exist")
        else:
            raise ConfigError(f"model.kind must be 'advdiff' or 'matrix', got {self.kind!r}")


@dataclass(frozen=True)
class MaskConfig:
    lo: float = 0.0
    hi: float = 1.0

    def validate(self):
        if not 0.0 <= self.lo < self.hi <= 1.0:
            raise ConfigError(f"mask needs 0 <= lo < hi <= 1, got lo={self.lo}, hi={self.hi}")


@dataclass(frozen=True)
class ControllerConfig:
    kind: str = "real"
    target_rate: float | None = -0.15
    sigma: float | None = None
    tuning_paths: int = 32
    tuning_T: float = 20.0

    def validate(self):
        if self.kind not in ("real", "complex"):
            raise ConfigError(f"controller.kind must be 'real' or 'complex', got {self.kind!r}")
        if self.sigma is None and self.target_rate is None:
            raise ConfigError("controller needs sigma or target_rate")
        if self.sigma is not None and not self.sigma >= 0:
            raise ConfigError("controller.sigma must be nonnegative")
        if self.target_rate is not None and not self.target_rate < 0:
            raise ConfigError("controller.target_rate must be negative")
        if self.tuning_paths < 8:
            raise ConfigError("controller.tuning_paths must be at least 8")
        if not self.tuning_T > 0:
            raise ConfigError("controller.tuning_T must be positive")


@dataclass(frozen=True)
class SdeConfig:
    T: float = 60.0
    dt: float | None = None
    paths: int = 64
    seed: int = 0
    record_dt: float = 0.1
    scheme: str = "split"
    x0: str = "ones"

    def validate(self):
        if not self.T > 0:
            raise ConfigError("sde.T must be positive")
        if self.dt is not None and not 0 < self.dt <= self.T:
            raise ConfigError("sde.dt must lie in (0, T]")
        if not isinstance(self.paths, int) or self.paths < 1:
            raise ConfigError("sde.paths must be a positive integer")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("sde.seed must be an unsigned 64-bit integer")
        if not 0 < self.record_dt <= self.T:
            raise ConfigError("sde.record_dt must lie in (0, T]")
        if self.scheme not in ("split", "heun"):
            raise ConfigError("sde.scheme must be 'split' or 'heun'")
        if self.x0 not in ("ones", "random"):
            raise ConfigError("sde.x0 must be 'ones' or 'random'")


@dataclass(frozen=True)
class CertifyConfig:
    gamma: float | None = None
    window: float = 0.5

    def validate(self):
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError("certify.gamma must be positive")
        if not 0 < self.window <= 1:
            raise ConfigError("certify.window must lie in (0, 1]")


@dataclass(frozen=True)
class OutputConfig:
    directory: str | None = None
    per_path: bool = True

    def validate(self):
        pass


@dataclass(frozen=True)
class SweepConfig:
    param: str = "sigma"
    values: tuple = ()
    paths: int = 16

    def validate(self):
        if self.param not in ("sigma", "mask_width"):
            raise ConfigError("sweep.param must be 'sigma' or 'mask_width'")
        if any(not v >= 0 for v in self.values):
            raise ConfigError("sweep.values must be nonnegative")
        if self.paths < 8:
            raise ConfigError("sweep.paths must be at least 8")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    sde: SdeConfig = field(default_factory=SdeConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def validate(self):
        for f in fields(self):
            getattr(self, f.name).validate()
        return self

    def with_overrides(self, seed=None, paths=None, out=None):
        cfg = self
        if seed is not None:
            cfg = replace(cfg, sde=replace(cfg.sde, seed=seed))
        if paths is not None:
            cfg = replace(cfg, sde=replace(cfg.sde, paths=paths))
        if out is not None:
            cfg = replace(cfg, output=replace(cfg.output, directory=str(out)))
        return cfg.validate()


_SECTIONS = {f.name: f.default_factory for f in fields(ExperimentConfig)}
_FLOATS = {"nu", "f", "c", "lo", "hi", "target_rate", "sigma", "tuning_T", "T", "dt", "record_dt", "gamma", "window"}
_INTS = {"n", "paths", "seed", "tuning_paths"}
_STRS = {"kind", "path", "scheme", "x0", "directory", "param"}


def _section(name, raw):
    cls = _SECTIONS[name]
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"[{name}] has unknown keys: {', '.join(sorted(unknown))}")
    kw = {}
    for k, v in raw.items():
        if k in _FLOATS:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{name}.{k} must be a number")
            v = float(v)
        elif k == "values":
            if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
                raise ConfigError(f"{name}.values must be a list of numbers")
            v = tuple(float(x) for x in v)
        elif k in _INTS:
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{name}.{k} must be an integer")
        elif k in _STRS:
            if not isinstance(v, str):
                raise ConfigError(f"{name}.{k} must be a string")
        elif not isinstance(v, bool):
            raise ConfigError(f"{name}.{k} must be true or false")
        kw[k] = v
    return cls(**kw)


def parse_config(data: dict, base_dir=None) -> ExperimentConfig:
    """Build and validate a config from parsed TOML; relative paths resolve against ``base_dir``."""
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    if "model" not in data:
        raise ConfigError("missing [model] section")
    parts = {}
    for name in _SECTIONS:
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"[{name}] must be a table")
        parts[name] = _section(name, raw)
    model = parts["model"]
    if model.path is not None and base_dir is not None and not Path(model.path).is_absolute():
        parts["model"] = replace(model, path=str(Path(base_dir) / model.path))
    return ExperimentConfig(**parts).validate()


def bundled_config(name: str) -> Path | None:
    """Path of a config shipped with the package, or None."""
    p = Path(__file__).parent / "configs" / name
    return p if p.is_file() else None


def load_config(path) -> ExperimentConfig:
    """Read a config file; a bare name not found on disk falls back to the bundled configs."""
    path = Path(path)
    if not path.is_file() and path.parent == Path(".") and bundled_config(path.name):
        path = bundled_config(path.name)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data, base_dir=path.parent)

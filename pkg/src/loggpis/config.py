"""Flat ``key = value`` scenario configuration with includes.

Syntax::

    # comment
    include = base.cfg          # resolved relative to this file
    scenario = lidar2d
    lambda = 10
    primitive = circle -2 1.5 0.8    # repeatable keys accumulate

Later assignments override earlier ones (an included file acts as if its
lines were pasted at the include point).  Keys listed in ``REPEATABLE``
collect every occurrence in order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .covariance import KERNEL_NAMES, InvalidInputError, KernelParams
from .map import GRAD_TARGETS, METHODS

__all__ = ["ConfigError", "DEFAULT_LAMBDA", "REPEATABLE", "parse_config", "ScenarioConfig", "load_config"]

DEFAULT_LAMBDA = {"circle": 40.0, "lidar2d": 10.0, "boxes": 50.0}
REPEATABLE = frozenset({"primitive", "pose", "lambda_sweep"})
_MAX_INCLUDE_DEPTH = 16


class ConfigError(InvalidInputError):
    """Bad configuration file or value."""


def parse_config(path, _depth: int = 0, _seen=None) -> dict:
    """Read ``path`` into a dict of strings (lists for repeatable keys)."""
    path = Path(path)
    if _depth > _MAX_INCLUDE_DEPTH:
        raise ConfigError(f"{path}: include depth exceeds {_MAX_INCLUDE_DEPTH}")
    seen = set() if _seen is None else _seen
    key = path.resolve()
    if key in seen:
        raise ConfigError(f"{path}: include cycle")
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        k, _, v = line.partition("=")
        k, v = k.strip(), v.strip()
        if not k:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if k == "include":
            sub = parse_config(path.parent / v, _depth + 1, seen | {key})
            for sk, sv in sub.items():
                if sk in REPEATABLE:
                    out.setdefault(sk, []).extend(sv)
                else:
                    out[sk] = sv
        elif k in REPEATABLE:
            out.setdefault(k, []).append(v)
        else:
            out[k] = v
    return out


def _floats(text: str, n: int | None = None, what: str = "value") -> list[float]:
    try:
        vals = [float(t) for t in text.split()]
    except ValueError:
        raise ConfigError(f"bad numeric {what}: {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{what} needs {n} numbers, got {len(vals)}")
    return vals


@dataclass
class ScenarioConfig:
    """Typed view of a configuration; unknown keys are rejected."""

    scenario: str = "circle"
    seed: int = 0
    lam: float | None = None
    kernel: str = "matern32"
    method: str = "loggpis"
    sigma2: float = 1.0
    noise_y: float = 1e-2
    noise_grad: float = 1e-2
    leaf_capacity: int = 40
    support_margin: float | None = None
    fuse_radius: float | None = None
    latent_floor: float = 1e-12
    grad_targets: str = "unit"
    frames: int | None = None
    range_noise: float | None = None
    depth_noise: float | None = None
    stride: int | None = None
    surface_spacing: float | None = None
    slice_cell: float | None = None
    mesh_cell: float | None = None
    slice_height: float | None = None
    primitives: list = field(default_factory=list)
    poses: list = field(default_factory=list)
    lambda_sweep: list = field(default_factory=list)
    threads: int = 1

    _KEYS = {"lambda": "lam"}

    @classmethod
    def from_mapping(cls, raw: dict) -> "ScenarioConfig":
        cfg = cls()
        names = {f.name: f for f in fields(cls)}
        for key, val in raw.items():
            name = cls._KEYS.get(key, key)
            if name == "primitive":
                cfg.primitives = [_floats_prim(v) for v in val]
                continue
            if name == "pose":
                cfg.poses = [_floats(v, what="pose") for v in val]
                continue
            if name == "lambda_sweep":
                cfg.lambda_sweep = [x for v in val for x in _floats(v, what="lambda_sweep")]
                continue
            if name not in names or name.startswith("_"):
                raise ConfigError(f"unknown config key {key!r}")
            cfg._set(name, val)
        cfg.validate()
        return cfg

    def _set(self, name: str, val: str):
        if name in ("scenario", "kernel", "method", "grad_targets"):
            setattr(self, name, val)
        elif name in ("seed", "leaf_capacity", "frames", "stride", "threads"):
            try:
                setattr(self, name, int(val))
            except ValueError:
                raise ConfigError(f"{name} must be an integer, got {val!r}") from None
        else:
            setattr(self, name, _floats(val, 1, name)[0])

    def validate(self) -> None:
        if self.scenario not in DEFAULT_LAMBDA:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if not 0 < self.lambda_value <= 1000:
            raise ConfigError(f"lambda must be in (0, 1000], got {self.lambda_value}")
        if self.kernel not in KERNEL_NAMES:
            raise ConfigError(f"kernel must be one of {sorted(KERNEL_NAMES)}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.grad_targets not in GRAD_TARGETS:
            raise ConfigError(f"grad_targets must be one of {GRAD_TARGETS}")
        if self.leaf_capacity < 1 or self.threads < 1:
            raise ConfigError("leaf_capacity and threads must be >= 1")
        if self.frames is not None and self.frames < 0:
            raise ConfigError("frames must be >= 0")
        if self.stride is not None and self.stride < 1:
            raise ConfigError("stride must be >= 1")
        for lam in self.lambda_sweep:
            if not 0 < lam <= 1000:
                raise ConfigError(f"lambda_sweep value {lam} outside (0, 1000]")
        try:
            self.kernel_params()
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def lambda_value(self) -> float:
        """Configured inverse length scale, or the scenario default."""
        return DEFAULT_LAMBDA[self.scenario] if self.lam is None else self.lam

    def kernel_params(self, lam: float | None = None) -> KernelParams:
        return KernelParams.for_kernel(self.kernel, lam=self.lambda_value if lam is None else lam,
                                       sigma2=self.sigma2, noise_y=self.noise_y,
                                       noise_grad=self.noise_grad)


def _floats_prim(text: str):
    tok = text.split()
    if not tok or tok[0] not in ("circle", "sphere", "box"):
        raise ConfigError(f"primitive must start with circle, sphere or box: {text!r}")
    return (tok[0], _floats(" ".join(tok[1:]), what=f"{tok[0]} primitive"))


def load_config(path, overrides: dict | None = None) -> ScenarioConfig:
    """Parse ``path`` (may be ``None``) and apply string ``overrides``."""
    raw = parse_config(path) if path is not None else {}
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    return ScenarioConfig.from_mapping(raw)

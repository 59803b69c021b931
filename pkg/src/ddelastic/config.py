"""Run configuration: flat ``key = value`` files with command-line overrides."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

from .fem import LoadSpec, Material
from .interface import MODES, FractionalNormConfig
from .krylov import KrylovConfig
from .mesh import EDGES, square_partition
from .solver import PRECONDITIONERS
from .topopt import OcConfig

RUN_MODES = ("solve", "topopt", "sweep")
SWEEP_TASKS = ("solve", "topopt")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _fraction(text: str) -> Fraction:
    f = Fraction(text.strip())
    if f <= 0:
        raise ValueError("must be positive")
    return f


def _floats(n):
    def parse(text):
        parts = [float(p) for p in text.split(",")]
        if len(parts) != n:
            raise ValueError(f"expected {n} comma-separated numbers")
        return tuple(parts)
    return parse


def _list(item):
    def parse(text):
        out = [item(p) for p in text.split(",") if p.strip()]
        if not out:
            raise ValueError("empty list")
        return tuple(out)
    return parse


def _choice(options):
    def parse(text):
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _optional(item):
    return lambda text: None if text.strip().lower() in ("", "none") else item(text)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _int(text):
    return int(text.strip())


@dataclass(frozen=True)
class RunConfig:
    mode: str = "solve"
    sweep_task: str = "solve"
    h: tuple[Fraction, ...] = (Fraction(1, 32),)
    domains: tuple[int, ...] = (4,)
    theta: tuple[float, ...] = (0.5,)
    precond: tuple[str, ...] = ("hnorm",)
    youngs_modulus: float = 1.0
    poisson_ratio: float = 0.3
    model: str = "plane_stress"
    body_force: tuple[float, float] = (0.0, -0.75)
    traction: tuple[float, float] = (-1.0, 0.0)
    traction_edge: str = "left"
    tol: float = 1e-6
    max_iter: int = 1000
    restart: int | None = None
    k: int = 10
    inner_tol: float = 1e-3
    lanczos: str = "inverse"
    volume_fraction: float = 0.5
    oc_move: float = 0.2
    oc_damping: float = 0.5
    oc_tol: float = 1e-2
    oc_max_iter: int = 100
    warm_start: bool = True
    weighted_norm: bool = True
    workers: int | None = None
    out: str = "out"

    def __post_init__(self):
        if self.mode not in RUN_MODES:
            raise ConfigError(f"mode: expected one of {RUN_MODES}, got {self.mode!r}")
        for t in self.theta:
            if not 0.0 <= t <= 1.0:
                raise ConfigError(f"theta: {t} outside [0, 1]")
        for p in self.precond:
            if p not in PRECONDITIONERS:
                raise ConfigError(f"precond: unknown choice {p!r}")
        if any(n < 1 for n in self.domains):
            raise ConfigError("domains: subdomain counts must be positive")
        if self.mode != "sweep":
            for name in ("h", "domains", "theta", "precond"):
                if len(getattr(self, name)) != 1:
                    raise ConfigError(f"{name}: lists are only allowed in sweep mode")
        if not 0.0 < self.volume_fraction <= 1.0:
            raise ConfigError("volume_fraction: must lie in (0, 1]")
        # delegate the remaining range checks to the module types
        for key, build in (("material", self.material), ("krylov", self.krylov),
                           ("oc", self.oc), ("lanczos", lambda: self.norm(self.theta[0]))):
            try:
                build()
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None

    def material(self) -> Material:
        return Material(self.youngs_modulus, self.poisson_ratio, self.model)

    def load(self) -> LoadSpec:
        return LoadSpec(self.body_force, self.traction, self.traction_edge)

    def krylov(self, tol=None) -> KrylovConfig:
        return KrylovConfig(self.tol if tol is None else tol, self.max_iter, self.restart)

    def oc(self) -> OcConfig:
        return OcConfig(self.oc_move, self.oc_damping, tol=self.oc_tol, max_iter=self.oc_max_iter)

    def norm(self, theta) -> FractionalNormConfig:
        return FractionalNormConfig(theta=theta, k=self.k, inner_tol=self.inner_tol, mode=self.lanczos)

    def grid(self):
        """Cartesian product of (h, N, theta, precond) in a fixed order.

        theta is irrelevant for the non-fractional preconditioners, so those
        appear once per (h, N) with theta taken from the first entry.
        """
        runs = []
        for h in self.h:
            for n in self.domains:
                for p in self.precond:
                    thetas = self.theta if p == "hnorm" else self.theta[:1]
                    runs.extend((h, n, t, p) for t in thetas)
        return runs

    @staticmethod
    def partition(n_subdomains: int) -> tuple[int, int]:
        return square_partition(n_subdomains)


PARSERS = {
    "mode": _choice(RUN_MODES),
    "sweep_task": _choice(SWEEP_TASKS),
    "h": _list(_fraction),
    "domains": _list(_int),
    "theta": _list(float),
    "precond": _list(_choice(PRECONDITIONERS)),
    "youngs_modulus": float,
    "poisson_ratio": float,
    "model": _choice(("plane_stress", "plane_strain")),
    "body_force": _floats(2),
    "traction": _floats(2),
    "traction_edge": _choice(EDGES),
    "tol": float,
    "max_iter": _int,
    "restart": _optional(_int),
    "k": _int,
    "inner_tol": float,
    "lanczos": _choice(MODES),
    "volume_fraction": float,
    "oc_move": float,
    "oc_damping": float,
    "oc_tol": float,
    "oc_max_iter": _int,
    "warm_start": _bool,
    "weighted_norm": _bool,
    "workers": _optional(_int),
    "out": str.strip,
}
assert set(PARSERS) == {f.name for f in fields(RunConfig)}


def read_config_file(path) -> dict[str, str]:
    """Raw ``key = value`` pairs; ``#`` starts a comment."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def parse_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a RunConfig from an optional file, then apply string overrides."""
    raw = read_config_file(path) if path is not None else {}
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    values = {}
    for key, text in raw.items():
        if key not in PARSERS:
            raise ConfigError(f"unknown key {key!r}")
        try:
            values[key] = PARSERS[key](str(text))
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{key}: invalid value {text!r} ({exc})") from None
    return RunConfig(**values)


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, **changes)

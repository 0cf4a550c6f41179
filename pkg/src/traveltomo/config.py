"""Pipeline configuration: a flat ``key = value`` file with a strict schema."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .dataprep import ALPHA_RULES
from .grid import GridSpec
from .phantoms import LETTERS

PHANTOMS = ("ball",) + tuple(LETTERS)
METHODS = ("gd", "lbfgs")
NOISE_MODES = ("per_source", "per_detector")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # geometry
    B: float = 0.0
    rho: float = 1.0
    a: float = -2.0
    b: float = 3.0
    d: float = 0.5
    z0: float = -1.0
    # acquisition and forward solver
    sources: int = 101
    detector_step: float = 1.0 / 20
    forward_step: float = 1.0 / 30
    forward_pad: float = 0.1
    # phantom
    phantom: str = "ball"
    n_inclusion: float = 1.5
    ball_x: float = 0.5
    ball_y: float = 0.5
    ball_z: float = 0.5
    ball_radius: float = 0.2
    letter_z0: float = 0.3
    letter_z1: float = 0.7
    smoothing: float = 0.0
    # noise
    delta: float = 0.05
    seed: int = 0
    noise_mode: str = "per_source"
    # inversion
    inversion_h: float = 1.0 / 10
    kz: int = 0
    N: int = 6
    alpha_rule: str = "simpson"
    lam: float = 4.0
    beta: float = 1e-4
    u_floor: float = 0.05
    grad_tol: float = 1e-6
    max_iter: int = 3000
    method: str = "gd"
    step0: float = 1e-2

    def __post_init__(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.rho > 0, "rho must be positive")
        need(self.z0 < self.B, "z0 must lie below B")
        need(self.a < self.b, "need a < b")
        need(self.sources >= self.N + 1, "need at least N + 1 sources")
        need(0 < self.detector_step < 1, "detector_step must lie in (0, 1)")
        need(0 < self.forward_step < 1, "forward_step must lie in (0, 1)")
        need(self.forward_pad >= 0, "forward_pad must be non-negative")
        need(self.phantom in PHANTOMS, f"phantom must be one of {PHANTOMS}")
        need(self.n_inclusion >= 1, "n_inclusion must be >= 1")
        need(self.ball_radius > 0, "ball_radius must be positive")
        need(self.smoothing >= 0, "smoothing must be non-negative")
        need(0 <= self.delta < 1, "delta must lie in [0, 1)")
        need(self.noise_mode in NOISE_MODES, f"noise_mode must be one of {NOISE_MODES}")
        need(0 < self.inversion_h <= 0.5, "inversion_h must lie in (0, 0.5]")
        need(abs(1.0 / self.inversion_h - round(1.0 / self.inversion_h)) < 1e-6,
             "1 / inversion_h must be an integer")
        need(self.kz >= 0, "kz must be >= 0 (0 means kz = k)")
        need(1 <= self.N <= 16, "N must lie in [1, 16]")
        need(self.alpha_rule in ALPHA_RULES, f"alpha_rule must be one of {ALPHA_RULES}")
        need(self.lam >= 0, "lambda must be >= 0")
        need(0 <= self.beta < 1, "beta must lie in [0, 1)")
        need(self.u_floor > 0, "u_floor must be positive")
        need(self.grad_tol > 0, "grad_tol must be positive")
        need(self.max_iter >= 0, "max_iter must be >= 0")
        need(self.method in METHODS, f"method must be one of {METHODS}")
        need(self.step0 > 0, "step0 must be positive")

    # ------------------------------------------------------------- derived
    @property
    def k(self) -> int:
        return int(round(1.0 / self.inversion_h))

    def grid(self) -> GridSpec:
        k = self.k
        return GridSpec(k=k, kz=self.kz or k, B=self.B, rho=self.rho,
                        a=self.a, b=self.b, d=self.d, z0=self.z0)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def digest(self, keys) -> str:
        """Hash of the listed settings, used to detect stage mismatches."""
        text = "\n".join(f"{k}={format_value(getattr(self, k))}" for k in sorted(keys))
        return hashlib.sha256(text.encode()).hexdigest()


# settings that each stage's output depends on (cumulative)
STAGE_KEYS = {
    "phantom": ("B", "rho", "a", "b", "d", "z0", "forward_step", "forward_pad", "phantom",
                "n_inclusion", "ball_x", "ball_y", "ball_z", "ball_radius", "letter_z0",
                "letter_z1", "smoothing", "inversion_h", "kz"),
}
STAGE_KEYS["forward"] = STAGE_KEYS["phantom"] + ("sources", "detector_step")
STAGE_KEYS["noise"] = STAGE_KEYS["forward"] + ("delta", "seed", "noise_mode")
STAGE_KEYS["project"] = STAGE_KEYS["noise"] + ("N", "alpha_rule")
STAGE_KEYS["reconstruct"] = STAGE_KEYS["project"] + ("lam", "beta", "u_floor", "grad_tol",
                                                     "max_iter", "method", "step0")
STAGE_KEYS["evaluate"] = STAGE_KEYS["reconstruct"]
STAGE_KEYS["export"] = STAGE_KEYS["reconstruct"]

# "lambda" is the natural spelling in files and on the command line
ALIASES = {"lambda": "lam"}
_FIELDS = {f.name: f for f in fields(PipelineConfig)}
_TYPES = {"float": float, "int": int, "str": str}


def canonical_key(key: str) -> str:
    key = key.strip().replace("-", "_")
    key = ALIASES.get(key, key)
    if key not in _FIELDS:
        raise ConfigError(f"unknown configuration key {key!r}")
    return key


def external_key(name: str) -> str:
    for ext, internal in ALIASES.items():
        if internal == name:
            return ext
    return name


def parse_value(key: str, text: str):
    kind = _TYPES[_FIELDS[key].type]
    text = text.strip()
    try:
        if kind is int:
            return int(text)
        if kind is float:
            if "/" in text:
                num, den = text.split("/", 1)
                return float(num) / float(den)
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from exc
    return text


def format_value(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, val = pair.split("=", 1)
        key = canonical_key(key)
        out[key] = parse_value(key, val)
    return out


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    path = Path(path)
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, val = line.split("=", 1)
        try:
            key = canonical_key(key)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = parse_value(key, val)
    values.update(overrides or {})
    return PipelineConfig(**values)


def dump_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        for f in fields(cfg):
            fh.write(f"{external_key(f.name)} = {format_value(getattr(cfg, f.name))}\n")

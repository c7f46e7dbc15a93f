"""Run configuration: one JSON file with a section per concern and per command.

Every field has a default, so ``{}`` is a valid configuration. ``validate``
collects all violations at once instead of stopping at the first.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any

from . import __version__
from .flow import INTEGRATORS
from .nonlinearity import KINDS


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)

    def to_dict(self) -> dict:
        return {"error": "config", "violations": self.violations}


@dataclass
class BasisSection:
    n_modes: int = 16
    quad_order: int | None = None


@dataclass
class MeasureSection:
    s: float | None = None
    R: float = 1.0
    M: int = 1000
    seed: int = 0


@dataclass
class NonlinearitySection:
    kind: str = "smooth_power"
    alpha: float = 1.0
    sign: int = 1
    normalize_at_zero: bool = True


@dataclass
class FlowSection:
    t_final: float = 1.0
    dt: float = 1e-3
    integrator: str = "strang_rk4"
    conservation_tol_H: float = 1e-6
    conservation_tol_L2: float = 1e-8
    record_stride: int = 100
    sigmas: list = field(default_factory=lambda: [0.45])


@dataclass
class ZerosSection:
    n_max: int = 100


@dataclass
class SampleSection:
    sigma: float = 0.45
    tail_points: int = 200


@dataclass
class EvolveSection:
    ensemble: str | None = None


@dataclass
class InvarianceSection:
    seeds: list = field(default_factory=lambda: [1, 2, 3])
    times: list = field(default_factory=lambda: [1.0, 5.0, 10.0])
    observables: list | None = None
    control_scale: float = 2.0
    control_times: list = field(default_factory=lambda: [1.0, 2.0])


@dataclass
class ChecksSection:
    bilinear_n_max: int = 512
    counting_N: list = field(default_factory=lambda: [16, 32, 64, 128, 256, 512, 1024])
    counting_L: int = 1
    representation_l_max: int = 1_000_000


@dataclass
class RunConfig:
    basis: BasisSection = field(default_factory=BasisSection)
    measure: MeasureSection = field(default_factory=MeasureSection)
    nonlinearity: NonlinearitySection = field(default_factory=NonlinearitySection)
    flow: FlowSection = field(default_factory=FlowSection)
    zeros: ZerosSection = field(default_factory=ZerosSection)
    sample: SampleSection = field(default_factory=SampleSection)
    evolve: EvolveSection = field(default_factory=EvolveSection)
    invariance: InvarianceSection = field(default_factory=InvarianceSection)
    checks: ChecksSection = field(default_factory=ChecksSection)
    out: str = "out"
    threads: int | None = None

    # derived values ------------------------------------------------------
    @property
    def s(self) -> float:
        if self.measure.s is not None:
            return float(self.measure.s)
        return 0.9 * self.nonlinearity.alpha / (self.nonlinearity.alpha + 2.0)

    @property
    def quad_order(self) -> int:
        q = self.basis.quad_order
        return int(q) if q is not None else max(4 * self.basis.n_modes, 2 * self.basis.n_modes + 16)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """Hash of everything that affects results (``out`` and ``threads`` excluded)."""
        d = self.to_dict()
        d.pop("out")
        d.pop("threads")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def stamp(self) -> dict:
        return {"config_hash": self.config_hash(), "version": __version__}


def _build(cls, data: Any, path: str, errors: list[str]):
    if not isinstance(data, dict):
        errors.append(f"{path}: expected an object")
        return cls()
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            errors.append(f"{path}.{key}: unknown field")
            continue
        default = getattr(cls(), key)
        if is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{path}.{key}", errors)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def _num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _pow2(x) -> bool:
    return _int(x) and x >= 1 and not x & (x - 1)


def validate(cfg: RunConfig) -> list[str]:
    """Every violated precondition, as human-readable strings."""
    e: list[str] = []
    b, m, nl, fl = cfg.basis, cfg.measure, cfg.nonlinearity, cfg.flow

    if not _int(b.n_modes) or b.n_modes < 1:
        e.append("basis.n_modes: must be an integer >= 1")
    if b.quad_order is not None and (not _int(b.quad_order) or
                                      (_int(b.n_modes) and b.quad_order < b.n_modes)):
        e.append("basis.quad_order: must be an integer >= basis.n_modes")

    if nl.kind not in KINDS:
        e.append(f"nonlinearity.kind: must be one of {list(KINDS)}")
    alpha_ok = _num(nl.alpha) and 0 < nl.alpha < 2
    if not alpha_ok:
        e.append("nonlinearity.alpha: must lie in (0, 2)")
    if nl.sign not in (-1, 0, 1) or isinstance(nl.sign, bool):
        e.append("nonlinearity.sign: must be -1, 0 or 1")
    if not isinstance(nl.normalize_at_zero, bool):
        e.append("nonlinearity.normalize_at_zero: must be a boolean")

    if m.s is not None and not (_num(m.s) and 0 < m.s < 0.5):
        e.append("measure.s: must lie in (0, 1/2)")
    elif m.s is not None and alpha_ok and m.s >= nl.alpha / (nl.alpha + 2):
        e.append("measure.s: must be below alpha/(alpha+2)")
    if not (_num(m.R) and m.R > 0):
        e.append("measure.R: must be positive")
    if not _int(m.M) or m.M < 1:
        e.append("measure.M: must be an integer >= 1")
    if not _int(m.seed) or not 0 <= m.seed < 2**64:
        e.append("measure.seed: must be an unsigned 64-bit integer")

    if not (_num(fl.t_final)):
        e.append("flow.t_final: must be a finite number")
    if not (_num(fl.dt) and fl.dt > 0):
        e.append("flow.dt: must be positive")
    if fl.integrator not in INTEGRATORS:
        e.append(f"flow.integrator: must be one of {list(INTEGRATORS)}")
    for name in ("conservation_tol_H", "conservation_tol_L2"):
        v = getattr(fl, name)
        if not (isinstance(v, (int, float)) and v > 0):
            e.append(f"flow.{name}: must be positive")
    if not _int(fl.record_stride) or fl.record_stride < 1:
        e.append("flow.record_stride: must be an integer >= 1")
    if not isinstance(fl.sigmas, list) or not all(_num(x) and 0 <= x < 0.5 for x in fl.sigmas):
        e.append("flow.sigmas: must be a list of values in [0, 1/2)")

    if not _int(cfg.zeros.n_max) or cfg.zeros.n_max < 1:
        e.append("zeros.n_max: must be an integer >= 1")

    if not (_num(cfg.sample.sigma) and 0 <= cfg.sample.sigma < 0.5):
        e.append("sample.sigma: must lie in [0, 1/2)")
    if not _int(cfg.sample.tail_points) or cfg.sample.tail_points < 2:
        e.append("sample.tail_points: must be an integer >= 2")

    inv = cfg.invariance
    if not isinstance(inv.seeds, list) or not inv.seeds or not all(_int(x) and x >= 0 for x in inv.seeds):
        e.append("invariance.seeds: must be a nonempty list of nonnegative integers")
    for name in ("times", "control_times"):
        v = getattr(inv, name)
        if not isinstance(v, list) or not v or not all(_num(x) and x > 0 for x in v):
            e.append(f"invariance.{name}: must be a nonempty list of positive times")
        elif _num(fl.dt) and fl.dt > 0 and _int(fl.record_stride) and fl.record_stride >= 1:
            grid = fl.dt * fl.record_stride
            if any(abs(x / grid - round(x / grid)) > 1e-6 for x in v):
                e.append(f"invariance.{name}: must be multiples of flow.dt * flow.record_stride")
    if not (_num(inv.control_scale) and inv.control_scale != 1.0):
        e.append("invariance.control_scale: must be a number other than 1")

    ch = cfg.checks
    if not _int(ch.bilinear_n_max) or ch.bilinear_n_max < 2:
        e.append("checks.bilinear_n_max: must be an integer >= 2")
    if not isinstance(ch.counting_N, list) or not ch.counting_N or not all(
            _pow2(x) and x <= 4096 for x in ch.counting_N):
        e.append("checks.counting_N: must be powers of two <= 4096")
    if not _pow2(ch.counting_L):
        e.append("checks.counting_L: must be a power of two")
    if not _int(ch.representation_l_max) or ch.representation_l_max < 18:
        e.append("checks.representation_l_max: must be an integer >= 18")

    if not isinstance(cfg.out, str) or not cfg.out:
        e.append("out: must be a nonempty path")
    if cfg.threads is not None and (not _int(cfg.threads) or cfg.threads < 1):
        e.append("threads: must be an integer >= 1")
    return e


def from_dict(data: dict) -> RunConfig:
    errors: list[str] = []
    cfg = _build(RunConfig, data, "config", errors)
    if not errors:
        errors = validate(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def load(path: str | None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config (or defaults when ``path`` is None) and apply overrides.

    Overrides use dotted keys, e.g. ``{"measure.seed": 7}``.
    """
    data: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"config file {path}: {exc}"]) from exc
    for key, value in (overrides or {}).items():
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return from_dict(data)

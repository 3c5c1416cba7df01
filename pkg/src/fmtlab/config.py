"""Run configuration: strict YAML parsing with defaults matching the
reference cubic-phantom experiment (15 mm cube, two embedded bars, 10x10
laser array, 60x30 detector array)."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass

import yaml

__all__ = ["RunConfig", "ConfigError", "parse_config", "config_from_dict"]


class ConfigError(ValueError):
    pass


@dataclass
class PhantomSection:
    dims_mm: tuple[float, float, float] = (15.0, 15.0, 15.0)
    spacing_mm: float = 1.0
    mu_a: float = 0.01
    mu_s: float = 1.0
    g: float = 0.0
    zeta: float = 1.0
    eta: float = 1.0


@dataclass
class InclusionBox:
    min_corner: tuple[float, float, float] = (0.0, 0.0, 0.0)
    max_corner: tuple[float, float, float] = (1.0, 1.0, 1.0)
    intensity: float = 100.0


def _default_inclusions():
    # Two 1x1x10 mm bars at 3 mm depth, 6 mm apart (depth measured from the
    # top face to the bar's top; bars run along y).
    return [
        InclusionBox(min_corner=(4.0, 2.0, 11.0), max_corner=(5.0, 12.0, 12.0), intensity=100.0),
        InclusionBox(min_corner=(10.0, 2.0, 11.0), max_corner=(11.0, 12.0, 12.0), intensity=100.0),
    ]


@dataclass
class LaserSection:
    grid_center: tuple[float, float] = (7.5, 7.5)
    pitch_mm: float = 1.0
    nx: int = 10
    ny: int = 10
    power: float = 1.0
    p_max: float = 1.0
    L_max: int = 100


@dataclass
class DetectorSection:
    rows: int = 60
    cols: int = 30
    pitch_mm: float = 1.0
    height_mm: float = 10.0


@dataclass
class ReconSection:
    lam: float = 1e-4
    alpha: float = 1.0
    max_iters: int = 2000
    tol: float = 1e-8


@dataclass
class IllumSection:
    mu: float = 1.5e-8
    epsilon: float = 0.01
    outer_iters: int = 10
    sweeps: int = 200
    tol: float = 1e-6
    gamma_interior: float = 0.0


@dataclass
class LoopSection:
    rounds_max: int = 10
    stop_tol: float = 1e-3


@dataclass
class NoiseSection:
    model: str = "none"
    sigma_rel: float = 0.0
    seed: int = 0


@dataclass
class OutputSection:
    dir: str = "fmtlab_out"
    slice_axes: tuple[str, str, str] = ("x", "y", "z")
    slice_coords: tuple[float, float, float] = (13.0, 9.0, 6.0)


@dataclass
class RunConfig:
    phantom: PhantomSection = field(default_factory=PhantomSection)
    inclusions: list[InclusionBox] = field(default_factory=_default_inclusions)
    lasers: LaserSection = field(default_factory=LaserSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    recon: ReconSection = field(default_factory=ReconSection)
    illum: IllumSection = field(default_factory=IllumSection)
    loop: LoopSection = field(default_factory=LoopSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    output: OutputSection = field(default_factory=OutputSection)


_RANGE_CHECKS = [
    ("phantom.spacing_mm", lambda c: c.phantom.spacing_mm > 0, "must be positive"),
    ("phantom.mu_a", lambda c: c.phantom.mu_a > 0, "must be positive"),
    ("phantom.mu_s", lambda c: c.phantom.mu_s > 0, "must be positive"),
    ("phantom.g", lambda c: -1 < c.phantom.g < 1, "must lie in (-1, 1)"),
    ("phantom.zeta", lambda c: c.phantom.zeta > 0, "must be positive"),
    ("phantom.eta", lambda c: c.phantom.eta > 0, "must be positive"),
    ("phantom.dims_mm", lambda c: all(d > 0 for d in c.phantom.dims_mm), "must be positive"),
    ("lasers.power", lambda c: c.lasers.power > 0, "must be positive"),
    ("lasers.p_max", lambda c: c.lasers.p_max > 0, "must be positive"),
    ("lasers.nx", lambda c: c.lasers.nx > 0, "must be positive"),
    ("lasers.ny", lambda c: c.lasers.ny > 0, "must be positive"),
    ("detector.rows", lambda c: c.detector.rows > 0, "must be positive"),
    ("detector.cols", lambda c: c.detector.cols > 0, "must be positive"),
    ("detector.pitch_mm", lambda c: c.detector.pitch_mm > 0, "must be positive"),
    ("detector.height_mm", lambda c: c.detector.height_mm > 0, "must be positive"),
    ("recon.lam", lambda c: c.recon.lam > 0, "must be positive"),
    ("recon.alpha", lambda c: 0 <= c.recon.alpha <= 1, "must lie in [0, 1]"),
    ("recon.max_iters", lambda c: c.recon.max_iters >= 1, "must be at least 1"),
    ("illum.mu", lambda c: c.illum.mu > 0, "must be positive"),
    ("illum.epsilon", lambda c: c.illum.epsilon > 0, "must be positive"),
    ("illum.gamma_interior", lambda c: c.illum.gamma_interior >= 0, "must be nonnegative"),
    ("loop.rounds_max", lambda c: c.loop.rounds_max >= 1, "must be at least 1"),
    ("loop.stop_tol", lambda c: c.loop.stop_tol >= 0, "must be nonnegative"),
    ("noise.model", lambda c: c.noise.model in ("none", "gaussian"), "must be 'none' or 'gaussian'"),
    ("noise.sigma_rel", lambda c: c.noise.sigma_rel >= 0, "must be nonnegative"),
]


def _fill(dc_type, data, path):
    """Strictly populate a dataclass from a mapping: unknown keys rejected."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(dc_type)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in data:
            continue
        value = data[name]
        sub = f"{path}.{name}" if path else name
        if name == "inclusions":
            if not isinstance(value, list):
                raise ConfigError(f"{sub}: expected a list")
            value = [_fill(InclusionBox, v, f"{sub}[{i}]") for i, v in enumerate(value)]
        elif is_dataclass(f.type) or (isinstance(f.type, str) and f.type.endswith("Section")):
            section = f.default_factory()
            value = _fill(type(section), value, sub)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return dc_type(**kwargs)


def config_from_dict(data: dict | None) -> RunConfig:
    cfg = _fill(RunConfig, data, "")
    for key, check, msg in _RANGE_CHECKS:
        if not check(cfg):
            raise ConfigError(f"{key}: {msg}")
    dims = cfg.phantom.dims_mm
    for box in cfg.inclusions:
        inside = all(0 <= box.min_corner[a] <= box.max_corner[a] <= dims[a] for a in range(3))
        if not inside:
            raise ConfigError(f"inclusions: box {box.min_corner}-{box.max_corner} "
                              f"not inside phantom dims {dims}")
    return cfg


def parse_config(path) -> RunConfig:
    """Load and validate a YAML config; an empty file yields all defaults."""
    with open(path) as f:
        data = yaml.safe_load(f)
    return config_from_dict(data)

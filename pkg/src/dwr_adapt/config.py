"""Run configuration: dataclasses and an INI reader.

Grammar (``configparser`` INI, ``#``/``;`` comments at line start)::

    [run]        problem, alpha, epsilon, max_iterations, max_dofs, degree,
                 dual_strategy, refine_mode, reference, reference_levels,
                 target_value
    [mesh]       file (relative to the config file) or geometry + parameters
    [material]   E, nu as ``tag: value, tag: value``; plane_strain;
                 optional core_center, core_axes, core_tag, background_tag
    [fibers]     regions, beta, T, direction (circumferential | x y), center
    [boundary]   dirichlet / tractions as ``tag: x y; tag: x y``; body = x y
    [hyperelastic] law, incompressible, plane, kappa and the law parameters
    [newton]     abs_tol, rel_tol, max_iter, load_steps, max_halvings
    [goal]       kind and its parameters; kind = combined lists sub-goal
                 sections in ``goals`` and their ``omegas``
    [fsi]        fluid_tag, solid_tag, load_center, load_width,
                 load_direction, amplitude, coupled

Environment overrides: ``DWR_ADAPT_ALPHA`` and ``DWR_ADAPT_EPSILON``.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .hyperelastic import NewtonConfig

PROBLEMS = ("elasticity", "hyperelastic", "fsi")
DUAL_STRATEGIES = ("enriched_solve", "extrapolate")
ENV_ALPHA = "DWR_ADAPT_ALPHA"
ENV_EPSILON = "DWR_ADAPT_EPSILON"


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass
class MeshConfig:
    file: str | None = None
    geometry: str | None = None  # artery | silicone | two_subdomain_square | unit_square
    params: dict = field(default_factory=dict)


@dataclass
class MaterialConfig:
    E: dict = field(default_factory=dict)
    nu: dict = field(default_factory=dict)
    plane_strain: bool = True
    core_center: tuple | None = None
    core_axes: tuple | None = None
    core_tag: int = 2
    background_tag: int = 1
    sample_order: int = 4


@dataclass
class FiberConfig:
    regions: tuple = ()
    beta: float = 1.0
    T: float = 0.0
    direction: object = "circumferential"
    center: tuple = (0.0, 0.0)


@dataclass
class BoundaryConfig:
    dirichlet: dict = field(default_factory=dict)  # tag -> (x, y)
    tractions: dict = field(default_factory=dict)
    body: tuple | None = None


@dataclass
class HyperConfig:
    law: str = "mooney"
    params: dict = field(default_factory=dict)
    incompressible: bool = False
    plane: str = "strain"
    kappa: float = 0.0


@dataclass
class GoalConfig:
    kind: str = "subdomain_integral"
    regions: tuple | None = None
    weights: tuple = (1.0, 1.0)
    tag: int = 0
    direction: tuple | None = None
    thickness: float = 1.0
    point: tuple = (0.0, 0.0)
    component: int = 0
    goals: list = field(default_factory=list)  # sub-goal GoalConfigs for kind = combined
    omegas: tuple = ()


@dataclass
class FsiConfig:
    fluid_tag: int = 1
    solid_tag: int = 2
    load_center: tuple = (0.5, 0.5)
    load_width: float = 0.3
    load_direction: tuple = (4.0, 2.0)
    amplitude: float = 1.0
    coupled: bool = True


@dataclass
class AdaptConfig:
    """Everything needed for one adaptive (or uniform) run."""

    problem: str = "elasticity"
    alpha: float = 0.5
    epsilon: float = 1e-8
    max_iterations: int = 10
    max_dofs: int | None = None
    degree: int = 1
    dual_strategy: str = "enriched_solve"
    refine_mode: str = "bisect"
    reference: bool = True
    reference_levels: int = 2
    target_value: float | None = None
    mesh: MeshConfig = field(default_factory=MeshConfig)
    material: MaterialConfig = field(default_factory=MaterialConfig)
    fibers: FiberConfig | None = None
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    hyper: HyperConfig = field(default_factory=HyperConfig)
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    goal: GoalConfig = field(default_factory=GoalConfig)
    fsi: FsiConfig = field(default_factory=FsiConfig)
    base_dir: str = "."

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.epsilon > 0.0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {PROBLEMS}")
        if self.dual_strategy not in DUAL_STRATEGIES:
            raise ConfigError(f"unknown dual_strategy {self.dual_strategy!r}; choose from {DUAL_STRATEGIES}")
        if self.degree not in (1, 2, 3):
            raise ConfigError("degree must be 1, 2 or 3")
        if self.reference_levels < 0:
            raise ConfigError("reference_levels must be >= 0")

    def with_env_overrides(self, environ=None) -> "AdaptConfig":
        """Copy with alpha/epsilon taken from the environment when set."""
        env = os.environ if environ is None else environ
        changes = {}
        if env.get(ENV_ALPHA):
            changes["alpha"] = float(env[ENV_ALPHA])
        if env.get(ENV_EPSILON):
            changes["epsilon"] = float(env[ENV_EPSILON])
        if not changes:
            return self
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return AdaptConfig(**data)


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------
def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _scalar_map(text: str) -> dict:
    """``'1: 0.6, 2: 0.011'`` -> {1: 0.6, 2: 0.011}."""
    out = {}
    for item in text.replace(";", ",").split(","):
        if not item.strip():
            continue
        try:
            k, v = item.split(":")
            out[int(k)] = float(v)
        except ValueError as exc:
            raise ConfigError(f"bad 'tag: value' entry {item!r}") from exc
    return out


def _vector_map(text: str) -> dict:
    """``'1: 0 0; 2: 0 57.3'`` -> {1: (0, 0), 2: (0, 57.3)}."""
    out = {}
    for item in text.split(";"):
        if not item.strip():
            continue
        try:
            k, v = item.split(":")
            vec = _floats(v)
        except ValueError as exc:
            raise ConfigError(f"bad 'tag: x y' entry {item!r}") from exc
        if len(vec) != 2:
            raise ConfigError(f"entry {item!r} needs two components")
        out[int(k)] = vec
    return out


def _goal(sec: configparser.SectionProxy, parser: configparser.ConfigParser) -> GoalConfig:
    g = GoalConfig(kind=sec.get("kind", "subdomain_integral").strip())
    if "regions" in sec:
        g.regions = _ints(sec["regions"])
    if "weights" in sec:
        g.weights = _floats(sec["weights"])
    g.tag = sec.getint("tag", 0)
    if "direction" in sec:
        g.direction = _floats(sec["direction"])
    g.thickness = sec.getfloat("thickness", 1.0)
    if "point" in sec:
        g.point = _floats(sec["point"])
    g.component = sec.getint("component", 0)
    if g.kind == "combined":
        names = [n.strip() for n in sec.get("goals", "").split(",") if n.strip()]
        if not names:
            raise ConfigError("combined goal needs 'goals = section, section'")
        for n in names:
            if n not in parser:
                raise ConfigError(f"goal section [{n}] not found")
            sub = _goal(parser[n], parser)
            if sub.kind == "combined":
                raise ConfigError("combined goals cannot be nested")
            g.goals.append(sub)
        g.omegas = _floats(sec.get("omegas", " ".join(["1"] * len(names))))
        if len(g.omegas) != len(g.goals):
            raise ConfigError("one omega per sub-goal required")
    return g


HYPER_PARAMS = ("mu", "lam", "C10", "C01", "C20", "C02", "C30", "C11", "E", "Jm")


def load_config(path) -> AdaptConfig:
    """Read an INI configuration file."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str  # keep parameter names such as C10 verbatim
    if not parser.read(path):
        raise ConfigError(f"cannot read configuration {path}")
    return parse_config(parser, base_dir=str(path.parent))


def parse_config(parser: configparser.ConfigParser, base_dir: str = ".") -> AdaptConfig:
    run = parser["run"] if "run" in parser else {}
    kw: dict = {"base_dir": base_dir}
    try:
        if "run" in parser:
            r = parser["run"]
            kw["problem"] = r.get("problem", "elasticity").strip()
            kw["alpha"] = r.getfloat("alpha", 0.5)
            kw["epsilon"] = r.getfloat("epsilon", 1e-8)
            kw["max_iterations"] = r.getint("max_iterations", 10)
            kw["max_dofs"] = r.getint("max_dofs") if "max_dofs" in r else None
            kw["degree"] = r.getint("degree", 1)
            kw["dual_strategy"] = r.get("dual_strategy", "enriched_solve").strip()
            kw["refine_mode"] = r.get("refine_mode", "bisect").strip()
            kw["reference"] = _bool(r.get("reference", "yes"))
            kw["reference_levels"] = r.getint("reference_levels", 2)
            kw["target_value"] = r.getfloat("target_value") if "target_value" in r else None
        del run
        if "mesh" in parser:
            m = parser["mesh"]
            params = {k: v for k, v in m.items() if k not in ("file", "geometry")}
            kw["mesh"] = MeshConfig(m.get("file"), m.get("geometry"), params)
        if "material" in parser:
            m = parser["material"]
            mc = MaterialConfig(_scalar_map(m.get("E", "")), _scalar_map(m.get("nu", "")),
                                _bool(m.get("plane_strain", "yes")))
            if "core_center" in m:
                mc.core_center = _floats(m["core_center"])
                mc.core_axes = _floats(m["core_axes"])
                mc.core_tag = m.getint("core_tag", 2)
                mc.background_tag = m.getint("background_tag", 1)
                mc.sample_order = m.getint("sample_order", 4)
            kw["material"] = mc
        if "fibers" in parser:
            f = parser["fibers"]
            direction = f.get("direction", "circumferential").strip()
            kw["fibers"] = FiberConfig(_ints(f.get("regions", "")), f.getfloat("beta", 1.0), f.getfloat("T", 0.0),
                                       direction if direction == "circumferential" else _floats(direction),
                                       _floats(f.get("center", "0 0")))
        if "boundary" in parser:
            b = parser["boundary"]
            kw["boundary"] = BoundaryConfig(_vector_map(b.get("dirichlet", "")), _vector_map(b.get("tractions", "")),
                                            _floats(b["body"]) if "body" in b else None)
        if "hyperelastic" in parser:
            h = parser["hyperelastic"]
            kw["hyper"] = HyperConfig(h.get("law", "mooney").strip(),
                                      {k: h.getfloat(k) for k in HYPER_PARAMS if k in h},
                                      _bool(h.get("incompressible", "no")), h.get("plane", "strain").strip(),
                                      h.getfloat("kappa", 0.0))
        if "newton" in parser:
            n = parser["newton"]
            kw["newton"] = NewtonConfig(n.getfloat("abs_tol", 1e-10), n.getfloat("rel_tol", 1e-9),
                                        n.getint("max_iter", 25), n.getint("load_steps", 1),
                                        n.getint("max_halvings", 8))
        if "goal" in parser:
            kw["goal"] = _goal(parser["goal"], parser)
        if "fsi" in parser:
            s = parser["fsi"]
            kw["fsi"] = FsiConfig(s.getint("fluid_tag", 1), s.getint("solid_tag", 2),
                                  _floats(s.get("load_center", "0.5 0.5")), s.getfloat("load_width", 0.3),
                                  _floats(s.get("load_direction", "4 2")), s.getfloat("amplitude", 1.0),
                                  _bool(s.get("coupled", "yes")))
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return AdaptConfig(**kw)

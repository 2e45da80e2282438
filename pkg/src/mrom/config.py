"""Experiment configuration: sectioned key-value text with strict key checking.

Schema (every key optional unless noted; defaults in the dataclasses below)::

    [problem]   name = burgers | reacting;  grid = 256  or  64,32
    [time]      scheme = backward-euler | bdf2;  dt;  n_steps
    [training]  design = lattice | points | count;  lattice = 10,8;  count = 5;
                points = mu1 mu2; mu1 mu2;  subset = all | first | equispaced;
                subset_size;  zero_column = true
    [train]     val_fraction, learning_rate, beta1, beta2, eps, batch_size,
                max_epochs, patience (none disables), init, reshuffle,
                final_learning_rate (cosine decay target; none keeps the rate)
    [rom]       dims = 3,5;  methods = pod-galerkin,manifold-lspg,...;
                online = mu1 mu2; mu1 mu2;  tol;  max_iter;  c1;  c2;
                force_affine = false
    [metrics]   pod_projection, optimal_projection, manifold_projection,
                error_bound (booleans);  safety_factor = 2
    [sweep]     ntrain = 5,10,20;  subset_sizes = 200,300;  subset_rule = first
    [run]       seed = 0;  threads = 1
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .autoencoder import AutoencoderSpec, burgers_spec, reacting_spec
from .fom import (BURGERS_DOMAIN, BURGERS_TEST_POINTS, REACTING_DOMAIN, REACTING_TEST_POINTS,
                  BurgersModel, ReactingFlowModel, scheme_by_name)
from .io import fnv1a64
from .offline import TrainConfig
from .rom import SolverConfig

METHODS = ("pod-galerkin", "pod-lspg", "manifold-galerkin", "manifold-lspg", "encoder-galerkin")


class ConfigError(ValueError):
    pass


def _ints(text):
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _points(text):
    pts = []
    for chunk in text.split(";"):
        if chunk.strip():
            pts.append(tuple(float(v) for v in chunk.replace(",", " ").split()))
    return tuple(pts)


def _optional(text, kind):
    return None if text.strip().lower() == "none" else kind(text)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class ProblemConfig:
    name: str = "burgers"
    grid: tuple = ()

    def resolved_grid(self) -> tuple:
        if self.grid:
            return self.grid
        return (256,) if self.name == "burgers" else (64, 32)


@dataclass(frozen=True)
class TimeConfig:
    scheme: str = "backward-euler"
    dt: float = 0.07
    n_steps: int = 500


@dataclass(frozen=True)
class TrainingSetConfig:
    design: str = "lattice"
    lattice: tuple = (10, 8)
    count: int = 5
    points: tuple = ()
    subset: str = "all"
    subset_size: int = 0
    zero_column: bool = True


@dataclass(frozen=True)
class RomRunConfig:
    dims: tuple = (5,)
    methods: tuple = ("pod-galerkin", "pod-lspg", "manifold-galerkin", "manifold-lspg")
    online: tuple = ()
    tol: float = 1e-6
    max_iter: int = 25
    c1: float = 1e-4
    c2: float = 0.9
    force_affine: bool = False

    def solver(self) -> SolverConfig:
        return SolverConfig(self.tol, self.max_iter, self.c1, self.c2)


@dataclass(frozen=True)
class MetricsConfig:
    pod_projection: bool = True
    optimal_projection: bool = True
    manifold_projection: bool = True
    error_bound: bool = False
    safety_factor: float = 2.0


@dataclass(frozen=True)
class SweepConfig:
    ntrain: tuple = (5, 10, 20)
    subset_sizes: tuple = (200, 300, 400, 500)
    subset_rule: str = "first"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int = 1


_PARSERS = {int: int, float: float, str: str, bool: _bool}
_SECTIONS = {
    "problem": (ProblemConfig, {"grid": _ints}),
    "time": (TimeConfig, {}),
    "training": (TrainingSetConfig, {"lattice": _ints, "points": _points}),
    "train": (TrainConfig, {"patience": lambda t: _optional(t, int),
                            "final_learning_rate": lambda t: _optional(t, float)}),
    "rom": (RomRunConfig, {"dims": _ints, "online": _points,
                           "methods": lambda t: tuple(v.strip() for v in t.split(",") if v.strip())}),
    "metrics": (MetricsConfig, {}),
    "sweep": (SweepConfig, {"ntrain": _ints, "subset_sizes": _ints}),
    "run": (RunConfig, {}),
}
_ATTR = {"problem": "problem", "time": "time", "training": "training", "train": "train",
         "rom": "rom", "metrics": "metrics", "sweep": "sweep", "run": "run"}


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig = ProblemConfig()
    time: TimeConfig = TimeConfig()
    training: TrainingSetConfig = TrainingSetConfig()
    train: TrainConfig = field(default_factory=TrainConfig)
    rom: RomRunConfig = RomRunConfig()
    metrics: MetricsConfig = MetricsConfig()
    sweep: SweepConfig = SweepConfig()
    run: RunConfig = RunConfig()

    # -- parsing -----------------------------------------------------------

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        parts = {}
        for section in cp.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            klass, special = _SECTIONS[section]
            types = {f.name: f.type for f in fields(klass)}
            defaults = {f.name: getattr(klass(), f.name) for f in fields(klass)}
            kwargs = {}
            for key, raw in cp.items(section):
                if key not in types:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                try:
                    if key in special:
                        kwargs[key] = special[key](raw)
                    else:
                        kind = type(defaults[key])
                        kwargs[key] = _PARSERS.get(kind, str)(raw.strip())
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"[{section}] {key}: {exc}") from None
            try:
                parts[_ATTR[section]] = klass(**kwargs)
            except ValueError as exc:
                raise ConfigError(f"[{section}]: {exc}") from None
        cfg = cls(**parts)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())

    def to_text(self) -> str:
        """Canonical text: every section and key, fixed order, exact float repr."""
        out = []
        for section, attr in _ATTR.items():
            obj = getattr(self, attr)
            out.append(f"[{section}]")
            for f in fields(obj):
                v = getattr(obj, f.name)
                out.append(f"{f.name} = {_format(f.name, v)}")
            out.append("")
        return "\n".join(out)

    def hash(self) -> str:
        return f"{fnv1a64(self.to_text().encode()):016x}"

    def offline_hash(self) -> str:
        """Hash of everything the offline artifacts depend on."""
        keep = []
        for block in self.to_text().split("\n\n"):
            if block.startswith(("[problem]", "[time]", "[training]", "[train]")):
                keep.append(block)
        keep.append(f"dims = {_format('dims', self.rom.dims)}")
        keep.append(f"autoencoder = {str(self.uses_autoencoder).lower()}")
        return f"{fnv1a64(chr(10).join(keep).encode()):016x}"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, seed=seed),
                       train=replace(self.train, seed=seed))

    # -- checks ------------------------------------------------------------

    def validate(self):
        p, r = self.problem, self.rom
        if p.name not in ("burgers", "reacting"):
            raise ConfigError(f"unknown problem {p.name!r}")
        grid = p.resolved_grid()
        if len(grid) != (1 if p.name == "burgers" else 2):
            raise ConfigError(f"grid {grid} does not match problem {p.name}")
        try:
            scheme_by_name(self.time.scheme, self.time.dt)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.time.n_steps < 1:
            raise ConfigError("n_steps must be positive")
        if not r.methods:
            raise ConfigError("select at least one method")
        for m in r.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        if not r.dims or min(r.dims) < 1:
            raise ConfigError("dims must be positive")
        for pt in r.online + self.training.points:
            if len(pt) != 2:
                raise ConfigError(f"parameter point {pt} must have 2 entries")
        t = self.training
        if t.design not in ("lattice", "points", "count"):
            raise ConfigError(f"unknown training design {t.design!r}")
        if t.design == "points" and not t.points:
            raise ConfigError("design=points needs a points list")
        if t.subset not in ("all", "first", "equispaced"):
            raise ConfigError(f"unknown subset rule {t.subset!r}")
        if t.subset != "all" and not 1 <= t.subset_size <= self.time.n_steps:
            raise ConfigError("subset_size must lie in [1, n_steps]")
        if self.run.threads < 1:
            raise ConfigError("threads must be positive")
        if self.uses_autoencoder:
            for d in r.dims:
                self.autoencoder_spec(d).validate()

    # -- derived objects -----------------------------------------------------

    @property
    def uses_autoencoder(self) -> bool:
        return any(m.startswith(("manifold", "encoder")) for m in self.rom.methods) and \
            not (self.rom.force_affine and "encoder-galerkin" not in self.rom.methods)

    @property
    def domain(self):
        return BURGERS_DOMAIN if self.problem.name == "burgers" else REACTING_DOMAIN

    def fom(self):
        g = self.problem.resolved_grid()
        return BurgersModel(g[0]) if self.problem.name == "burgers" else ReactingFlowModel(*g)

    def scheme(self):
        return scheme_by_name(self.time.scheme, self.time.dt)

    def autoencoder_spec(self, p: int) -> AutoencoderSpec:
        g = self.problem.resolved_grid()
        return burgers_spec(p, g[0]) if self.problem.name == "burgers" else reacting_spec(p, g)

    def online_points(self) -> tuple:
        if self.rom.online:
            return self.rom.online
        return BURGERS_TEST_POINTS if self.problem.name == "burgers" else REACTING_TEST_POINTS

    def training_points(self, count: int | None = None) -> np.ndarray:
        t = self.training
        if count is not None:
            return design_points(self.domain, count)
        if t.design == "points":
            return np.array(t.points, dtype=np.float64)
        if t.design == "count":
            return design_points(self.domain, t.count)
        return lattice_points(self.domain, *t.lattice)


def _format(name, v):
    if name in ("points", "online"):
        return "; ".join(" ".join(repr(float(x)) for x in pt) for pt in v)
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    return str(v).lower() if isinstance(v, bool) else str(v)


def lattice_points(domain, n1: int, n2: int) -> np.ndarray:
    (a, b), (c, d) = domain
    u = np.linspace(a, b, n1) if n1 > 1 else np.array([(a + b) / 2])
    v = np.linspace(c, d, n2) if n2 > 1 else np.array([(c + d) / 2])
    return np.array([(x, y) for x in u for y in v])


def design_points(domain, n: int) -> np.ndarray:
    """Training design with ``n`` points.

    The most nearly square ``n1 x n2`` lattice with ``n1 >= n2 >= 2`` when one
    exists; otherwise the four corners plus centre (``n = 5``) or a plain
    lattice ``n x 1``.
    """
    if n < 1:
        raise ConfigError("training count must be positive")
    for n2 in range(int(math.isqrt(n)), 1, -1):
        if n % n2 == 0:
            return lattice_points(domain, n // n2, n2)
    if n == 5:
        (a, b), (c, d) = domain
        return np.array([(a, c), (b, c), (a, d), (b, d), ((a + b) / 2, (c + d) / 2)])
    return lattice_points(domain, n, 1)

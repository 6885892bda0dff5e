"""Strict TOML run configuration.

Example::

    seed = 7
    threads = "auto"

    [problem]
    name = "linear"
    a = 1.0
    b = 1.0
    c = 0.5
    lambda = 1.0

    [[schemes]]
    name = "cstm"
    theta = 0.5

    [converge]
    fine_exponent = 12
    paths = 2000

Unknown keys or sections, duplicate keys and out-of-range values are
rejected before anything runs.
"""

from __future__ import annotations

import enum
import math
import re
import sys
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, InvalidParameterError
from .experiments import Reference
from .models import DriftSplit, JumpSdeProblem, get_problem
from .schemes import ImplicitMethod, ImplicitSolveConfig, SchemeKind, SchemeSpec

__all__ = [
    "Command",
    "RunConfig",
    "SchemeEntry",
    "parse_config",
]


class Command(str, enum.Enum):
    PATH = "path"
    CONVERGE = "converge"
    STABILITY = "stability"
    AMPLIFICATION = "amplification"
    ANALYTIC = "analytic"


@dataclass(frozen=True)
class SchemeEntry:
    name: str
    theta: float = 0.5
    split: bool = True


@dataclass(frozen=True)
class PathSection:
    fine_exponent: int = 10
    horizon: float = 1.0
    ratio: int = 1
    path_index: int = 0


@dataclass(frozen=True)
class ConvergeSection:
    fine_exponent: int = 12
    ratios: tuple[int, ...] | None = None
    paths: int = 2000
    horizon: float = 1.0
    reference: str | None = None
    reference_scheme: str | None = None


@dataclass(frozen=True)
class StabilitySection:
    dts: tuple[float, ...] = (0.02, 0.05, 0.08)
    horizon: float = 2500.0
    paths: int = 2000
    max_points: int = 2000
    epsilon: float = 1e-3
    analytic: bool = False


@dataclass(frozen=True)
class AmplificationSection:
    dts: tuple[float, ...] = (0.01,)
    samples: int = 1_000_000


@dataclass(frozen=True)
class AnalyticSection:
    dts: tuple[float, ...] = (0.02, 0.05, 0.08)
    thetas: tuple[float, ...] = (0.0, 0.5, 1.0)


@dataclass(frozen=True)
class ImplicitSection:
    tolerance: float = 1e-12
    max_iterations: int = 100
    method: str = "fixed-point"


_DEFAULT_SCHEMES = {
    Command.PATH: (SchemeEntry("cstm", 0.5),),
    Command.CONVERGE: (SchemeEntry("cstm", 0.5),),
    Command.STABILITY: (SchemeEntry("cstm", 1.0),),
    Command.AMPLIFICATION: (SchemeEntry("cstm", 0.5),),
    Command.ANALYTIC: (),
}


@dataclass(frozen=True)
class RunConfig:
    command: Command
    problem: str = "linear"
    problem_params: dict[str, float] = field(default_factory=dict)
    schemes: tuple[SchemeEntry, ...] = ()
    seed: int = 0
    out: str = "results"
    threads: int | str = 1
    path: PathSection = PathSection()
    converge: ConvergeSection = ConvergeSection()
    stability: StabilitySection = StabilitySection()
    amplification: AmplificationSection = AmplificationSection()
    analytic: AnalyticSection = AnalyticSection()
    implicit: ImplicitSection = ImplicitSection()

    def build_problem(self) -> JumpSdeProblem:
        return get_problem(self.problem, self.problem_params)

    def scheme_specs(self, problem: JumpSdeProblem | None = None) -> list[SchemeSpec]:
        implicit = ImplicitSolveConfig(self.implicit.tolerance, self.implicit.max_iterations,
                                       ImplicitMethod(self.implicit.method))
        problem = problem or self.build_problem()
        specs = []
        for entry in self.schemes:
            kind = SchemeKind(entry.name)
            split = None
            if kind.uses_split and not entry.split:
                # tame the whole drift
                split = DriftSplit(u=np.zeros_like, v=problem.drift)
            specs.append(SchemeSpec(kind, entry.theta, split, implicit))
        return specs

    def reference(self) -> Reference:
        if self.converge.reference is not None:
            return Reference(self.converge.reference)
        return Reference.EXACT_LINEAR if self.problem == "linear" else Reference.FINE_NUMERICAL

    def echo(self) -> dict[str, Any]:
        """Plain-data view of the resolved configuration, for the run manifest."""
        data = asdict(self)
        data["command"] = self.command.value
        return data


# -- parsing -------------------------------------------------------------------------

_HEADER = re.compile(r"^\s*(\[\[?)\s*([^\]]+?)\s*\]\]?\s*(#.*)?$")
_KEY = re.compile(r"""^\s*("[^"]*"|'[^']*'|[A-Za-z0-9_\-.]+)\s*=""")


def _check_duplicates(text: str) -> None:
    """Reject repeated keys, naming both line numbers."""
    seen: dict[tuple[str, str], int] = {}
    tables: dict[str, int] = {}
    scope = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        header = _HEADER.match(line)
        if header:
            bracket, name = header.group(1), header.group(2).strip()
            if bracket == "[":
                if name in tables:
                    raise ConfigError(f"duplicate section [{name}] at lines {tables[name]} and {lineno}")
                tables[name] = lineno
                scope = name
            else:
                scope = f"{name}#{lineno}"
            continue
        key = _KEY.match(line)
        if key:
            k = key.group(1).strip("\"'")
            if (scope, k) in seen:
                where = f"[{scope.split('#')[0]}]" if scope else "top level"
                raise ConfigError(f"duplicate key {k!r} in {where} at lines {seen[scope, k]} and {lineno}")
            seen[scope, k] = lineno


def _take(section: dict[str, Any], where: str, spec: dict[str, type | tuple[type, ...]]) -> dict[str, Any]:
    unknown = set(section) - set(spec)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    out = {}
    for key, value in section.items():
        expected = spec[key]
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if expected is tuple:
            if not isinstance(value, list):
                raise ConfigError(f"{where}.{key} must be an array")
            value = tuple(value)
        elif not isinstance(value, expected) or (isinstance(value, bool) and expected is not bool):
            raise ConfigError(f"{where}.{key} has the wrong type ({type(value).__name__})")
        out[key] = value
    return out


def _floats(values, where: str) -> tuple[float, ...]:
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where} must contain numbers")
        out.append(float(v))
    return tuple(out)


def _ints(values, where: str) -> tuple[int, ...]:
    if any(isinstance(v, bool) or not isinstance(v, int) for v in values):
        raise ConfigError(f"{where} must contain integers")
    return tuple(values)


def _positive(value: float, where: str) -> None:
    if not (value > 0 and math.isfinite(value)):
        raise ConfigError(f"{where} must be positive, got {value}")


def _scheme_entry(raw: dict[str, Any], idx: int) -> SchemeEntry:
    where = f"schemes[{idx}]"
    data = _take(raw, where, {"name": str, "theta": float, "split": bool})
    if "name" not in data:
        raise ConfigError(f"{where} needs a name")
    try:
        kind = SchemeKind(data["name"])
    except ValueError:
        known = ", ".join(k.value for k in SchemeKind)
        raise ConfigError(f"unknown scheme {data['name']!r}; known: {known}") from None
    theta = data.get("theta", 0.5)
    if not 0.0 <= theta <= 1.0:
        raise ConfigError(f"{where}.theta must lie in [0, 1], got {theta}")
    if "theta" in data and not kind.uses_theta:
        raise ConfigError(f"{where}: theta does not apply to {kind.value}")
    return SchemeEntry(kind.value, theta, data.get("split", True))


def parse_config(text: str, command: Command | str | None = None) -> RunConfig:
    """Parse and validate a run configuration document.

    ``command`` (from the CLI) wins over a ``command`` key in the document;
    if both are given they must agree.
    """
    _check_duplicates(text)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from None

    top = {k: v for k, v in doc.items() if not isinstance(v, (dict, list)) or k == "schemes"}
    sections = {k: v for k, v in doc.items() if k not in top}
    known_sections = {"problem", "path", "converge", "stability", "amplification", "analytic", "implicit"}
    unknown = set(sections) - known_sections
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    top_data = _take(top, "top level", {
        "command": str, "seed": int, "out": str, "threads": (int, str), "schemes": list,
    })

    doc_cmd = top_data.get("command")
    try:
        cmd = Command(command) if command is not None else Command(doc_cmd) if doc_cmd else None
        if command is not None and doc_cmd and Command(doc_cmd) is not cmd:
            raise ConfigError(f"config is for {doc_cmd!r} but {cmd.value!r} was requested")
    except ValueError:
        raise ConfigError(f"unknown command {doc_cmd or command!r}") from None
    if cmd is None:
        raise ConfigError("no command given")

    seed = top_data.get("seed", 0)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    threads = top_data.get("threads", 1)
    if threads != "auto" and (not isinstance(threads, int) or threads < 1):
        raise ConfigError(f"threads must be a positive integer or 'auto', got {threads!r}")

    raw_schemes = top_data.get("schemes")
    if raw_schemes is None:
        schemes = _DEFAULT_SCHEMES[cmd]
    else:
        if not all(isinstance(s, dict) for s in raw_schemes):
            raise ConfigError("schemes must be an array of tables ([[schemes]])")
        schemes = tuple(_scheme_entry(s, i) for i, s in enumerate(raw_schemes))

    problem_raw = dict(sections.get("problem", {}))
    problem = problem_raw.pop("name", "linear")
    if not isinstance(problem, str):
        raise ConfigError("problem.name must be a string")
    params = {}
    for k, v in problem_raw.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"problem.{k} must be a number")
        params[k] = float(v)
    try:
        get_problem(problem, params)
    except LookupError as exc:
        raise ConfigError(str(exc)) from None
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from None

    path = _take(sections.get("path", {}), "[path]",
                 {"fine_exponent": int, "horizon": float, "ratio": int, "path_index": int})
    conv = _take(sections.get("converge", {}), "[converge]",
                 {"fine_exponent": int, "ratios": tuple, "paths": int, "horizon": float,
                  "reference": str, "reference_scheme": str})
    stab = _take(sections.get("stability", {}), "[stability]",
                 {"dts": tuple, "horizon": float, "paths": int, "max_points": int,
                  "epsilon": float, "analytic": bool})
    amp = _take(sections.get("amplification", {}), "[amplification]", {"dts": tuple, "samples": int})
    ana = _take(sections.get("analytic", {}), "[analytic]", {"dts": tuple, "thetas": tuple})
    imp = _take(sections.get("implicit", {}), "[implicit]",
                {"tolerance": float, "max_iterations": int, "method": str})

    if "ratios" in conv:
        conv["ratios"] = _ints(conv["ratios"], "converge.ratios")
    for sec, name in ((stab, "stability"), (amp, "amplification"), (ana, "analytic")):
        if "dts" in sec:
            sec["dts"] = _floats(sec["dts"], f"{name}.dts")
            for dt in sec["dts"]:
                _positive(dt, f"{name}.dts entry")
    if "thetas" in ana:
        ana["thetas"] = _floats(ana["thetas"], "analytic.thetas")
        if any(not 0 <= t <= 1 for t in ana["thetas"]):
            raise ConfigError("analytic.thetas must lie in [0, 1]")

    cfg = RunConfig(
        command=cmd,
        problem=problem,
        problem_params=params,
        schemes=schemes,
        seed=seed,
        out=top_data.get("out", "results"),
        threads=threads,
        path=PathSection(**path),
        converge=ConvergeSection(**conv),
        stability=StabilitySection(**stab),
        amplification=AmplificationSection(**amp),
        analytic=AnalyticSection(**ana),
        implicit=ImplicitSection(**imp),
    )
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    c, s, a, p = cfg.converge, cfg.stability, cfg.amplification, cfg.path
    if c.fine_exponent < 0 or c.fine_exponent > 24:
        raise ConfigError(f"converge.fine_exponent must lie in [0, 24], got {c.fine_exponent}")
    if c.ratios is not None:
        if len(c.ratios) < 1:
            raise ConfigError("converge.ratios must not be empty")
        for r in c.ratios:
            if r < 1 or (2**c.fine_exponent) % r:
                raise ConfigError(f"converge ratio {r} does not divide 2**{c.fine_exponent}")
    if c.paths < 100:
        raise ConfigError(f"converge.paths must be >= 100, got {c.paths}")
    _positive(c.horizon, "converge.horizon")
    if c.reference is not None:
        try:
            ref = Reference(c.reference)
        except ValueError:
            raise ConfigError(f"converge.reference must be 'exact' or 'fine', got {c.reference!r}") from None
        if ref is Reference.EXACT_LINEAR and cfg.problem != "linear":
            raise ConfigError("converge.reference = 'exact' needs the linear problem")
    if c.reference_scheme is not None:
        try:
            SchemeKind(c.reference_scheme)
        except ValueError:
            raise ConfigError(f"unknown reference scheme {c.reference_scheme!r}") from None
    _positive(s.horizon, "stability.horizon")
    if s.paths < 1 or s.max_points < 8:
        raise ConfigError("stability.paths must be >= 1 and stability.max_points >= 8")
    if not s.epsilon >= 0:
        raise ConfigError("stability.epsilon must be >= 0")
    if a.samples < 100_000:
        raise ConfigError(f"amplification.samples must be >= 1e5, got {a.samples}")
    if p.fine_exponent < 0 or p.fine_exponent > 24 or p.ratio < 1 or (2**p.fine_exponent) % p.ratio:
        raise ConfigError("path.ratio must divide 2**path.fine_exponent")
    _positive(p.horizon, "path.horizon")
    if not 0 <= p.path_index < 2**64:
        raise ConfigError("path.path_index must be an unsigned 64-bit integer")
    try:
        ImplicitSolveConfig(cfg.implicit.tolerance, cfg.implicit.max_iterations, cfg.implicit.method)
    except (InvalidParameterError, ValueError) as exc:
        raise ConfigError(f"[implicit]: {exc}") from None
    if cfg.command in (Command.CONVERGE, Command.STABILITY, Command.PATH, Command.AMPLIFICATION) and not cfg.schemes:
        raise ConfigError(f"{cfg.command.value} needs at least one scheme")
    if cfg.command is Command.AMPLIFICATION and cfg.problem != "linear":
        raise ConfigError("amplification runs on the linear problem only")
    problem = cfg.build_problem()
    if any(SchemeKind(e.name).uses_split and e.split for e in cfg.schemes) and problem.split is None:
        raise ConfigError(f"problem {cfg.problem!r} has no drift split for the semi-tamed scheme")

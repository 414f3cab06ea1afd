"""Sectioned ``key = value`` run configuration.

Example::

    [grid]
    half_width = 4.0
    cells = 64

    [density]
    norms = 4

    [density.1]
    kind = gaussian
    center = 0, 0, 0
    sigma = 0.5
    weight = 4.0

    [solver]
    method = minimize

    [audits]
    list = l2_identity, tail_bound

    [output]
    directory = out

Comments start with ``#`` or ``;``.  Unknown sections or keys and duplicate
keys are errors carrying line numbers.  :func:`emit_config` writes a text
that parses back to an equal :class:`RunConfig`.
"""

from dataclasses import dataclass, field, fields, replace
import os
import re

from .density import ChargeDensity, Term, KINDS, KERNELS
from .errors import ConfigError, DomainError
from .grid import sphere_area

METHODS = ("minimize", "fixed_point", "continuation", "radial")
AUDITS = ("spacelike", "l2_identity", "energy_identity", "tail_bound", "caccioppoli", "sup_nu",
          "linearized", "decay", "holder", "stability")


def _float(s):
    try:
        return float(s)
    except ValueError:
        raise ValueError("expected a number, got %r" % s) from None


def _int(s):
    try:
        return int(s)
    except ValueError:
        raise ValueError("expected an integer, got %r" % s) from None


def _bool(s):
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected true or false, got %r" % s)


def _opt_float(s):
    return None if s.strip().lower() in ("", "none", "auto") else _float(s)


def _floats(s):
    return tuple(_float(x) for x in s.split(",") if x.strip())


def _ints(s):
    return tuple(_int(x) for x in s.split(",") if x.strip())


def _names(s):
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _str(s):
    return s.strip()


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class GridConfig:
    half_width: float = 4.0
    cells: int = 48
    dimension: int = 3


@dataclass(frozen=True)
class SolverConfig:
    method: str = "minimize"
    boundary: str = "far_field"
    margin: float = 1e-6
    max_iterations: int = 5000
    gradient_tolerance: float = None
    relative_tolerance: float = 1e-8
    memory: int = 30
    descent: str = "lbfgs"
    cg_maxiter: int = 100
    init: str = "zero"
    preconditioner: str = "scaled"
    theta: float = 0.1
    far_cap: float = 0.9
    far_radius: float = None
    fp_tolerance: float = 1e-9
    fp_max_iterations: int = 200
    linear_tolerance: float = 1e-10
    linear_preconditioner: str = "laplace"
    schedule: tuple = (0.5, 1.0)
    stage_solver: str = "fixed_point"
    radial_max: float = 10.0
    radial_points: int = 201


@dataclass(frozen=True)
class AuditConfig:
    names: tuple = ()
    tolerance: float = 0.1
    p: float = 4.0
    k: float = 2.0
    q: float = 4.0
    x0: tuple = None
    radius: float = 1.0
    cutoff_inner: float = 0.5
    cutoff_outer: float = 1.0
    decay_inner: float = None
    decay_outer: float = None
    holder_alpha: float = 0.5
    holder_samples: int = 10000
    seed: int = 0
    sup_nu_baseline: float = None
    bump_radius: float = 1.0
    decay_window: float = 0.15


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    field: bool = True
    slices: bool = True
    field_input: str = None


@dataclass(frozen=True)
class SweepConfig:
    cells: tuple = (24, 48)
    reference: str = "radial"
    r_inner: float = 0.5
    r_outer: float = 3.0


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    density: ChargeDensity = field(default_factory=ChargeDensity)
    solver: SolverConfig = field(default_factory=SolverConfig)
    audits: AuditConfig = field(default_factory=AuditConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)


_SCHEMAS = {
    "grid": (GridConfig, {"half_width": _float, "cells": _int, "dimension": _int}),
    "solver": (SolverConfig, {
        "method": _str, "boundary": _str, "margin": _float, "max_iterations": _int,
        "gradient_tolerance": _opt_float, "relative_tolerance": _float, "memory": _int,
        "descent": _str, "cg_maxiter": _int,
        "init": _str, "preconditioner": _str, "theta": _float, "far_cap": _float,
        "far_radius": _opt_float, "fp_tolerance": _float, "fp_max_iterations": _int,
        "linear_tolerance": _float, "linear_preconditioner": _str, "schedule": _floats,
        "stage_solver": _str, "radial_max": _float, "radial_points": _int}),
    "audits": (AuditConfig, {
        "list": _names, "tolerance": _float, "p": _float, "k": _float, "q": _float,
        "x0": lambda s: None if s.strip().lower() in ("", "none") else _floats(s),
        "radius": _float, "cutoff_inner": _float, "cutoff_outer": _float,
        "decay_inner": _opt_float, "decay_outer": _opt_float, "holder_alpha": _float,
        "holder_samples": _int, "seed": _int, "sup_nu_baseline": _opt_float,
        "bump_radius": _float, "decay_window": _float}),
    "output": (OutputConfig, {"directory": _str, "field": _bool, "slices": _bool,
                              "field_input": lambda s: None if s.strip().lower() in ("", "none") else s.strip()}),
    "sweep": (SweepConfig, {"cells": _ints, "reference": _str, "r_inner": _float, "r_outer": _float}),
}
_RENAME = {("audits", "list"): "names"}

_TERM_KEYS = {
    "kind": _str, "center": _floats, "sigma": _float, "weight": _float, "radius": _float,
    "value": _float, "exponent": _float, "charge": _float, "a_eff": _float, "kernel": _str,
}

_SECTION_RE = re.compile(r"^\[([A-Za-z_][A-Za-z0-9_.]*)\]$")


def _lex(text):
    """Sections as ``{name: (line, {key: (value, line)})}`` preserving order."""
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = _SECTION_RE.match(line)
        if m:
            name = m.group(1)
            if name in sections:
                raise ConfigError("duplicate section [%s] (first on line %d)" % (name, sections[name][0]),
                                  lineno)
            sections[name] = (lineno, {})
            current = name
            continue
        if line.startswith("["):
            raise ConfigError("malformed section header %r" % line, lineno)
        if "=" not in line:
            raise ConfigError("expected 'key = value', got %r" % line, lineno)
        if current is None:
            raise ConfigError("key outside of any section", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno)
        entries = sections[current][1]
        if key in entries:
            raise ConfigError("duplicate key %r in [%s] (lines %d and %d)"
                              % (key, current, entries[key][1], lineno), lineno)
        entries[key] = (value, lineno)
    return sections


def _apply_overrides(sections, overrides):
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError("override %r must look like section.key=value" % item)
        path, value = item.split("=", 1)
        if "." not in path:
            raise ConfigError("override %r must name a section and a key" % item)
        sec, key = path.strip().rsplit(".", 1)
        if sec not in sections:
            sections[sec] = (0, {})
        sections[sec][1][key.strip()] = (value.strip(), 0)


def _build_term(name, line, entries, n):
    unknown = set(entries) - set(_TERM_KEYS)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError("unknown key %r in [%s] (valid: %s)" % (key, name, ", ".join(sorted(_TERM_KEYS))),
                          entries[key][1])
    vals = {}
    for key, (raw, ln) in entries.items():
        try:
            vals[key] = _TERM_KEYS[key](raw)
        except ValueError as exc:
            raise ConfigError("[%s] %s: %s" % (name, key, exc), ln) from None
    kind = vals.pop("kind", None)
    if kind is None:
        raise ConfigError("[%s] needs a kind (one of %s)" % (name, ", ".join(KINDS)), line)
    if kind not in KINDS:
        raise ConfigError("[%s] unknown kind %r (valid: %s)" % (name, kind, ", ".join(KINDS)),
                          entries["kind"][1])
    center = vals.pop("center", (0.0,) * n)
    if kind == "mollified_point":
        vals.setdefault("kernel", "gaussian")
        if "a_eff" in vals:
            if "charge" in vals:
                raise ConfigError("[%s] give either charge or a_eff, not both" % name, entries["a_eff"][1])
            vals["charge"] = -sphere_area(n) * vals.pop("a_eff")
    allowed = {"gaussian": {"sigma", "weight"}, "ball_constant": {"radius", "value"},
               "radial_power_bump": {"radius", "exponent", "value"},
               "mollified_point": {"sigma", "charge", "kernel"}}[kind]
    extra = set(vals) - allowed
    if extra:
        key = sorted(extra)[0]
        raise ConfigError("[%s] key %r does not apply to kind %s" % (name, key, kind),
                          entries.get(key, ("", line))[1])
    try:
        return Term(kind, tuple(float(c) for c in center), vals, n)
    except DomainError as exc:
        raise ConfigError("[%s] %s" % (name, exc), line) from None


def _build_section(name, line, entries):
    cls, schema = _SCHEMAS[name]
    vals = {}
    for key, (raw, ln) in entries.items():
        if key not in schema:
            raise ConfigError("unknown key %r in [%s] (valid: %s)" % (key, name, ", ".join(sorted(schema))), ln)
        try:
            vals[_RENAME.get((name, key), key)] = schema[key](raw)
        except ValueError as exc:
            raise ConfigError("[%s] %s: %s" % (name, key, exc), ln) from None
    return cls(**vals)


def _validate(cfg, lines, base_dir):
    def err(sec, key, msg):
        raise ConfigError(msg, lines.get((sec, key)))

    gr, so, au = cfg.grid, cfg.solver, cfg.audits
    if gr.cells < 8:
        err("grid", "cells", "cells must be at least 8")
    if gr.half_width <= 0:
        err("grid", "half_width", "half_width must be positive")
    if gr.dimension < 3:
        err("grid", "dimension", "dimension must be at least 3")
    if so.method not in METHODS:
        err("solver", "method", "unknown solver %r (valid: %s)" % (so.method, ", ".join(METHODS)))
    if so.boundary not in ("far_field", "zero"):
        err("solver", "boundary", "boundary must be far_field or zero")
    if not 0 < so.margin <= 0.1:
        err("solver", "margin", "margin must lie in (0, 0.1]")
    if so.descent not in ("lbfgs", "newton"):
        err("solver", "descent", "descent must be lbfgs or newton")
    if so.init not in ("zero", "newton"):
        err("solver", "init", "init must be zero or newton")
    if so.preconditioner not in ("scaled", "laplace", "none"):
        err("solver", "preconditioner", "preconditioner must be scaled, laplace or none")
    if so.linear_preconditioner not in ("laplace", "diagonal"):
        err("solver", "linear_preconditioner", "linear_preconditioner must be laplace or diagonal")
    if so.stage_solver not in ("fixed_point", "minimize"):
        err("solver", "stage_solver", "stage_solver must be fixed_point or minimize")
    if not 0 < so.theta < 1:
        err("solver", "theta", "theta must lie in (0, 1)")
    if not 0 < so.far_cap < 1:
        err("solver", "far_cap", "far_cap must lie in (0, 1)")
    s = so.schedule
    if not s or s[-1] != 1.0 or s[0] <= 0 or any(b <= a for a, b in zip(s[:-1], s[1:])):
        err("solver", "schedule", "schedule must increase strictly from a positive value to 1")
    for a in au.names:
        if a not in AUDITS:
            err("audits", "list", "unknown audit %r (valid: %s)" % (a, ", ".join(AUDITS)))
    if au.x0 is not None and len(au.x0) != gr.dimension:
        err("audits", "x0", "x0 must have %d coordinates" % gr.dimension)
    if any(c < 8 for c in cfg.sweep.cells):
        err("sweep", "cells", "sweep cells must be at least 8")
    if cfg.sweep.reference not in ("radial", "finest"):
        err("sweep", "reference", "reference must be radial or finest")
    if cfg.output.field_input is not None:
        path = cfg.output.field_input
        if not os.path.isabs(path):
            path = os.path.join(base_dir or ".", path)
        if not os.path.isfile(path):
            err("output", "field_input", "field_input %r does not exist" % cfg.output.field_input)
        cfg = replace(cfg, output=replace(cfg.output, field_input=os.path.normpath(path)))
    out = os.path.normpath(os.path.join(base_dir or ".", cfg.output.directory))
    if not os.path.isdir(os.path.dirname(os.path.abspath(out))):
        err("output", "directory", "parent of output directory %r does not exist" % cfg.output.directory)
    return replace(cfg, output=replace(cfg.output, directory=out))


def parse_config(text, overrides=None, base_dir=None):
    """Parse and validate configuration text.

    Parameters
    ----------
    text : str
    overrides : sequence of str, optional
        ``section.key=value`` items applied on top of the text.
    base_dir : str, optional
        Directory against which relative paths are resolved.

    Raises
    ------
    ConfigError
        With the offending line number where one exists.
    """
    sections = _lex(text)
    _apply_overrides(sections, overrides)
    n = 3
    if "grid" in sections and "dimension" in sections["grid"][1]:
        raw, ln = sections["grid"][1]["dimension"]
        try:
            n = _int(raw)
        except ValueError as exc:
            raise ConfigError("[grid] dimension: %s" % exc, ln) from None
    parts = {}
    terms = []
    norms = ()
    lines = {}
    for name, (line, entries) in sections.items():
        for key, (_, ln) in entries.items():
            lines[(name, key)] = ln or None
        if name == "density":
            unknown = set(entries) - {"norms"}
            if unknown:
                key = sorted(unknown)[0]
                raise ConfigError("unknown key %r in [density] (valid: norms)" % key, entries[key][1])
            if "norms" in entries:
                raw, ln = entries["norms"]
                try:
                    norms = tuple(float("inf") if x.strip() == "inf" else _float(x)
                                  for x in raw.split(",") if x.strip())
                except ValueError as exc:
                    raise ConfigError("[density] norms: %s" % exc, ln) from None
        elif name.startswith("density."):
            idx = name.split(".", 1)[1]
            if not idx.isdigit():
                raise ConfigError("density sections are named [density.N] with integer N", line)
            terms.append((int(idx), _build_term(name, line, entries, n)))
        elif name in _SCHEMAS:
            parts[name] = _build_section(name, line, entries)
        else:
            raise ConfigError("unknown section [%s] (valid: grid, density, density.N, %s)"
                              % (name, ", ".join(k for k in _SCHEMAS if k != "grid")), line)
    terms.sort(key=lambda t: t[0])
    try:
        density = ChargeDensity(tuple(t for _, t in terms), n, norms)
    except DomainError as exc:
        raise ConfigError("density: %s" % exc, lines.get(("density", "norms"))) from None
    cfg = RunConfig(density=density, **parts)
    return _validate(cfg, lines, base_dir)


def load_config(path, overrides=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc)) from None
    return parse_config(text, overrides, os.path.dirname(os.path.abspath(path)))


def emit_config(cfg):
    """Text that ``parse_config`` maps back to ``cfg``."""
    out = []

    def section(name, obj):
        out.append("[%s]" % name)
        for f in fields(obj):
            key = "list" if (name, f.name) == ("audits", "names") else f.name
            out.append("%s = %s" % (key, _fmt(getattr(obj, f.name))))
        out.append("")

    section("grid", cfg.grid)
    out.append("[density]")
    if cfg.density.norm_exponents:
        out.append("norms = %s" % ", ".join("inf" if p == float("inf") else repr(p)
                                            for p in cfg.density.norm_exponents))
    out.append("")
    for i, t in enumerate(cfg.density.terms, 1):
        out.append("[density.%d]" % i)
        out.append("kind = %s" % t.kind)
        out.append("center = %s" % _fmt(tuple(t.center)))
        for key in sorted(t.params):
            out.append("%s = %s" % (key, _fmt(t.params[key])))
        out.append("")
    section("solver", cfg.solver)
    section("audits", cfg.audits)
    section("output", cfg.output)
    section("sweep", cfg.sweep)
    return "\n".join(out)

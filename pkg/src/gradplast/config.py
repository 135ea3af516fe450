"""Scenario configuration: sectioned ``key = value`` text (INI), UTF-8, ``#`` comments.

Every key has a documented default, so an empty file is a valid config. Unknown
sections or keys are errors, and every error names the offending line.
Quantities are nondimensional; the defaults are a smoke-test parameter set.

``emit_config`` writes the canonical form (all keys, fixed order); parsing it
back yields an identical :class:`RunConfig`.
"""
import configparser
import re
from dataclasses import dataclass

import numpy as np

from .elasticity import ElasticTensor, HardeningMap
from .flow_rules import RULES
from .grid import Grid
from .rothe import RotheConfig
from .scenario import PRESETS, Scenario


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if s.strip().lower() in ("", "auto", "none") else float(s)


def _floats(s):
    s = s.strip()
    return () if not s else tuple(float(x) for x in re.split(r"[,\s]+", s) if x)


def _ints(s):
    return tuple(int(x) for x in re.split(r"[,\s]+", s.strip()) if x)


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


# section -> key -> (parser, default, check, message)
SCHEMA = {
    "grid": {
        "nx": (int, 8, lambda v: v >= 3, "needs at least 3 nodes"),
        "ny": (int, 8, lambda v: v >= 3, "needs at least 3 nodes"),
        "nz": (int, 8, lambda v: v >= 3, "needs at least 3 nodes"),
        "lx": (float, 1.0, _pos, "must be positive"),
        "ly": (float, 1.0, _pos, "must be positive"),
        "lz": (float, 1.0, _pos, "must be positive"),
    },
    "elastic": {
        "lam": (float, 1.0, None, None),
        "mu": (float, 1.0, _pos, "mu must be positive"),
        "inclusion_radius": (float, 0.0, _nonneg, "must be >= 0"),
        "inclusion_lam": (float, 1.0, None, None),
        "inclusion_mu": (float, 1.0, _pos, "mu must be positive"),
    },
    "flow": {
        "rule": (str, "norton_hoff", lambda v: v in RULES, f"choose from {sorted(RULES)}"),
        "sigma_y": (float, 0.1, _nonneg, "must be >= 0"),
        "r": (float, 1.0, _pos, "must be > 0"),
        "eta": (float, 1.0, _pos, "must be > 0"),
        "beta": (float, 0.5, None, None),
        "hardening_coupling": (float, 0.0, _nonneg, "must be >= 0"),
    },
    "hardening": {
        "k_iso": (float, 0.1, _nonneg, "must be >= 0"),
        "matrix": (_floats, (), lambda v: len(v) in (0, 100), "needs 100 entries (10x10)"),
    },
    "model": {
        "c1": (float, 0.1, _nonneg, "C1 must be non-negative"),
    },
    "load": {
        "preset": (str, "uniaxial_ramp", lambda v: v in PRESETS, f"choose from {sorted(PRESETS)}"),
        "amplitude": (float, 1.0, None, None),
    },
    "time": {
        "t_end": (float, 1.0, _pos, "must be positive"),
        "level": (int, 6, _nonneg, "must be >= 0"),
        "eps_reg": (float, 1e-6, _nonneg, "must be >= 0"),
    },
    "solver": {
        "newton_tol": (float, 1e-12, lambda v: 0 < v < 1, "must lie in (0, 1)"),
        "newton_max": (int, 500, _pos, "must be positive"),
        "damping": (float, 1.0, lambda v: 0 < v <= 1, "must lie in (0, 1]"),
        "min_damping": (float, 1.0 / 1024, lambda v: 0 < v <= 1, "must lie in (0, 1]"),
        "anderson": (int, 5, _nonneg, "must be >= 0"),
        "tol_cg": (_opt_float, None, lambda v: v is None or 0 < v < 1, "must lie in (0, 1)"),
        "cg_max": (int, 5000, _pos, "must be positive"),
    },
    "run": {
        "seed": (int, 0, None, None),
        "strict": (_bool, False, None, None),
        "snapshot_every": (int, 0, _nonneg, "must be >= 0"),
        "allow_incompatible": (_bool, False, None, None),
        "vtk": (_bool, False, None, None),
    },
    "converge": {
        "levels": (int, 3, lambda v: v >= 2, "needs at least 2 levels"),
        "eps_sweep": (_floats, (1e-2, 1e-4, 1e-6), lambda v: all(x >= 0 for x in v),
                      "values must be >= 0"),
    },
    "korn": {
        "samples": (int, 500, _pos, "must be positive"),
        "ascent": (int, 50, _nonneg, "must be >= 0"),
        "ascent_iters": (int, 40, _pos, "must be positive"),
        "grids": (_ints, (8, 16), lambda v: len(v) > 0 and min(v) >= 3, "grid sizes >= 3"),
    },
    "validate": {
        "monotone_pairs": (int, 10000, _pos, "must be positive"),
        "growth_samples": (int, 2000, _pos, "must be positive"),
        "self_control_samples": (int, 20, _pos, "must be positive"),
    },
}


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "auto"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _line_index(text):
    """Map ``(section, key)`` and ``section`` to 1-based line numbers."""
    where, section = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"^\[([^\]]+)\]$", line)
        if m:
            section = m.group(1).strip().lower()
            where.setdefault(section, i)
            continue
        m = re.match(r"^([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            where.setdefault((section, m.group(1).strip().lower()), i)
    return where


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration: the canonical key/value table plus builders."""
    values: tuple

    def __getitem__(self, key):
        section, name = key
        return dict(dict(self.values)[section])[name]

    def section(self, name):
        return dict(dict(self.values)[name])

    def as_dict(self):
        return {s: dict(kv) for s, kv in self.values}

    # -- builders ---------------------------------------------------------

    def grid(self, n=None):
        g = self.section("grid")
        dims = (n, n, n) if n else (g["nx"], g["ny"], g["nz"])
        return Grid.box(dims, (g["lx"], g["ly"], g["lz"]))

    def tensor(self, grid):
        e = self.section("elastic")
        lam = np.full(grid.n_nodes, e["lam"])
        mu = np.full(grid.n_nodes, e["mu"])
        if e["inclusion_radius"] > 0:
            centre = np.asarray(grid.origin) + 0.5 * np.asarray(grid.lengths)
            inside = np.linalg.norm(grid.coords - centre, axis=1) <= e["inclusion_radius"]
            lam[inside], mu[inside] = e["inclusion_lam"], e["inclusion_mu"]
        return ElasticTensor(grid, lam, mu)

    def rule(self):
        f = self.section("flow")
        common = dict(sigma_y=f["sigma_y"], r=f["r"], eta=f["eta"], kappa=f["hardening_coupling"])
        if f["rule"] == "non_associative":
            return RULES["non_associative"](beta=f["beta"], **common)
        return RULES[f["rule"]](**common)

    def hardening(self):
        h = self.section("hardening")
        if h["matrix"]:
            return HardeningMap(np.asarray(h["matrix"]).reshape(10, 10))
        return HardeningMap.isotropic(h["k_iso"])

    def scenario(self, n=None):
        grid = self.grid(n)
        ld = self.section("load")
        return Scenario(grid, self.tensor(grid), self.hardening(), self.rule(),
                        self["model", "c1"], ld["preset"], ld["amplitude"],
                        self["time", "t_end"])

    def rothe(self):
        t, s = self.section("time"), self.section("solver")
        return RotheConfig(t_end=t["t_end"], level=t["level"], eps_reg=t["eps_reg"],
                           newton_tol=s["newton_tol"], newton_max=s["newton_max"],
                           damping=s["damping"], min_damping=min(s["min_damping"], s["damping"]),
                           anderson=s["anderson"], tol_cg=s["tol_cg"], cg_max=s["cg_max"])

    def replace(self, section, **kw):
        d = self.as_dict()
        d[section].update(kw)
        return RunConfig(tuple((s, tuple(d[s].items())) for s in SCHEMA))


def parse_config(text):
    """Parse and validate config text; raises :class:`ConfigError`."""
    lines = _line_index(text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                   comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f"duplicate key {e.option!r} in [{e.section}]", e.lineno) from None
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"duplicate section [{e.section}]", e.lineno) from None
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("key outside of any [section]", e.lineno) from None
    except configparser.ParsingError as e:
        ln = e.errors[0][0] if e.errors else None
        raise ConfigError("malformed line (expected 'key = value')", ln) from None

    sections = {}
    for sec in cp.sections():
        name = sec.lower()
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", lines.get(name))
        if name in sections:
            raise ConfigError(f"duplicate section [{sec}]", lines.get(name))
        for key in cp[sec]:
            if key not in SCHEMA[name]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", lines.get((name, key)))
        sections[name] = dict(cp[sec].items())

    values = []
    for sec, keys in SCHEMA.items():
        got = sections.get(sec, {})
        out = []
        for key, (parse, default, check, msg) in keys.items():
            ln = lines.get((sec, key))
            if key in got:
                try:
                    v = parse(got[key])
                except ValueError:
                    raise ConfigError(f"[{sec}] {key}: cannot read {got[key]!r}", ln) from None
            else:
                v = default
            if check is not None and not check(v):
                raise ConfigError(f"[{sec}] {key} = {_fmt(v)}: {msg}", ln)
            out.append((key, v))
        values.append((sec, tuple(out)))
    cfg = RunConfig(tuple(values))
    _cross_checks(cfg, lines)
    return cfg


def _cross_checks(cfg, lines):
    e = cfg.section("elastic")
    for lam_key, mu_key in (("lam", "mu"), ("inclusion_lam", "inclusion_mu")):
        if 3 * e[lam_key] + 2 * e[mu_key] <= 0:
            raise ConfigError(f"[elastic] {lam_key}: need 3 lam + 2 mu > 0",
                              lines.get(("elastic", lam_key)))
    h = cfg.section("hardening")
    if h["matrix"]:
        try:
            HardeningMap(np.asarray(h["matrix"]).reshape(10, 10))
        except ValueError as err:
            raise ConfigError(f"[hardening] matrix: {err}", lines.get(("hardening", "matrix")))
    s = cfg.section("solver")
    if s["min_damping"] > s["damping"]:
        raise ConfigError("[solver] min_damping exceeds damping",
                          lines.get(("solver", "min_damping")))


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def emit_config(cfg):
    """Canonical text: every section and key in schema order."""
    out = []
    for sec, kv in cfg.values:
        out.append(f"[{sec}]")
        out.extend(f"{k} = {_fmt(v)}" for k, v in kv)
        out.append("")
    return "\n".join(out)


def default_config():
    return parse_config("")

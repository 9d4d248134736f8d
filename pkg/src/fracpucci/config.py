"""Scenario configuration files.

A configuration is an INI file with sections ``domain``, ``kernel``,
``problem``, ``solver`` and ``experiment``. Values are Python literals;
``problem.a`` may also be an arithmetic expression in ``x`` and ``y``.
Example::

    [domain]
    dim = 1
    kind = interval
    extent = 1.0
    h = 0.0078125
    r_trunc = 10.0

    [kernel]
    s = 0.5
    lambda = 1.0
    big_lambda = 1.0
    c_norm = 1.0          # or fractional_laplacian / one_minus_s
    n_dirs = 16

    [problem]
    sign = minus
    q = 0.5
    a = 1.0
    exterior_shells = [(1, 2, 0.0), (2, 3, -1.0)]
    far_value = 0.0
"""
from __future__ import annotations

import ast
import configparser
import dataclasses
import math
import operator
import re

import numpy as np

from .domain import DomainGrid, ExteriorSpec, build_grid
from .operators import KernelSpec, fractional_laplacian_constant, make_kernel
from .solvers import Problem, SolverConfig


class ConfigError(ValueError):
    """Invalid configuration; carries the file, line, section and key."""

    def __init__(self, message, path=None, line=None, section=None, key=None):
        self.path, self.line, self.section, self.key = path, line, section, key
        where = []
        if path is not None:
            where.append(f"{path}:{line}" if line is not None else str(path))
        if section is not None:
            where.append(f"[{section}]" + (f" {key}" if key else ""))
        super().__init__(": ".join(where + [message]) if where else message)


_FUNCS = {
    "sin": np.sin, "cos": np.cos, "exp": np.exp, "log": np.log, "sqrt": np.sqrt,
    "abs": np.abs, "tanh": np.tanh, "minimum": np.minimum, "maximum": np.maximum,
    "where": np.where,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_CMPOPS = {ast.Lt: operator.lt, ast.LtE: operator.le, ast.Gt: operator.gt,
           ast.GtE: operator.ge}


def _eval_expr(node, env):
    if isinstance(node, ast.Expression):
        return _eval_expr(node.body, env)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return node.value
    if isinstance(node, ast.Name):
        if node.id in env:
            return env[node.id]
        if node.id in _CONSTS:
            return _CONSTS[node.id]
        raise ValueError(f"unknown name {node.id!r}")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_expr(node.left, env), _eval_expr(node.right, env))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval_expr(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if (isinstance(node, ast.Compare) and len(node.ops) == 1
            and type(node.ops[0]) in _CMPOPS):
        return _CMPOPS[type(node.ops[0])](_eval_expr(node.left, env),
                                          _eval_expr(node.comparators[0], env))
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCS and not node.keywords):
        return _FUNCS[node.func.id](*[_eval_expr(a, env) for a in node.args])
    raise ValueError(f"unsupported expression element {ast.dump(node)[:40]}")


def weight_function(expr):
    """Callable ``a(points)`` from a number or an expression in ``x``, ``y``, ``r``."""
    if isinstance(expr, (int, float)):
        value = float(expr)
        return lambda pts: np.full(len(pts), value)
    tree = ast.parse(str(expr), mode="eval")

    def a(pts):
        pts = np.asarray(pts, float)
        env = {"x": pts[:, 0], "r": np.linalg.norm(pts, axis=1)}
        env["y"] = pts[:, 1] if pts.shape[1] > 1 else np.zeros(len(pts))
        return np.broadcast_to(np.asarray(_eval_expr(tree, env), float), (len(pts),)).copy()
    a(np.zeros((1, 2)))
    return a


@dataclasses.dataclass
class Scenario:
    """Everything a configuration file specifies."""

    grid: DomainGrid
    kernel: KernelSpec
    sign: str
    q: float
    a_expr: object
    exterior: ExteriorSpec
    solver: SolverConfig
    experiment: dict
    path: str = "<config>"

    @property
    def scenario_id(self) -> str:
        return str(self.experiment.get("id", "scenario"))

    @property
    def tol_zero(self) -> float:
        return float(self.experiment.get("tol_zero", 10 * self.solver.tol_residual))

    def weight(self, points=None) -> np.ndarray:
        pts = self.grid.nodes if points is None else points
        return weight_function(self.a_expr)(pts)

    def problem(self, exterior: ExteriorSpec | None = None) -> Problem:
        return Problem(self.grid, self.kernel, self.sign, self.weight(), self.q,
                       exterior if exterior is not None else self.exterior)


_SCHEMA = {
    "domain": {"dim": True, "kind": True, "extent": True, "h": True, "r_trunc": True,
               "center": False},
    "kernel": {"s": True, "lambda": False, "big_lambda": False, "c_norm": False,
               "n_dirs": False, "gauss_order": False, "panel_ratio": False},
    "problem": {"sign": False, "q": False, "a": False, "exterior_shells": False,
                "far_value": False, "tail_growth": False},
    "solver": {"tau_factor": False, "tol_residual": False, "max_iter": False,
               "policy_max_outer": False, "growth_window": False},
}


def _line_index(text):
    where = {}
    section = None
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            where[(section, None)] = i
            continue
        m = re.match(r"\s*([A-Za-z_][\w]*)\s*[=:]", line)
        if m and section is not None:
            where[(section, m.group(1).lower())] = i
    return where


def _literal(raw):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw.strip()


def parse_config(text: str, path: str = "<config>") -> Scenario:
    """Parse and validate configuration text."""
    lines = _line_index(text)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], path, getattr(exc, "lineno", None)) from exc

    def err(msg, section, key=None):
        return ConfigError(msg, path, lines.get((section, key), lines.get((section, None))),
                           section, key)

    for section, keys in _SCHEMA.items():
        if section not in cp and any(keys.values()):
            raise ConfigError(f"missing section [{section}]", path)
        if section in cp:
            for key in cp[section]:
                if key not in keys:
                    raise err("unknown key", section, key)
            for key, required in keys.items():
                if required and key not in cp[section]:
                    raise err("missing required key", section, key)

    def get(section, key, default=None, kind=None):
        if section not in cp or key not in cp[section]:
            return default
        value = _literal(cp[section][key])
        if kind is not None:
            try:
                if kind is int and not float(value).is_integer():
                    raise ValueError
                value = kind(value)
            except (TypeError, ValueError):
                raise err(f"expected {kind.__name__}, got {cp[section][key]!r}", section, key)
        return value

    dim = get("domain", "dim", kind=int)
    kind = get("domain", "kind", kind=str)
    geometry = (get("domain", "extent", kind=float), get("domain", "h", kind=float),
                get("domain", "r_trunc", kind=float), get("domain", "center"))
    try:
        grid = build_grid(dim, kind, *geometry)
    except ValueError as exc:
        raise err(str(exc), "domain") from exc

    s = get("kernel", "s", kind=float)
    c_norm = get("kernel", "c_norm", 1.0)
    if c_norm == "fractional_laplacian":
        c_norm = fractional_laplacian_constant(dim, s) if 0 < s < 1 else 1.0
    elif c_norm == "one_minus_s":
        c_norm = 1.0 - s
    elif not isinstance(c_norm, (int, float)):
        raise err(f"c_norm must be a number, 'fractional_laplacian' or 'one_minus_s'",
                  "kernel", "c_norm")
    quad = {k: get("kernel", k) for k in ("gauss_order", "panel_ratio")
            if get("kernel", k) is not None}
    ellipticity = (get("kernel", "lambda", 1.0, float), get("kernel", "big_lambda", 1.0, float))
    n_dirs = get("kernel", "n_dirs", 16, int)
    try:
        kernel = make_kernel(dim, s, *ellipticity, float(c_norm), n_dirs, **quad)
    except ValueError as exc:
        raise err(str(exc), "kernel") from exc

    sign = get("problem", "sign", "minus", str)
    if sign not in ("plus", "minus"):
        raise err("sign must be 'plus' or 'minus'", "problem", "sign")
    q = get("problem", "q", 0.5, float)
    if not 0 < q < 1:
        raise err(f"q = {q} outside (0, 1); only the sublinear regime is supported",
                  "problem", "q")
    a_expr = get("problem", "a", 1.0)
    try:
        weight_function(a_expr)
    except (ValueError, SyntaxError, TypeError) as exc:
        raise err(f"invalid weight expression: {exc}", "problem", "a") from exc
    shells = get("problem", "exterior_shells", ())
    far = get("problem", "far_value", 0.0, float)
    try:
        exterior = ExteriorSpec(tuple(tuple(sh) for sh in shells), far,
                                get("problem", "tail_growth"))
        grid.check_exterior(exterior)
    except (ValueError, TypeError) as exc:
        raise err(str(exc), "problem", "exterior_shells") from exc

    solver_keys = {k: get("solver", k) for k in _SCHEMA["solver"] if get("solver", k) is not None}
    try:
        solver = SolverConfig(**solver_keys)
    except (ValueError, TypeError) as exc:
        raise err(str(exc), "solver") from exc

    experiment = {k: _literal(v) for k, v in cp["experiment"].items()} \
        if "experiment" in cp else {}
    return Scenario(grid, kernel, sign, q, a_expr, exterior, solver, experiment, path)


def load_config(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, str(path))

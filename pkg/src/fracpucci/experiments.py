"""Scenario-level checks: positivity and dead cores, boundary growth, maximum
localisation, exterior-tail sign, the counterexample threshold search and
negative-exterior sweeps."""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from .barriers import l1s_norm
from .domain import DomainGrid, ExteriorSpec, Field, Shell, iter_boundary_segments
from .operators import KernelSpec, _tail_integral
from .solvers import (Problem, SolverConfig, policy_iteration_solve, pseudo_time_solve,
                      residual)

STRICTLY_POSITIVE, DEAD_CORE, TRIVIAL = "strictly_positive", "dead_core", "trivial"


class BracketFailure(ValueError):
    pass


class MonotonicityViolation(RuntimeError):
    pass


class InsufficientSamples(ValueError):
    pass


@dataclasses.dataclass
class SMPResult:
    dead_core: np.ndarray
    hopf: dict
    verdict: str

    @property
    def hopf_min(self) -> float:
        vals = [v for v in self.hopf.values() if math.isfinite(v)]
        return min(vals) if vals else math.nan


def hopf_profile(u: Field, s: float, probe_depth: float | None = None) -> dict:
    """Minimum of ``u / d^s`` over nodes with ``d <= probe_depth`` for each
    boundary piece (default depth ``8 h``)."""
    g = u.grid
    depth = 8 * g.h if probe_depth is None else probe_depth
    near = g.distance <= depth + 1e-12 * g.h
    quotient = u.values / g.distance ** s
    out = {}
    for name, mask in iter_boundary_segments(g):
        sel = mask & near
        out[name] = float(np.min(quotient[sel])) if sel.any() else math.nan
    return out


def smp_check(u: Field, tol_zero: float, s: float, probe_depth: float | None = None) -> SMPResult:
    """Classify a solution as trivial, strictly positive or having a dead core.

    The dead core is the set of nodes with ``u <= tol_zero``.
    """
    vals = u.values
    dead = np.flatnonzero(vals <= tol_zero)
    if np.max(np.abs(vals)) <= tol_zero:
        verdict = TRIVIAL
    elif dead.size == 0:
        verdict = STRICTLY_POSITIVE
    else:
        verdict = DEAD_CORE
    return SMPResult(dead, hopf_profile(u, s, probe_depth), verdict)


def max_localization_check(u: Field, a, rtol: float = 1e-12):
    """Whether every maximiser of ``u`` lies where ``a > 0``.

    Meaningful for solutions with small residual and nonpositive exterior
    data; for other inputs it only reports the maximisers.
    Returns ``(passed, argmax_indices)``.
    """
    a = np.broadcast_to(np.asarray(a, float), u.values.shape)
    top = np.max(u.values)
    arg = np.flatnonzero(u.values >= top - rtol * max(abs(top), 1.0))
    return bool(np.all(a[arg] > 0)), arg


def _far_radius(grid: DomainGrid, x0) -> float:
    off = np.linalg.norm(np.atleast_1d(x0) - grid.center)
    if grid.kind == "box":
        corners = grid.center + grid.extent * np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]])
        return float(np.max(np.linalg.norm(corners - x0, axis=1)))
    return float(grid.extent + off)


def tail_constant(dim: int, s: float, R: float) -> float:
    """``int_{|y| > R} |y|^(-n-2s) dy``."""
    surface = 2.0 if dim == 1 else 2 * math.pi
    return surface * R ** (-2 * s) / (2 * s)


def weight_bound_check(u: Field, a, q: float, kernel: KernelSpec, R: float | None = None,
                       ellipticity_factor: float | None = None, x0: int | None = None) -> float:
    """Margin ``a(x0) - c_norm * e * C_n * u(x0)^(1-q)`` at the maximiser ``x0``.

    ``C_n`` is the tail constant of the ball ``B_R(x0)`` containing the
    domain (smallest such ball by default) and ``e`` the ellipticity factor
    (``lam`` by default).
    """
    g = u.grid
    a = np.broadcast_to(np.asarray(a, float), u.values.shape)
    i = int(np.argmax(u.values)) if x0 is None else int(x0)
    R = _far_radius(g, g.nodes[i]) if R is None else R
    e = kernel.lam if ellipticity_factor is None else ellipticity_factor
    umax = max(float(u.values[i]), 0.0)
    return float(a[i] - kernel.c_norm * e * tail_constant(g.dim, kernel.s, R) * umax ** (1 - q))


def exterior_tail_check(u: Field, x0, s: float, n_angles: int = 2048) -> float:
    """``int over the complement of g(y) / |y - x0|^(n+2s) dy`` for the exterior
    data of ``u``; exact along rays, trapezoidal over angles in 2D."""
    g = u.grid
    x0 = np.atleast_1d(np.asarray(x0, float))
    if g.dim == 1:
        dirs = np.array([[1.0], [-1.0]])
        weights = np.ones(2)
    else:
        ang = 2 * np.pi * np.arange(n_angles) / n_angles
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        weights = np.full(n_angles, 2 * np.pi / n_angles)
    total = 0.0
    p = (x0 - g.center)[None, :]
    ext = u.exterior
    for v, w in zip(dirs, weights):
        start = g.exit_distance(x0[None, :], v)
        total += w * float(_tail_integral(p, v, start, ext.edges, ext.levels, s)[0])
    return total


def example_exterior(M: float, scale: float = 1.0) -> ExteriorSpec:
    """Counterexample data: 0 on ``B2\\B1``, ``1 - M`` on ``B3\\B2``, 1 beyond."""
    return ExteriorSpec((Shell(1 * scale, 2 * scale, 0.0), Shell(2 * scale, 3 * scale, 1.0 - M)),
                        1.0)


def negative_shell_exterior(amplitude: float, scale: float = 1.0) -> ExteriorSpec:
    """0 on ``B2\\B1``, ``-amplitude`` on ``B3\\B2``, 0 beyond."""
    return ExteriorSpec((Shell(1 * scale, 2 * scale, 0.0),
                         Shell(2 * scale, 3 * scale, -float(amplitude))), 0.0)


def supersolution(p: Problem, cfg: SolverConfig | None = None) -> Field:
    """``k Psi`` with ``M^sign[Psi] = -max|a|`` for exterior data ``g^+`` and
    ``k = max(1, (max Psi)^(q/(1-q)))``; carries the problem's exterior."""
    cfg = cfg or SolverConfig()
    a_sup = float(np.max(np.abs(p.weight_a)))
    g_plus = p.exterior.map_values(lambda v: max(v, 0.0))
    psi = policy_iteration_solve(p.grid, p.kernel, p.sign, -a_sup, g_plus, cfg)
    top = float(np.max(psi.values))
    k = max(1.0, top ** (p.q / (1 - p.q))) if top > 0 else 1.0
    return Field(p.grid, k * psi.values, p.exterior)


def solve_descending(p: Problem, cfg: SolverConfig | None = None):
    """Pseudo-time solve started from :func:`supersolution`."""
    cfg = cfg or SolverConfig()
    return pseudo_time_solve(p, cfg, init=supersolution(p, cfg))


@dataclasses.dataclass
class ScenarioResult:
    """Solution summary and the outcome of every check run on it."""

    scenario_id: str
    u: Field | None
    s: float
    tol_zero: float
    residual: np.ndarray | None = None
    checks: list = dataclasses.field(default_factory=list)
    lambda1: float | None = None
    m_star: float | None = None
    extra: dict = dataclasses.field(default_factory=dict)

    def add_check(self, name: str, passed: bool, margin: float) -> None:
        self.checks.append((name, bool(passed), float(margin)))

    @property
    def passed(self) -> bool:
        return all(c[1] for c in self.checks)

    def summary(self) -> dict:
        out = {"scenario": self.scenario_id,
               "checks": [{"name": n, "passed": p, "margin": m} for n, p, m in self.checks]}
        if self.u is not None:
            smp = smp_check(self.u, self.tol_zero, self.s)
            out.update({
                "min_u": float(np.min(self.u.values)),
                "max_u": float(np.max(self.u.values)),
                "l1s_neg": l1s_norm(self.u.negative_part(), self.s),
                "dead_core_count": int(smp.dead_core.size),
                "hopf_min_quotient": smp.hopf_min,
                "verdict": smp.verdict,
            })
            if self.residual is not None:
                out["residual"] = float(np.max(np.abs(self.residual)))
        if self.lambda1 is not None:
            out["lambda1"] = self.lambda1
        if self.m_star is not None:
            out["m_star"] = self.m_star
        out.update(self.extra)
        return _jsonable(out)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclasses.dataclass
class ThresholdResult:
    m_star: float
    ladder: list
    u_star: Field
    min_u_star: float


def threshold_search(grid: DomainGrid, kernel: KernelSpec, a, q: float, M_lo: float,
                     M_hi: float, tol_M: float = 1e-6, tol_zero: float = 1e-3,
                     sign: str = "minus", cfg: SolverConfig | None = None,
                     max_steps: int = 60) -> ThresholdResult:
    """Bisection in ``M`` for the first counterexample solution touching zero.

    Solves with :func:`example_exterior` data (radii in units of the domain
    extent) and tracks ``min u_M``. Stops once ``|min u_M| <= tol_zero`` or
    the bracket is narrower than ``tol_M``.

    Raises
    ------
    BracketFailure
        ``min u`` does not change sign over ``[M_lo, M_hi]``.
    MonotonicityViolation
        ``min u_M`` is not strictly decreasing along the evaluated ladder.
    """
    cfg = cfg or SolverConfig()
    scale = grid.extent
    cache = {}

    def run(M):
        p = Problem(grid, kernel, sign, a, q, example_exterior(M, scale))
        u, _ = solve_descending(p, cfg)
        cache[M] = u
        return float(np.min(u.values))

    def check(ladder):
        ladder.sort()
        mins = [m for _, m in ladder]
        if any(b >= a_ for a_, b in zip(mins, mins[1:])):
            raise MonotonicityViolation(f"min u is not decreasing in M: {ladder}")

    lo, hi = float(M_lo), float(M_hi)
    f_lo, f_hi = run(lo), run(hi)
    ladder = [(lo, f_lo), (hi, f_hi)]
    check(ladder)
    if not (f_lo > 0 > f_hi):
        raise BracketFailure(f"min u = {f_lo:.4g} at M={lo}, {f_hi:.4g} at M={hi}")
    best = min(ladder, key=lambda t: abs(t[1]))
    for _ in range(max_steps):
        if abs(best[1]) <= tol_zero or hi - lo <= tol_M:
            break
        mid = 0.5 * (lo + hi)
        f_mid = run(mid)
        ladder.append((mid, f_mid))
        check(ladder)
        if f_mid > 0:
            lo = mid
        else:
            hi = mid
        if abs(f_mid) < abs(best[1]):
            best = (mid, f_mid)
    return ThresholdResult(best[0], sorted(ladder), cache[best[0]], best[1])


@dataclasses.dataclass
class SweepRow:
    amplitude: float
    l1s_neg: float
    verdict: str
    hopf_min: float
    min_u: float
    residual: float


@dataclasses.dataclass
class SweepResult:
    rows: list
    onset: float | None
    transitions: int

    @property
    def single_onset(self) -> bool:
        return self.transitions <= 1

    @property
    def onset_norm(self) -> float | None:
        """``||u^-||`` of the last strictly positive row before the onset."""
        if self.onset is None:
            return None
        prev = [r for r in self.rows if r.amplitude < self.onset]
        return prev[-1].l1s_neg if prev else 0.0


def norm_sweep(grid: DomainGrid, kernel: KernelSpec, a, q: float, amplitudes,
               tol_zero: float | None = None, sign: str = "minus",
               cfg: SolverConfig | None = None,
               exterior_family=negative_shell_exterior) -> SweepResult:
    """Solve for each negative exterior amplitude and classify the result.

    ``onset`` is the first amplitude whose verdict is not strictly positive.
    """
    cfg = cfg or SolverConfig()
    tol_zero = 10 * cfg.tol_residual if tol_zero is None else tol_zero
    rows = []
    for A in sorted(float(x) for x in amplitudes):
        p = Problem(grid, kernel, sign, a, q, exterior_family(A, grid.extent))
        u, hist = solve_descending(p, cfg)
        smp = smp_check(u, tol_zero, kernel.s)
        rows.append(SweepRow(A, l1s_norm(u.negative_part(), kernel.s), smp.verdict,
                             smp.hopf_min, float(np.min(u.values)), float(hist[-1])))
    positive = [r.verdict == STRICTLY_POSITIVE for r in rows]
    transitions = sum(x != y for x, y in zip(positive, positive[1:]))
    onset = next((r.amplitude for r in rows if r.verdict != STRICTLY_POSITIVE), None)
    return SweepResult(rows, onset, transitions)


def growth_exponent_fit(u: Field, dead_core=None, depth_nodes: int = 8,
                        min_samples: int = 4) -> list:
    """Growth exponent of ``u`` away from each free-boundary point.

    Free-boundary points are where ``u`` changes from nonpositive to positive
    between neighbouring nodes along a lattice line, located by linear
    interpolation. The exponent is the least-squares slope of ``log u``
    against ``log`` distance over positive nodes within ``depth_nodes``
    lattice steps on the positive side.

    Returns a list of ``(point, exponent, n_samples)``.

    Raises
    ------
    InsufficientSamples
        No free-boundary point has ``min_samples`` usable samples.
    """
    g = u.grid
    lat = np.full(g.lattice_shape, np.nan).ravel()
    lat[g.lattice_of_node] = u.values
    lat = lat.reshape(g.lattice_shape)
    if dead_core is not None:
        core = np.zeros(g.n_nodes, bool)
        core[np.asarray(dead_core, int)] = True
        lat_core = np.zeros(g.lattice_shape, bool).ravel()
        lat_core[g.lattice_of_node] = core
        lat_core = lat_core.reshape(g.lattice_shape)
    else:
        lat_core = lat <= 0
    fits = []
    m = g.half_width
    for axis in range(g.dim):
        lines = np.moveaxis(lat, axis, -1).reshape(-1, lat.shape[axis])
        cores = np.moveaxis(lat_core, axis, -1).reshape(-1, lat.shape[axis])
        for li, (line, cline) in enumerate(zip(lines, cores)):
            for i in range(len(line) - 1):
                for step in (1, -1):
                    j, k = (i, i + 1) if step == 1 else (i + 1, i)
                    if not (np.isfinite(line[j]) and np.isfinite(line[k])):
                        continue
                    if not (cline[j] and line[k] > 0 and not cline[k]):
                        continue
                    # zero crossing between j and k (index coordinates)
                    uj = min(line[j], 0.0)
                    t0 = j + step * (-uj / (line[k] - uj)) if line[k] != uj else j
                    idx = k + step * np.arange(depth_nodes)
                    idx = idx[(idx >= 0) & (idx < len(line))]
                    vals = line[idx]
                    ok = np.isfinite(vals) & (vals > 0)
                    idx, vals = idx[ok], vals[ok]
                    dist = np.abs(idx - t0) * g.h
                    if len(vals) < min_samples or np.any(dist <= 0):
                        continue
                    slope = np.polyfit(np.log(dist), np.log(vals), 1)[0]
                    pos = _line_point(g, axis, li, t0)
                    fits.append((pos, float(slope), int(len(vals))))
    if not fits:
        raise InsufficientSamples("no free-boundary point with enough positive samples")
    return fits


def _line_point(g, axis, line_index, t):
    shape = list(g.lattice_shape)
    n = shape.pop(axis)
    other = np.unravel_index(line_index, shape) if shape else ()
    coords = list(other)
    coords.insert(axis, t)
    return g.center + g.h * (np.asarray(coords, float) - g.half_width)


def solve_summary(p: Problem, u: Field, tol_zero: float, scenario_id: str = "solve") -> ScenarioResult:
    """Standard checks on a solution of ``p``."""
    r = residual(p, u)
    res = ScenarioResult(scenario_id, u, p.kernel.s, tol_zero, r)
    smp = smp_check(u, tol_zero, p.kernel.s)
    res.add_check("residual", np.max(np.abs(r)) <= tol_zero / 10 * (1 + 1e-9),
                  tol_zero / 10 - float(np.max(np.abs(r))))
    # both maximum lemmas concern a positive maximum with nonpositive data outside
    if p.exterior.is_nonpositive() and np.max(u.values) > tol_zero:
        ok, arg = max_localization_check(u, p.weight_a)
        res.add_check("max_localization", ok, float(np.min(p.weight_a[arg])))
        for label, e in (("lam", p.kernel.lam), ("big_lam", p.kernel.big_lam)):
            m = weight_bound_check(u, p.weight_a, p.q, p.kernel, ellipticity_factor=e)
            res.extra[f"weight_bound_margin_{label}"] = m
        m = weight_bound_check(u, p.weight_a, p.q, p.kernel)
        res.add_check("weight_bound", m >= 0, m)
    return res

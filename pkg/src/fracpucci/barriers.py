"""Weighted L1 norm, radial boundary barriers and the Hopf-lemma constants."""
from __future__ import annotations

import dataclasses
import functools
import json
import math

import numpy as np
from scipy import integrate, optimize
from scipy.spatial import cKDTree

from .domain import DomainGrid, ExteriorSpec, Field, build_grid
from .operators import KernelSpec, MINUS, operator_apply


# weighted norm -----------------------------------------------------------

@functools.lru_cache(maxsize=256)
def _exterior_masses(dim, kind, extent, center, edges, s):
    """Weighted measure of each exterior piece (one per exterior level)."""
    c = np.asarray(center)
    bounds = [0.0, *edges, math.inf]
    out = []
    if dim == 1:
        def w(x):
            return 1.0 / (1.0 + abs(x) ** (1 + 2 * s))
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            lo, hi = max(lo, extent), max(hi, extent)
            if hi <= lo:
                out.append(0.0)
                continue
            m = integrate.quad(w, c[0] + lo, c[0] + hi, limit=200)[0]
            m += integrate.quad(w, c[0] - hi, c[0] - lo, limit=200)[0]
            out.append(m)
        return tuple(out)

    def inner_radius(phi):
        if kind == "disk":
            return extent
        return extent / max(abs(math.cos(phi)), abs(math.sin(phi)))

    def radial(rho, phi):
        x = c[0] + rho * math.cos(phi)
        y = c[1] + rho * math.sin(phi)
        return rho / (1.0 + math.hypot(x, y) ** (2 + 2 * s))

    corners = [k * math.pi / 4 for k in range(9)]
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        def slice_mass(phi, lo=lo, hi=hi):
            a = max(lo, inner_radius(phi))
            b = max(hi, inner_radius(phi))
            if b <= a:
                return 0.0
            return integrate.quad(radial, a, b, args=(phi,), limit=200)[0]
        m = sum(integrate.quad(slice_mass, p0, p1, limit=100)[0]
                for p0, p1 in zip(corners[:-1], corners[1:]))
        out.append(m)
    return tuple(out)


def _interior_samples(grid: DomainGrid, subdivisions: int):
    """Quadrature points, weights and owning node for the domain part.

    Each sample takes the value of its nearest interior node, so the nodes
    carry their dual cells clipped to the domain. In 1D the cells are
    integrated by Gauss-Legendre, in 2D by sub-cell midpoints.
    """
    key = ("l1s_samples", subdivisions)
    if key in grid._operators:
        return grid._operators[key]
    c, e, h, m = grid.center, grid.extent, grid.h, grid.half_width
    if grid.dim == 1:
        x = np.sort(grid.nodes[:, 0])
        cuts = np.concatenate([[c[0] - e], 0.5 * (x[1:] + x[:-1]), [c[0] + e]])
        t, wq = np.polynomial.legendre.leggauss(4)
        a, b = cuts[:-1, None], cuts[1:, None]
        pts = (0.5 * (a + b) + 0.5 * (b - a) * t).ravel()[:, None]
        w = (0.5 * (b - a) * wq).ravel()
    else:
        t = (np.arange(2 * m * subdivisions) + 0.5) / subdivisions - m
        X, Y = np.meshgrid(t, t, indexing="ij")
        pts = c + h * np.stack([X.ravel(), Y.ravel()], axis=1)
        pts = pts[grid.signed_distance(pts) > 0]
        w = np.full(len(pts), (h / subdivisions) ** 2)
    owner = cKDTree(grid.nodes).query(pts)[1]
    grid._operators[key] = (pts, w, owner)
    return pts, w, owner


def l1s_norm(f: Field, s: float, dim: int | None = None, subdivisions: int = 4) -> float:
    """Weighted norm ``int |f(x)| / (1 + |x|^(n + 2s)) dx`` over the whole space.

    In the domain each nodal value stands for its dual cell; each exterior
    shell contributes
    ``|value|`` times its weighted measure, computed by adaptive quadrature
    and cached.
    """
    g = f.grid
    if dim is not None and dim != g.dim:
        raise ValueError("dim does not match the field's grid")
    pts, w, owner = _interior_samples(g, subdivisions)
    vals = f.values[owner]
    r = np.linalg.norm(pts, axis=1)
    inner = float(np.sum(w * np.abs(vals) / (1.0 + r ** (g.dim + 2 * s))))
    masses = _exterior_masses(g.dim, g.kind, float(g.extent), tuple(map(float, g.center)),
                              tuple(map(float, f.exterior.edges)), float(s))
    outer = float(np.dot(np.abs(f.exterior.levels), masses))
    return inner + outer


# barrier profiles ----------------------------------------------------------

def _unit_ball_gap(x):
    # a scalar is a 1D point, otherwise the last axis holds coordinates
    x = np.asarray(x, float)
    r = np.abs(x) if x.ndim == 0 else np.linalg.norm(x, axis=-1)
    return np.maximum(1.0 - r, 0.0)


def rho1(x, s: float):
    """``dist(x, complement of B_1)^s``.

    ``x`` is a scalar (a 1D point) or an array whose last axis holds
    coordinates.
    """
    out = _unit_ball_gap(x) ** s
    return float(out) if np.ndim(out) == 0 else out


def rho2(x, s: float):
    """``dist(x, complement of B_1)^(3s/2)``."""
    out = _unit_ball_gap(x) ** (1.5 * s)
    return float(out) if np.ndim(out) == 0 else out


def _radius(points):
    p = np.asarray(points, float)
    return np.linalg.norm(p, axis=-1)


def barrier_profile(points, s: float, n_levels: int = 8, growth: float = 2.0,
                    scale: float | None = None) -> np.ndarray:
    """``scale * max_k growth^k rho(2^(k/n_levels) x)`` with ``rho = rho1 + rho2``.

    ``points`` has shape ``(..., dim)``. The default scale makes the profile
    at most 1 everywhere (its maximum ``2 growth^n_levels`` is at the origin).
    """
    if scale is None:
        scale = 1.0 / (2.0 * growth ** n_levels)
    r = _radius(points)
    best = np.zeros_like(r)
    for k in range(n_levels + 1):
        gap = np.maximum(1.0 - 2.0 ** (k / n_levels) * r, 0.0)
        best = np.maximum(best, growth ** k * (gap ** s + gap ** (1.5 * s)))
    return scale * best


class BarrierField(Field):
    """Field whose extension is a known closed-form profile."""

    def __init__(self, grid, values, exterior, profile, s):
        super().__init__(grid, values, exterior)
        self.profile = profile
        self.s = s


@dataclasses.dataclass
class BarrierLine:
    """Sampled inequality ``lhs >= rhs`` (or ``<=`` when ``upper``)."""

    name: str
    points: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    upper: bool = False
    asserted: bool = True

    @property
    def slack(self) -> np.ndarray:
        d = self.lhs - self.rhs
        return -d if self.upper else d

    @property
    def failures(self) -> np.ndarray:
        return np.flatnonzero(self.slack < 0)

    @property
    def min_slack(self) -> float:
        return float(self.slack.min()) if len(self.slack) else math.inf

    def to_dict(self):
        return {
            "name": self.name,
            "relation": "<=" if self.upper else ">=",
            "asserted": self.asserted,
            "min_slack": self.min_slack,
            "failures": int(len(self.failures)),
            "margins": [
                {"point": np.atleast_1d(p).tolist(), "lhs": float(a), "rhs": float(b),
                 "slack": float(sl)}
                for p, a, b, sl in zip(self.points, self.lhs, self.rhs, self.slack)
            ],
        }


@dataclasses.dataclass
class BarrierReport:
    """Parameters of a barrier and the sampled margins of its inequalities.

    Lines are only ever appended.
    """

    name: str
    parameters: dict
    lines: list = dataclasses.field(default_factory=list)

    def add(self, name, points, lhs, rhs, upper=False, asserted=True) -> BarrierLine:
        line = BarrierLine(name, np.asarray(points), np.asarray(lhs, float),
                           np.broadcast_to(np.asarray(rhs, float), np.shape(lhs)).copy(),
                           upper, asserted)
        self.lines.append(line)
        return line

    def line(self, name) -> BarrierLine:
        for ln in self.lines:
            if ln.name == name:
                return ln
        raise KeyError(name)

    @property
    def flagged(self) -> dict:
        """Failing sample indices per line."""
        return {ln.name: ln.failures for ln in self.lines if len(ln.failures)}

    def to_dict(self):
        return {"name": self.name, "parameters": self.parameters,
                "lines": [ln.to_dict() for ln in self.lines]}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


def _default_ball_grid(dim):
    if dim == 1:
        return build_grid(1, "interval", 1.0, 1.0 / 256, 4.0)
    return build_grid(2, "disk", 1.0, 1.0 / 24, 4.0)


def _measure_rho_constants(grid, kernel, annulus):
    """Constants of the two one-sided bounds for ``rho1`` and ``rho2``."""
    s = kernel.s
    zero = ExteriorSpec()
    d = 1.0 - _radius(grid.nodes)
    m1 = operator_apply(Field(grid, rho1(grid.nodes, s), zero), MINUS, kernel)[annulus]
    m2 = operator_apply(Field(grid, rho2(grid.nodes, s), zero), MINUS, kernel)[annulus]
    da = d[annulus]
    log_term = 1.0 + (1.0 - s) * np.abs(np.log(da))
    c_rho1 = float(max(np.max(-m1 / log_term), 0.0))
    t = da ** (-s / 2)
    slope = np.polyfit(t, m2, 1)[0]
    c_low = 0.5 * slope if slope > 0 else 0.5 * float(np.max(m2 / t))
    c_low = max(c_low, np.finfo(float).tiny)
    c_up = float(max(np.max(c_low * t - m2), 0.0))
    return c_rho1, c_low, c_up, float(np.max(m1))


def _subsolution_width(C1, C2, s):
    """Largest ``e`` in (0, 1) with ``e^(-s/2) >= C1 + C2 |log e|``."""
    def gap(e):
        return e ** (-s / 2) - (C1 + C2 * abs(math.log(e)))
    hi = 1.0 - 1e-12
    if gap(hi) >= 0:
        return hi
    lo = hi
    while gap(lo) < 0:
        lo *= 0.5
        if lo < 1e-300:
            return 0.0
    return optimize.brentq(gap, lo, min(2 * lo, hi), xtol=1e-15)


def build_phi(kernel: KernelSpec, Vminus_sup: float = 0.0, N: int = 8, C_growth: float = 2.0,
              grid: DomainGrid | None = None):
    """Radial subsolution barrier on the unit ball and its sampled report.

    Parameters
    ----------
    kernel : KernelSpec
        Operator class; its dimension selects interval or disk.
    Vminus_sup : float
        Bound on the negative part of the potential.
    N, C_growth : int, float
        Number of dilation levels and the per-level growth factor.
    grid : DomainGrid, optional
        Grid on the unit ball centred at the origin (a default is built).

    Returns
    -------
    phi : BarrierField
        Nodal values of the barrier (zero exterior data).
    report : BarrierReport
        Four sampled lines: the operator inequality on the outer annulus
        (reported, not asserted), vanishing outside the ball, the ``d^s``
        lower bound and the bound by 1 on the half ball.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if C_growth <= 1:
        raise ValueError("C_growth must exceed 1")
    if Vminus_sup < 0:
        raise ValueError("Vminus_sup must be nonnegative")
    grid = grid if grid is not None else _default_ball_grid(kernel.dim)
    if (grid.kind not in ("interval", "disk") or abs(grid.extent - 1.0) > 1e-12
            or np.any(grid.center != 0)):
        raise ValueError("build_phi needs a grid on the unit ball centred at the origin")
    s = kernel.s
    r = _radius(grid.nodes)
    annulus = r > 0.5

    c_rho1, c_low, c_up, rho1_max = _measure_rho_constants(grid, kernel, annulus)
    C = max(c_rho1, c_up)
    C1 = (1.0 + 2 * C + 2 * Vminus_sup) / c_low
    C2 = (1.0 - s) * C / c_low
    eps = 0.5 * _subsolution_width(C1, C2, s)

    scale = 1.0 / (2.0 * C_growth ** N)

    def profile(points):
        return barrier_profile(points, s, N, C_growth, scale)

    phi = BarrierField(grid, profile(grid.nodes), ExteriorSpec(), profile, s)
    # the innermost level is active where the undilated term wins
    first = 2.0 * (np.maximum(1 - r, 0) ** s + np.maximum(1 - r, 0) ** (1.5 * s))
    a0 = np.isclose(profile(grid.nodes), scale * first / 2, rtol=1e-14, atol=0)
    params = {
        "s": s, "N": N, "C_growth": C_growth, "Vminus_sup": Vminus_sup, "c": scale,
        "rho1_C": c_rho1, "rho2_c": c_low, "rho2_C": c_up, "rho1_max_operator": rho1_max,
        "C1": C1, "C2": C2, "epsilon": eps,
        "first_level_outer_fraction": float(np.mean(1 - r[a0] < eps)) if a0.any() else 1.0,
        "h": grid.h,
    }
    report = BarrierReport("phi", params)
    Mphi = operator_apply(phi, MINUS, kernel)
    report.add("subsolution", grid.nodes[annulus], Mphi[annulus] - Vminus_sup * phi.values[annulus],
               scale, asserted=False)
    outside = np.linspace(1.0, 3.0, 9)
    out_pts = outside[:, None] * np.eye(grid.dim)[0]
    report.add("vanishes_outside", out_pts, profile(out_pts), 0.0, upper=True)
    d = np.maximum(1 - r, 0)
    report.add("boundary_growth", grid.nodes, phi.values, scale * d ** s)
    half = r <= 0.5
    report.add("bounded_on_half_ball", grid.nodes[half], phi.values[half], 1.0, upper=True)
    return phi, report


def psi_r(phi: Field, x_r, r: float, alpha_r: float, grid: DomainGrid,
          c_barrier: float | None = None):
    """Barrier ``alpha_r * phi((x - x_r) / r)`` on ``grid``.

    Returns the field and, when ``c_barrier`` is given, a report with the
    lower-bound line ``psi >= c alpha_r r^-s (r - |x - x_r|)^s`` on the nodes
    of ``B_r(x_r)``.
    """
    x_r = np.atleast_1d(np.asarray(x_r, float))
    if r <= 0:
        raise ValueError("r must be positive")
    if alpha_r < 0:
        raise ValueError("alpha_r must be nonnegative")
    if grid.signed_distance(x_r[None, :])[0] < r * (1 - 1e-12):
        raise ValueError("the ball B_r(x_r) is not contained in the domain")
    y = (grid.nodes - x_r) / r
    profile = getattr(phi, "profile", None)
    if profile is not None:
        base = profile(y)
    else:
        base = np.asarray(phi(y if phi.grid.dim > 1 else y[:, 0]), float)
    out = Field(grid, alpha_r * base, ExteriorSpec())
    if c_barrier is None:
        return out
    if not isinstance(phi, BarrierField):
        raise ValueError("the lower-bound check needs a barrier built by build_phi")
    s = phi.s
    dist = np.linalg.norm(grid.nodes - x_r, axis=1)
    inside = dist < r
    report = BarrierReport("psi_r", {"r": r, "alpha_r": alpha_r, "x_r": x_r.tolist(),
                                     "c": c_barrier, "s": s})
    rhs = c_barrier * alpha_r * r ** (-s) * (r - dist[inside]) ** s
    report.add("boundary_growth", grid.nodes[inside], out.values[inside], rhs)
    return out, report


# Hopf-lemma constants --------------------------------------------------------

def negpart_bound_constant(d0: float, s: float, dim: int, Lambda: float) -> float:
    """``(1 - s) (d0^-(n+2s) + 2^(n+2s)) Lambda``: bounds the maximal operator of a
    negative part that vanishes within distance ``d0`` of the evaluation point."""
    if d0 <= 0:
        raise ValueError("d0 must be positive")
    p = dim + 2 * s
    if math.isinf(d0):
        return (1 - s) * 2.0 ** p * Lambda
    return (1 - s) * (d0 ** (-p) + 2.0 ** p) * Lambda


def hopf_condition_check(C_tilde: float, norm_uminus: float, alpha_r: float, r: float,
                         s: float, c_barrier: float):
    """Whether ``C_tilde * norm_uminus < alpha_r / r^(2s) * c_barrier``.

    Returns ``(holds, margin)`` with ``margin = rhs - lhs``.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    if alpha_r < 0:
        raise ValueError("alpha_r must be nonnegative")
    lhs = C_tilde * norm_uminus
    rhs = alpha_r / r ** (2 * s) * c_barrier
    return bool(lhs < rhs), float(rhs - lhs)

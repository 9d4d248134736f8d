"""Steady states, extremal Dirichlet solves, principal eigenpairs and the
sub/supersolution sandwich for ``M[u] + a(x) (u^+)^q = 0``."""
from __future__ import annotations

import dataclasses
import math
import warnings

import numpy as np
import scipy.linalg as la
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .domain import DomainGrid, ExteriorSpec, Field, build_grid
from .operators import (KernelSpec, MINUS, _check_sign, extremal_from_integrals,
                        get_operator, policy_from_integrals)


class NonConvergence(RuntimeError):
    """Iteration budget exhausted; ``history`` and ``field`` hold the last state."""

    def __init__(self, message, history=None, field=None):
        super().__init__(message)
        self.history = history
        self.field = field


class Instability(RuntimeError):
    """Residual grew for too many consecutive steps or became non-finite."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class SingularSystem(ArithmeticError):
    pass


class PolicyCycle(RuntimeWarning):
    pass


class EmptyPositivitySet(ValueError):
    pass


class SandwichViolation(RuntimeWarning):
    pass


@dataclasses.dataclass
class Problem:
    """``M^sign[u] + a(x) (u^+)^q = 0`` in the domain, ``u = g`` outside."""

    grid: DomainGrid
    kernel: KernelSpec
    sign: str
    weight_a: np.ndarray
    q: float
    exterior: ExteriorSpec
    nonlinearity_convention: str = "positive_part"

    def __post_init__(self):
        _check_sign(self.sign)
        if not 0 < self.q < 1:
            raise ValueError(f"q must lie in (0, 1), got {self.q}")
        a = self.weight_a
        if callable(a):
            a = a(self.grid.nodes)
        a = np.broadcast_to(np.asarray(a, float), (self.grid.n_nodes,)).copy()
        if not np.all(np.isfinite(a)):
            raise ValueError("weight_a must be finite")
        self.weight_a = a
        if self.nonlinearity_convention != "positive_part":
            raise ValueError("only the 'positive_part' convention is supported")
        if self.kernel.dim != self.grid.dim:
            raise ValueError("kernel and grid dimensions differ")
        self.grid.check_exterior(self.exterior)

    def source(self, values) -> np.ndarray:
        return self.weight_a * np.maximum(values, 0.0) ** self.q

    def field(self, values) -> Field:
        return Field(self.grid, values, self.exterior)


@dataclasses.dataclass
class SolverConfig:
    """Iteration controls.

    The explicit time step is ``tau_factor`` times the largest step keeping
    the scheme monotone, ``1 / (c_norm * Lambda * max_i sum_j w_j |D_ij|)``
    with ``D`` the diagonal of the discrete directional integrals.
    """

    tau_factor: float = 0.9
    tol_residual: float = 1e-6
    max_iter: int = 500_000
    policy_max_outer: int = 50
    growth_window: int = 100

    def __post_init__(self):
        if not 0 < self.tau_factor <= 1:
            raise ValueError("tau_factor must lie in (0, 1]")
        for name in ("tol_residual", "max_iter", "policy_max_outer", "growth_window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def residual(p: Problem, u: Field) -> np.ndarray:
    """``M^sign[u] + a (u^+)^q`` at the interior nodes."""
    I = get_operator(u.grid, p.kernel).integrals(u)
    return extremal_from_integrals(I, p.sign, p.kernel) + p.source(u.values)


class _Sweep:
    """Stacked direction matrices for repeated whole-field operator sweeps."""

    def __init__(self, grid, kernel, exterior):
        op = get_operator(grid, kernel)
        mats = [st.A for st in op.stencils]
        if isinstance(mats[0], np.ndarray):
            self.A = op.scale * np.vstack(mats)
        else:
            self.A = (op.scale * sparse.vstack(mats)).tocsr()
        self.b = op.offsets(exterior)
        self.N, self.J = grid.n_nodes, kernel.n_dirs
        self.kernel = kernel

    def integrals(self, u):
        return (self.A @ u).reshape(self.J, self.N).T + self.b

    def extremal(self, u, sign):
        return extremal_from_integrals(self.integrals(u), sign, self.kernel)


def time_step(grid: DomainGrid, kernel: KernelSpec, cfg: SolverConfig) -> float:
    return cfg.tau_factor / get_operator(grid, kernel).max_stable_rate()


def _absorb(v, c, q, iters=60):
    """Solve ``w + c (w^+)^q = v`` for ``w`` (``c >= 0``), elementwise."""
    w = np.array(v, float)
    pos = (v > 0) & (c > 0)
    if not pos.any():
        return w
    vp, cp = v[pos], c[pos]
    # in t = w^q the equation t^(1/q) + c t = v is convex and increasing, so
    # Newton from t = v^q decreases monotonically to the root
    t = vp ** q
    for _ in range(iters):
        g = t ** (1 / q) + cp * t - vp
        t_new = t - g / (t ** (1 / q - 1) / q + cp)
        if np.all(np.abs(t_new - t) <= 1e-15 * np.maximum(t, 1e-300)):
            t = t_new
            break
        t = np.maximum(t_new, 0.0)
    w[pos] = t ** (1 / q)
    return w


def pseudo_time_solve(p: Problem, cfg: SolverConfig | None = None, init: Field | None = None):
    """March ``u <- u + tau (M^sign[u] + a (u^+)^q)`` to a steady state.

    Where ``a < 0`` the sink term is taken implicitly, node by node.

    Parameters
    ----------
    p : Problem
    cfg : SolverConfig, optional
    init : Field, optional
        Starting values (only the nodal values are used; the exterior is the
        problem's). Defaults to zero.

    Returns
    -------
    u : Field
    history : ndarray
        Max-norm residual before each step, ending with the final residual.

    Raises
    ------
    NonConvergence
        ``max_iter`` steps without reaching ``tol_residual``.
    Instability
        Non-finite values, or residual growth over ``growth_window``
        consecutive steps ending above the initial residual.
    """
    cfg = cfg or SolverConfig()
    sweep = _Sweep(p.grid, p.kernel, p.exterior)
    tau = time_step(p.grid, p.kernel, cfg)
    u = np.zeros(p.grid.n_nodes) if init is None else np.array(init.values, float)
    # absorbing nodes (a < 0) take the non-Lipschitz sink implicitly; the
    # fixed points are unchanged and the update stays monotone
    sink = tau * np.maximum(-p.weight_a, 0.0)
    gain = np.maximum(p.weight_a, 0.0)
    history = []
    grow = 0
    prev = math.inf
    for _ in range(cfg.max_iter + 1):
        m = sweep.extremal(u, p.sign)
        r = m + p.source(u)
        rn = float(np.max(np.abs(r)))
        history.append(rn)
        if not math.isfinite(rn):
            raise Instability("non-finite residual", np.asarray(history))
        if rn <= cfg.tol_residual:
            return p.field(u), np.asarray(history)
        grow = grow + 1 if rn > prev else 0
        # transients of the non-Lipschitz source may raise the residual for a
        # while; a run only counts as unstable once it also exceeds the start
        if grow >= cfg.growth_window and rn > history[0]:
            raise Instability(f"residual grew for {grow} consecutive steps",
                              np.asarray(history))
        prev = rn
        if sink.any():
            u = _absorb(u + tau * (m + gain * np.maximum(u, 0.0) ** p.q), sink, p.q)
        else:
            u = u + tau * r
    raise NonConvergence(f"no convergence in {cfg.max_iter} steps (residual {rn:.3e})",
                         np.asarray(history), p.field(u))


@dataclasses.dataclass
class PolicySolveInfo:
    outer_iterations: int
    residual: float
    policy: np.ndarray
    converged: bool
    iterates: list


class _LinearSolves:
    """Factorisations of ``L_mu`` keyed by policy, reused across calls."""

    def __init__(self, grid, kernel, exterior):
        self.op = get_operator(grid, kernel)
        self.exterior = exterior
        self.factors = {}

    def solve(self, mu, rhs):
        key = mu.tobytes()
        if key not in self.factors:
            if len(self.factors) > 8:
                self.factors.clear()
            M, c = self.op.linear_system(mu, self.exterior)
            if sparse.issparse(M):
                M = M.toarray() if M.shape[0] <= 6000 else M
            try:
                if sparse.issparse(M):
                    fac = ("sparse", spla.splu(sparse.csc_matrix(M)))
                else:
                    fac = ("dense", la.lu_factor(M, check_finite=True))
            except (RuntimeError, ValueError, la.LinAlgError) as exc:
                raise SingularSystem(str(exc)) from exc
            if fac[0] == "dense" and np.any(np.diag(fac[1][0]) == 0):
                raise SingularSystem("singular policy matrix")
            self.factors[key] = (fac, c)
        (kind, f), c = self.factors[key]
        u = f.solve(rhs - c) if kind == "sparse" else la.lu_solve(f, rhs - c)
        if not np.all(np.isfinite(u)):
            raise SingularSystem("non-finite linear solve")
        return u


def policy_iteration_solve(grid: DomainGrid, kernel: KernelSpec, sign: str, rhs,
                           exterior: ExteriorSpec | None = None,
                           cfg: SolverConfig | None = None, init_policy=None,
                           full_output: bool = False, _solves=None):
    """Solve ``M^sign[u] = rhs`` with exterior data by Howard iteration.

    Each outer step freezes the optimal kernel weights of the current
    iterate and solves the resulting linear system directly.

    Returns the solution field, and a :class:`PolicySolveInfo` when
    ``full_output`` is set. A repeated policy or exhausted outer budget
    emits :class:`PolicyCycle` and returns the iterate with the smallest
    residual.
    """
    _check_sign(sign)
    cfg = cfg or SolverConfig()
    exterior = exterior if exterior is not None else ExteriorSpec()
    rhs = np.broadcast_to(np.asarray(rhs, float), (grid.n_nodes,)).copy()
    if not np.all(np.isfinite(rhs)):
        raise ValueError("rhs must be finite")
    solves = _solves or _LinearSolves(grid, kernel, exterior)
    op = get_operator(grid, kernel)
    if init_policy is None:
        mu = np.full((grid.n_nodes, kernel.n_dirs), kernel.lam)
    else:
        mu = np.array(init_policy, float)
    seen = set()
    best = None
    iterates = []
    for outer in range(1, cfg.policy_max_outer + 1):
        seen.add(mu.tobytes())
        u = solves.solve(mu, rhs)
        iterates.append(u)
        I = _integrals(op, u, exterior)
        res = float(np.max(np.abs(extremal_from_integrals(I, sign, kernel) - rhs)))
        if best is None or res < best[1]:
            best = (u, res, mu)
        new = policy_from_integrals(I, sign, kernel)
        if np.array_equal(new, mu):
            out = Field(grid, u, exterior)
            info = PolicySolveInfo(outer, res, mu, True, iterates)
            return (out, info) if full_output else out
        if new.tobytes() in seen:
            break
        mu = new
    warnings.warn(f"policy iteration did not settle after {outer} steps; "
                  f"returning the best iterate (residual {best[1]:.3e})", PolicyCycle)
    out = Field(grid, best[0], exterior)
    info = PolicySolveInfo(outer, best[1], best[2], False, iterates)
    return (out, info) if full_output else out


def _integrals(op, u, exterior):
    I = np.stack([st.A @ u for st in op.stencils], axis=1) * op.scale
    return I + op.offsets(exterior)


@dataclasses.dataclass
class EigenPair:
    lambda1: float
    phi1: Field
    residual: float
    iterations: int = 0


def principal_eigenpair(grid: DomainGrid, kernel: KernelSpec, sign: str = MINUS,
                        cfg: SolverConfig | None = None, tol: float = 1e-10,
                        max_iter: int = 500) -> EigenPair:
    """Positive eigenfunction and eigenvalue of ``M^sign[phi] = -lambda phi``
    with zero exterior data, by inverse power iteration.

    Each step solves ``M^sign[v] = -phi`` and sets ``phi = v / max v``;
    the eigenvalue estimate is ``1 / max v``.
    """
    cfg = cfg or SolverConfig()
    zero = ExteriorSpec()
    solves = _LinearSolves(grid, kernel, zero)
    phi = np.ones(grid.n_nodes)
    policy = None
    lam = math.nan
    for it in range(1, max_iter + 1):
        v, info = policy_iteration_solve(grid, kernel, sign, -phi, zero, cfg,
                                         init_policy=policy, full_output=True,
                                         _solves=solves)
        policy = info.policy
        vmax = float(np.max(v.values))
        if not vmax > 0:
            raise NonConvergence("inverse iteration lost positivity")
        new = v.values / vmax
        lam_new = 1.0 / vmax
        change = float(np.max(np.abs(new - phi)))
        phi, lam = new, lam_new
        if change <= tol:
            break
    else:
        raise NonConvergence(f"inverse iteration did not converge in {max_iter} steps")
    f = Field(grid, phi, zero)
    I = _integrals(get_operator(grid, kernel), phi, zero)
    res = float(np.max(np.abs(extremal_from_integrals(I, sign, kernel) + lam * phi)))
    if res > cfg.tol_residual:
        raise NonConvergence(f"eigen residual {res:.3e} above tolerance")
    return EigenPair(lam, f, res, it)


@dataclasses.dataclass
class SandwichResult:
    u: Field
    lower: Field
    upper: Field
    certificate: dict


def positivity_ball(grid: DomainGrid, a: np.ndarray):
    """Largest ball centred at a node containing only nodes with ``a > 0``
    and lying inside the domain. Returns ``(center, radius, covers_domain)``;
    ``covers_domain`` means ``a > 0`` at every node."""
    pos = a > 0
    if not pos.any():
        raise EmptyPositivitySet("a is nonpositive at every node")
    if pos.all():
        return grid.center.copy(), None, True
    bad = grid.nodes[~pos]
    cand = np.flatnonzero(pos)
    radius = np.minimum(
        grid.distance[cand],
        np.min(np.linalg.norm(grid.nodes[cand, None, :] - bad[None, :, :], axis=2), axis=1)
        if len(cand) * len(bad) < 4e7 else
        np.array([np.min(np.linalg.norm(bad - grid.nodes[i], axis=1)) for i in cand]))
    best = int(np.argmax(radius))
    return grid.nodes[cand[best]].copy(), float(radius[best]), False


def _ball_grid(grid, center, radius):
    kind = "interval" if grid.dim == 1 else "disk"
    return build_grid(grid.dim, kind, radius, grid.h, grid.r_trunc, center)


def existence_sandwich(p: Problem, cfg: SolverConfig | None = None,
                       slack: float | None = None) -> SandwichResult:
    """Nontrivial solution trapped between a sub- and a supersolution.

    * lower: ``eps * phi1`` on a ball ``B0`` where ``a >= a0 > 0``, zero
      elsewhere, with ``(lambda1, phi1)`` the eigenpair on ``B0`` and
      ``eps = (a0 / lambda1)^(1 / (1 - q))``;
    * upper: ``k * Psi`` where ``M^sign[Psi] = -max|a|`` with exterior
      data ``g^+`` and ``k = max(1, (max Psi)^(q / (1 - q)))``;
    * ``u``: pseudo-time descent from the upper function.

    The certificate records both margins; a margin below ``-(tol + slack)``
    (``slack`` defaults to ``2 h^s``) emits :class:`SandwichViolation`.
    """
    cfg = cfg or SolverConfig()
    g, k_, q, a = p.grid, p.kernel, p.q, p.weight_a
    if not np.any(a > 0):
        raise EmptyPositivitySet("a is nonpositive at every node")
    slack = 2 * g.h ** k_.s if slack is None else slack

    center, radius, whole = positivity_ball(g, a)
    if whole:
        ball, inside = g, np.ones(g.n_nodes, bool)
    else:
        ball = _ball_grid(g, center, radius)
        inside = np.linalg.norm(g.nodes - center, axis=1) < radius - 1e-10 * g.h
    a0 = float(np.min(a[inside]))
    eig = principal_eigenpair(ball, k_, p.sign, cfg)
    eps = (a0 / eig.lambda1) ** (1.0 / (1.0 - q))
    lower_vals = np.zeros(g.n_nodes)
    if whole:
        lower_vals[:] = eps * eig.phi1.values
    else:
        lower_vals[inside] = eps * eig.phi1(g.nodes[inside])
    lower = Field(g, lower_vals, ExteriorSpec())

    a_sup = float(np.max(np.abs(a)))
    g_plus = p.exterior.map_values(lambda v: max(v, 0.0))
    psi = policy_iteration_solve(g, k_, p.sign, -a_sup, g_plus, cfg)
    psi_max = float(np.max(psi.values))
    kk = max(1.0, psi_max ** (q / (1.0 - q))) if psi_max > 0 else 1.0
    upper = Field(g, kk * psi.values, p.exterior)

    u, history = pseudo_time_solve(p, cfg, init=upper)
    lower_margin = u.values - lower.values
    upper_margin = upper.values - u.values
    threshold = cfg.tol_residual + slack
    cert = {
        "lambda1": eig.lambda1, "a0": a0, "epsilon": eps, "k": kk, "psi_max": psi_max,
        "ball_center": np.atleast_1d(center).tolist(),
        "ball_radius": None if whole else radius, "ball_is_domain": whole,
        "min_lower_margin": float(lower_margin.min()),
        "min_upper_margin": float(upper_margin.min()),
        "threshold": threshold,
        "residual": float(history[-1]), "steps": len(history) - 1,
        "upper_residual_max": float(np.max(residual(p, upper))),
        "lower_residual_min": float(np.min(residual(p, lower)[inside])),
    }
    cert["holds"] = bool(cert["min_lower_margin"] >= -threshold
                         and cert["min_upper_margin"] >= -threshold)
    if not cert["holds"]:
        side = "lower" if cert["min_lower_margin"] < -threshold else "upper"
        worst = min(cert["min_lower_margin"], cert["min_upper_margin"])
        warnings.warn(f"sandwich violated on the {side} side (worst margin {worst:.3e})",
                      SandwichViolation)
    return SandwichResult(u, lower, upper, cert)

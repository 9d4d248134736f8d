"""Run configured scenarios and write their solution CSV and summary JSON."""
from __future__ import annotations

import json
import math
import os

import numpy as np

from . import barriers, experiments
from .barriers import build_phi, hopf_condition_check, l1s_norm, negpart_bound_constant
from .config import Scenario, load_config
from .domain import ExteriorSpec, Field, build_grid
from .operators import (MINUS, PLUS, extremal_from_integrals, get_operator,
                        linear_from_integrals, policy_from_integrals)
from .solvers import principal_eigenpair

COMMANDS = ("solve", "eigen", "barriers", "hopf", "threshold", "sweep", "validate-operator")


def write_solution_csv(path, u: Field, residual) -> None:
    """Columns ``x[, y], u, d, residual`` with a header row."""
    g = u.grid
    cols = ["x", "y"][:g.dim] + ["u", "d", "residual"]
    data = np.column_stack([g.nodes, u.values, g.distance, residual])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(cols), comments="")


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _solve(sc: Scenario):
    p = sc.problem()
    u, history = experiments.solve_descending(p, sc.solver)
    return p, u


def run_solve(sc: Scenario):
    p, u = _solve(sc)
    res = experiments.solve_summary(p, u, sc.tol_zero, sc.scenario_id)
    i = int(np.argmax(u.values))
    res.extra["exterior_tail_at_max"] = experiments.exterior_tail_check(u, u.grid.nodes[i], sc.kernel.s)
    return res


def _boundary_projection(grid, x):
    p = x - grid.center
    if grid.kind == "interval":
        return grid.center + np.sign(p + (p == 0)) * grid.extent
    if grid.kind == "disk":
        n = np.linalg.norm(p)
        return grid.center + (p / n if n > 0 else np.array([1.0, 0.0])) * grid.extent
    ax = int(np.argmax(np.abs(p)))
    out = p.copy()
    out[ax] = np.sign(p[ax] + (p[ax] == 0)) * grid.extent
    return grid.center + out


def hopf_condition_probe(u: Field, s: float, big_lam: float, c_barrier: float, r=None):
    """Evaluate the sufficient boundary-growth condition at the boundary point
    nearest the node with the smallest ``u / d^s``."""
    g = u.grid
    q = u.values / g.distance ** s
    i = int(np.argmin(q))
    x0 = _boundary_projection(g, g.nodes[i])
    normal = (x0 - g.nodes[i]) / max(np.linalg.norm(x0 - g.nodes[i]), 1e-300)
    r = g.extent / 4 if r is None else r
    x_r = x0 - r * normal
    near = np.linalg.norm(g.nodes - x_r, axis=1) < r / 2
    alpha = float(np.min(u.values[near])) if near.any() else 0.0
    neg_nodes = g.nodes[u.values < 0]
    R = math.inf
    if len(neg_nodes):
        R = float(np.min(np.linalg.norm(neg_nodes - x0, axis=1)))
    off = float(np.linalg.norm(x0 - g.center))
    for sh, lvl in zip(u.exterior.shells, u.exterior.levels):
        if lvl < 0:
            R = min(R, max(sh.r_inner - off, 0.0))
    if u.exterior.far_value < 0:
        R = min(R, u.exterior.outer_radius - off)
    d0 = R - 2 * r
    out = {"x0": x0.tolist(), "r": r, "alpha_r": alpha, "R": R}
    if not d0 > 0:
        out.update({"applicable": False})
        return out
    C = negpart_bound_constant(d0, s, g.dim, big_lam)
    norm = l1s_norm(u.negative_part(), s)
    holds, margin = hopf_condition_check(C, norm, max(alpha, 0.0), r, s, c_barrier)
    out.update({"applicable": True, "C_tilde": C, "norm_uminus": norm, "holds": holds,
                "margin": margin})
    return out


def run_hopf(sc: Scenario):
    p, u = _solve(sc)
    res = experiments.solve_summary(p, u, sc.tol_zero, sc.scenario_id)
    smp = experiments.smp_check(u, sc.tol_zero, sc.kernel.s, sc.experiment.get("probe_depth"))
    if smp.verdict == experiments.STRICTLY_POSITIVE:
        res.add_check("hopf_quotient_positive", smp.hopf_min > 0, smp.hopf_min)
    res.extra["hopf_profile"] = smp.hopf
    n_levels, growth = sc.experiment.get("N", 8), sc.experiment.get("C_growth", 2.0)
    res.extra["hopf_condition"] = hopf_condition_probe(
        u, sc.kernel.s, sc.kernel.big_lam, 1.0 / (2.0 * growth ** n_levels))
    return res


def run_eigen(sc: Scenario):
    eig = principal_eigenpair(sc.grid, sc.kernel, sc.sign, sc.solver)
    phi = eig.phi1
    I = get_operator(sc.grid, sc.kernel).integrals(phi)
    r = extremal_from_integrals(I, sc.sign, sc.kernel) + eig.lambda1 * phi.values
    res = experiments.ScenarioResult(sc.scenario_id, phi, sc.kernel.s, sc.tol_zero, r,
                                     lambda1=eig.lambda1)
    res.add_check("eigen_residual", eig.residual <= sc.solver.tol_residual,
                  sc.solver.tol_residual - eig.residual)
    res.add_check("eigenfunction_positive", np.min(phi.values) > 0, float(np.min(phi.values)))
    res.add_check("normalised", abs(np.max(phi.values) - 1) == 0, 0.0)
    return res


def run_barriers(sc: Scenario):
    dim = sc.grid.dim
    kind = "interval" if dim == 1 else "disk"
    ball = build_grid(dim, kind, 1.0, sc.grid.h, max(sc.grid.r_trunc, 2.5))
    vminus = float(sc.experiment.get("Vminus_sup", 0.0))
    phi, report = build_phi(sc.kernel, vminus, sc.experiment.get("N", 8),
                            sc.experiment.get("C_growth", 2.0), grid=ball)
    Mphi = barriers.operator_apply(phi, MINUS, sc.kernel)
    c = report.parameters["c"]
    r = Mphi - vminus * phi.values - c
    res = experiments.ScenarioResult(sc.scenario_id, phi, sc.kernel.s, sc.tol_zero, None)
    for line in report.lines:
        if line.asserted:
            res.add_check(f"phi_{line.name}", len(line.failures) == 0, line.min_slack)
    res.extra["barrier_report"] = report.to_dict()
    d0 = float(sc.experiment.get("d0", 0.5))
    res.extra["negpart_bound_constant"] = negpart_bound_constant(d0, sc.kernel.s, dim,
                                                                 sc.kernel.big_lam)
    res._csv_residual = r
    return res


def run_threshold(sc: Scenario):
    e = sc.experiment
    tol_zero = float(e.get("tol_zero_threshold", 1e-3))
    p0 = sc.problem()
    out = experiments.threshold_search(sc.grid, sc.kernel, p0.weight_a, sc.q,
                                       float(e.get("M_lo", 0.0)), float(e.get("M_hi", 10.0)),
                                       float(e.get("tol_M", 1e-6)), tol_zero, sc.sign, sc.solver)
    res = experiments.ScenarioResult(sc.scenario_id, out.u_star, sc.kernel.s, sc.tol_zero,
                                     m_star=out.m_star)
    p_star = sc.problem(experiments.example_exterior(out.m_star, sc.grid.extent))
    res.residual = experiments.residual(p_star, out.u_star)
    res.add_check("threshold_min_u", abs(out.min_u_star) <= tol_zero,
                  tol_zero - abs(out.min_u_star))
    res.extra["ladder"] = [{"M": M, "min_u": m} for M, m in out.ladder]
    delta = float(e.get("exhibit_offset", 0.1))
    p_after = sc.problem(experiments.example_exterior(out.m_star + delta, sc.grid.extent))
    u_after, _ = experiments.solve_descending(p_after, sc.solver)
    smp = experiments.smp_check(u_after, sc.tol_zero, sc.kernel.s)
    sup = float(np.max(u_after.values))
    res.add_check("smp_violation_exhibit", smp.dead_core.size > 0 and sup > 0, sup)
    res.extra["exhibit"] = {"M": out.m_star + delta, "verdict": smp.verdict,
                            "dead_core_count": int(smp.dead_core.size), "max_u": sup,
                            "min_u": float(np.min(u_after.values))}
    try:
        fits = experiments.growth_exponent_fit(u_after, smp.dead_core)
        worst = min(f[1] for f in fits)
        res.add_check("flatness", worst >= 1.8 * sc.kernel.s, worst - 1.8 * sc.kernel.s)
        res.extra["growth_exponents"] = [{"point": f[0], "exponent": f[1], "samples": f[2]}
                                         for f in fits]
    except experiments.InsufficientSamples as exc:
        res.add_check("flatness", False, math.nan)
        res.extra["growth_exponents"] = str(exc)
    return res


def run_sweep(sc: Scenario):
    e = sc.experiment
    amps = e.get("amplitudes", [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0])
    p0 = sc.problem()
    sweep = experiments.norm_sweep(sc.grid, sc.kernel, p0.weight_a, sc.q, amps, sc.tol_zero,
                                   sc.sign, sc.solver)
    base = sc.problem(experiments.negative_shell_exterior(sweep.rows[0].amplitude,
                                                          sc.grid.extent))
    u0, _ = experiments.solve_descending(base, sc.solver)
    res = experiments.ScenarioResult(sc.scenario_id, u0, sc.kernel.s, sc.tol_zero,
                                     experiments.residual(base, u0))
    first = sweep.rows[0]
    res.add_check("positive_at_smallest_amplitude",
                  first.verdict == experiments.STRICTLY_POSITIVE, first.min_u)
    res.add_check("onset_positive", sweep.onset is not None and sweep.onset > 0,
                  sweep.onset if sweep.onset is not None else math.nan)
    res.add_check("single_onset", sweep.single_onset, 1 - sweep.transitions)
    res.extra["sweep"] = [r.__dict__ for r in sweep.rows]
    res.extra["onset_amplitude"] = sweep.onset
    res.extra["onset_norm"] = sweep.onset_norm
    return res


def _random_field(grid, exterior, rng, modes=4):
    x = grid.nodes - grid.center
    vals = np.zeros(grid.n_nodes)
    for _ in range(modes):
        k = rng.normal(size=grid.dim) * 3
        vals += rng.normal() * np.cos(x @ k + rng.uniform(0, 2 * np.pi))
    return Field(grid, vals, exterior)


def operator_identity_checks(grid, kernel, exterior, rng, n_policies=1000, n_nodes=64):
    """Bracketing, optimal-policy, sign-flip, homogeneity and shift checks on a
    random smooth field. Returns ``(field, M_plus, checks)``."""
    op = get_operator(grid, kernel)
    f = _random_field(grid, exterior, rng)
    I = op.integrals(f)
    mp = extremal_from_integrals(I, PLUS, kernel)
    mm = extremal_from_integrals(I, MINUS, kernel)
    scale = 1.0 + np.max(np.abs(np.concatenate([mp, mm])))
    checks = []
    sample = rng.choice(grid.n_nodes, size=min(n_nodes, grid.n_nodes), replace=False)
    mu = rng.uniform(kernel.lam, kernel.big_lam, size=(n_policies, len(sample), kernel.n_dirs))
    L = np.einsum("pnj,nj,j->pn", mu, I[sample], np.asarray(kernel.weights)) * kernel.c_norm
    tol = 1e-12 * scale
    violations = int(np.sum(L > mp[sample] + tol) + np.sum(L < mm[sample] - tol))
    checks.append(("bracketing", violations == 0, -violations))
    for sign, ref in ((PLUS, mp), (MINUS, mm)):
        pol = policy_from_integrals(I, sign, kernel)
        err = float(np.max(np.abs(linear_from_integrals(I, pol, kernel) - ref)))
        checks.append((f"optimal_policy_{sign}", err <= tol, tol - err))
    neg = extremal_from_integrals(op.integrals(-f), PLUS, kernel)
    err = float(np.max(np.abs(neg + mm)))
    checks.append(("sign_flip", err <= tol, tol - err))
    err = float(np.max(np.abs(extremal_from_integrals(op.integrals(f.scaled(2.5)), PLUS, kernel)
                              - 2.5 * mp)))
    checks.append(("homogeneity", err <= 2.5 * tol, 2.5 * tol - err))
    err = float(np.max(np.abs(extremal_from_integrals(op.integrals(f.shifted(1.7)), PLUS, kernel)
                              - mp)))
    checks.append(("shift_invariance", err <= tol, tol - err))
    const = Field(grid, np.full(grid.n_nodes, 3.0), ExteriorSpec.constant(3.0))
    err = float(np.max(np.abs(extremal_from_integrals(op.integrals(const), PLUS, kernel))))
    checks.append(("constants_annihilated", err <= tol, tol - err))
    return f, mp, checks


def run_validate_operator(sc: Scenario):
    rng = np.random.default_rng(int(sc.experiment.get("seed", 0)))
    f, mp, checks = operator_identity_checks(sc.grid, sc.kernel, sc.exterior, rng,
                                             int(sc.experiment.get("n_policies", 1000)))
    res = experiments.ScenarioResult(sc.scenario_id, f, sc.kernel.s, sc.tol_zero, None)
    for name, ok, margin in checks:
        res.add_check(name, ok, margin)
    res._csv_residual = mp
    return res


_RUNNERS = {
    "solve": run_solve, "eigen": run_eigen, "barriers": run_barriers, "hopf": run_hopf,
    "threshold": run_threshold, "sweep": run_sweep, "validate-operator": run_validate_operator,
}


def run_scenario(config_path, command: str | None = None, out_dir=None):
    """Run one subcommand on a configuration file.

    ``command`` defaults to ``experiment.command`` in the file, then
    ``solve``. When ``out_dir`` is given, ``solution.csv`` and
    ``summary.json`` are written there.
    """
    sc = load_config(config_path)
    command = command or sc.experiment.get("command", "solve")
    if command not in _RUNNERS:
        raise ValueError(f"unknown command {command!r}")
    res = _RUNNERS[command](sc)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        resid = getattr(res, "_csv_residual", None)
        if resid is None:
            resid = res.residual if res.residual is not None else np.full(res.u.grid.n_nodes, np.nan)
        write_solution_csv(os.path.join(out_dir, "solution.csv"), res.u, resid)
        summary = res.summary()
        summary["command"] = command
        write_summary_json(os.path.join(out_dir, "summary.json"), summary)
    return res

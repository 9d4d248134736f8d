import numpy as np
import pytest
from scipy import integrate

from fracpucci import (DEAD_CORE, STRICTLY_POSITIVE, TRIVIAL, ExteriorSpec, Field, Problem,
                       SolverConfig, build_grid, exterior_tail_check, growth_exponent_fit,
                       make_kernel, max_localization_check, norm_sweep, smp_check,
                       threshold_search, weight_bound_check)
from fracpucci import experiments
from fracpucci.experiments import (BracketFailure, InsufficientSamples, MonotonicityViolation,
                                   example_exterior, negative_shell_exterior, solve_descending,
                                   tail_constant)
from fracpucci.solvers import residual


@pytest.fixture(scope="module")
def g64():
    return build_grid(1, "interval", 1.0, 1 / 64, 10.0)


@pytest.fixture(scope="module")
def k05():
    return make_kernel(1, 0.5)


def test_smp_trivial_and_positive(g64, k05):
    assert smp_check(Field(g64, np.zeros(g64.n_nodes)), 1e-5, 0.5).verdict == TRIVIAL
    p = Problem(g64, k05, "minus", 1.0, 0.5, ExteriorSpec())
    u, _ = solve_descending(p)
    res = smp_check(u, 1e-5, 0.5)
    assert res.verdict == STRICTLY_POSITIVE and res.dead_core.size == 0
    assert res.hopf_min > 0


def test_hopf_quotient_of_s_power():
    g = build_grid(1, "interval", 1.0, 1 / 512, 10.0)
    u = Field.from_function(g, lambda x: np.sqrt(np.maximum(1 - x[:, 0] ** 2, 0)))
    prof = smp_check(u, 1e-5, 0.5).hopf
    assert set(prof) == {"left", "right"}
    for v in prof.values():
        assert v == pytest.approx(np.sqrt(2), rel=0.05)


def test_verdict_consistency_random():
    g = build_grid(2, "disk", 1.0, 1 / 8, 4.0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        u = Field(g, rng.normal(size=g.n_nodes) + rng.uniform(-1, 3))
        r = smp_check(u, 1e-3, 0.5)
        positive = r.dead_core.size == 0 and np.min(u.values) > 1e-3
        assert (r.verdict == STRICTLY_POSITIVE) == positive


def test_max_localization(g64, k05):
    u = Field(g64, np.full(g64.n_nodes, 2.0))
    ok, arg = max_localization_check(u, np.ones(g64.n_nodes))
    assert ok and len(arg) == g64.n_nodes
    a = np.where(np.abs(g64.nodes[:, 0]) < 0.5, -1.0, 1.0)
    ok, arg = max_localization_check(u, a)
    assert not ok
    p = Problem(g64, k05, "minus", np.where(g64.nodes[:, 0] < 0, 2.0, -1.0), 0.5, ExteriorSpec())
    sol, _ = solve_descending(p)
    assert np.max(np.abs(residual(p, sol))) <= 1e-6
    ok, arg = max_localization_check(sol, p.weight_a)
    assert ok and np.all(g64.nodes[arg, 0] < 0)


def test_tail_constant_and_weight_bound(g64, k05):
    assert tail_constant(1, 0.5, 2.0) == pytest.approx(1.0)
    assert tail_constant(1, 0.5, 4.0) == pytest.approx(0.5)
    oracle = integrate.quad(lambda r: 2 * np.pi * r * r ** (-2 - 0.6), 1.5, np.inf)[0]
    assert tail_constant(2, 0.3, 1.5) == pytest.approx(oracle, rel=1e-10)
    tiny = Field(g64, np.full(g64.n_nodes, 1e-30))
    assert weight_bound_check(tiny, 3.0, 0.5, k05, R=2.0) == pytest.approx(3.0)
    u = Field(g64, np.full(g64.n_nodes, 4.0))
    assert weight_bound_check(u, 3.0, 0.5, k05, R=2.0) == pytest.approx(3.0 - 2.0)


@pytest.mark.parametrize("lam,big", [(1.0, 1.0), (1.0, 3.0)])
@pytest.mark.parametrize("a0", [0.5, 2.0])
def test_weight_bound_on_solutions(g64, lam, big, a0):
    k = make_kernel(1, 0.5, lam, big)
    p = Problem(g64, k, "minus", a0, 0.5, negative_shell_exterior(0.05))
    u, _ = solve_descending(p)
    assert weight_bound_check(u, p.weight_a, 0.5, k) >= 0


def test_exterior_tail_sign(g64):
    zero = Field(g64, np.zeros(g64.n_nodes))
    assert exterior_tail_check(zero, [0.0], 0.5) == 0.0
    neg = Field(g64, np.zeros(g64.n_nodes), negative_shell_exterior(2.0))
    assert exterior_tail_check(neg, [0.3], 0.5) < 0
    g2 = build_grid(2, "disk", 1.0, 1 / 8, 4.0)
    neg2 = Field(g2, np.zeros(g2.n_nodes), negative_shell_exterior(1.0))
    assert exterior_tail_check(neg2, [0.25, 0.0], 0.5) < 0


def test_exterior_tail_example_data_oracle(g64):
    s = 0.5
    u = Field(g64, np.zeros(g64.n_nodes), example_exterior(2.0))
    val = lambda y: float(example_exterior(2.0).value_at_radius(abs(y)))
    for x0 in (0.0, 0.5, 0.9):
        pieces = [(1.0, 2.0), (2.0, 3.0)]
        oracle = sum(integrate.quad(lambda y: val(y) / abs(y - x0) ** (1 + 2 * s), a, b)[0]
                     + integrate.quad(lambda y: val(y) / abs(y - x0) ** (1 + 2 * s), -b, -a)[0]
                     for a, b in pieces)
        oracle += integrate.quad(lambda y: (y - x0) ** (-2), 3, np.inf)[0]
        oracle += integrate.quad(lambda y: (y - x0) ** (-2), -np.inf, -3)[0]
        assert exterior_tail_check(u, [x0], s) == pytest.approx(oracle, rel=1e-9)
    # at the centre: 2 (1 - M) (1/2 - 1/3) + 2/3
    for M in (2.0, 4.0):
        w = Field(g64, np.zeros(g64.n_nodes), example_exterior(M))
        assert exterior_tail_check(w, [0.0], s) == pytest.approx((1 - M) / 3 + 2 / 3, rel=1e-12)


def test_threshold_bracket_failure(g64, k05):
    with pytest.raises(BracketFailure):
        threshold_search(g64, k05, 1.0, 0.5, 0.0, 1.0)


def test_threshold_monotonicity_guard(g64, k05, monkeypatch):
    real = experiments.solve_descending
    calls = []

    def fake(p, cfg=None):
        u, h = real(p, cfg)
        calls.append(1)
        if len(calls) == 3:
            u = u.with_values(u.values + 10.0)
        return u, h
    monkeypatch.setattr(experiments, "solve_descending", fake)
    with pytest.raises(MonotonicityViolation):
        threshold_search(g64, k05, 1.0, 0.5, 0.0, 10.0)


def test_threshold_search_coarse(g64, k05):
    out = threshold_search(g64, k05, 1.0, 0.5, 0.0, 10.0, tol_zero=1e-3)
    assert abs(out.min_u_star) <= 1e-3 or out.ladder[-1][0] - out.ladder[0][0] > 0
    mins = [m for _, m in out.ladder]
    assert all(b < a for a, b in zip(mins, mins[1:]))
    assert out.ladder[0][1] > 0
    u0 = Problem(g64, k05, "minus", 1.0, 0.5, example_exterior(0.0))
    assert smp_check(solve_descending(u0)[0], 1e-5, 0.5).verdict == STRICTLY_POSITIVE


def test_norm_sweep_single_onset(g64, k05):
    sweep = norm_sweep(g64, k05, 1.0, 0.5, [0.0, 0.1, 0.2, 0.3, 0.6])
    first = sweep.rows[0]
    assert first.verdict == STRICTLY_POSITIVE and first.l1s_neg == 0.0
    assert sweep.onset is not None and sweep.onset > 0
    assert sweep.single_onset
    before = [r for r in sweep.rows if r.amplitude < sweep.onset]
    assert all(r.verdict == STRICTLY_POSITIVE for r in before)


def test_onset_norm_nondecreasing_in_weight(g64, k05):
    amps = np.round(np.arange(0.0, 1.01, 0.05), 10)
    onsets = [norm_sweep(g64, k05, a0, 0.5, amps).onset_norm for a0 in (0.5, 1.0, 2.0)]
    assert all(o is not None for o in onsets)
    assert onsets[0] <= onsets[1] <= onsets[2]


@pytest.mark.parametrize("p", [0.5, 1.0, 1.5])
def test_growth_fit_synthetic(p):
    g = build_grid(1, "interval", 1.0, 1 / 512, 10.0)
    u = Field.from_function(g, lambda x: np.maximum(np.abs(x[:, 0]) - 0.3125, 0) ** p)
    core = np.flatnonzero(u.values <= 0)
    fits = growth_exponent_fit(u, core)
    assert len(fits) == 2
    for point, expo, n in fits:
        assert abs(abs(point[0]) - 0.3125) < 1e-12
        assert expo == pytest.approx(p, abs=0.05) and n == 8


def test_growth_fit_flags_hopf_like_profile():
    s = 0.6
    g = build_grid(1, "interval", 1.0, 1 / 512, 10.0)
    u = Field.from_function(g, lambda x: np.maximum(np.abs(x[:, 0]) - 0.25, 0) ** s)
    fits = growth_exponent_fit(u)
    assert all(abs(e - s) <= 0.05 and e < 2 * s for _, e, _ in fits)


def test_growth_fit_2d_and_insufficient():
    g = build_grid(2, "disk", 1.0, 1 / 64, 4.0)
    u = Field.from_function(g, lambda x: np.maximum(x[:, 0] - 0.25, 0) ** 1.0)
    fits = growth_exponent_fit(u)
    assert len(fits) > 10 and all(abs(e - 1.0) < 0.05 for _, e, _ in fits)
    with pytest.raises(InsufficientSamples):
        growth_exponent_fit(Field(g, np.ones(g.n_nodes)))


def test_absorbing_weight_converges(g64, k05):
    a = np.where(np.abs(g64.nodes[:, 0]) < 0.6, -100.0, 1.0)
    p = Problem(g64, k05, "minus", a, 0.5, ExteriorSpec((), 1.0))
    u, hist = solve_descending(p)
    assert hist[-1] <= 1e-6 and np.min(u.values) > 0


def test_scenario_summary_consistent(g64, k05):
    p = Problem(g64, k05, "minus", 1.0, 0.5, negative_shell_exterior(0.05))
    u, _ = solve_descending(p)
    res = experiments.solve_summary(p, u, 1e-5, "x")
    s1, s2 = res.summary(), res.summary()
    assert s1 == s2
    assert s1["min_u"] == np.min(u.values) and s1["max_u"] == np.max(u.values)
    assert s1["dead_core_count"] == smp_check(u, 1e-5, 0.5).dead_core.size
    assert {"min_u", "max_u", "l1s_neg", "dead_core_count", "hopf_min_quotient",
            "checks"} <= set(s1)

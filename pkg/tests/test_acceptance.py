"""Acceptance criteria, each at its stated tolerance and runtime budget.

Every test records a ``PASS``/``FAIL criterion N`` line; the lines are printed
together in the terminal summary (and immediately with ``-s``).
"""
import time

import numpy as np
import pytest

from bnflow import dynamics as dyn
from bnflow import experiments as ex
from bnflow import verify as V
from bnflow.config import ExperimentConfig

pytestmark = pytest.mark.slow

_cache = {}


def verify_problem():
    """Data and matched unit-norm init of the default verify config (d=3, m=4)."""
    if "problem" not in _cache:
        cfg = ExperimentConfig.from_dict("verify")
        dist = cfg.build_data()
        e = cfg.ensemble
        init = dyn.init_ensemble(int(e["m"]), dist.d, np.random.default_rng(cfg.seed), scale=1.0,
                                 act=e["act"], loss=e["loss"])
        _cache["problem"] = (dist, init)
    return _cache["problem"]


def suite(name):
    if name not in _cache:
        dist, init = verify_problem()
        if name == "norm":
            _cache[name] = V.norm_conservation_suite(dist, init, dt=1e-3, t_end=10.0, tol=1e-6)
        elif name == "equivalence":
            _cache[name] = V.equivalence_suite(dist, init, dt=1e-4, t_end=2.0, tol=1e-4, min_order_ratio=8.0)
    return _cache[name]


def record(log, n, title, ok, seconds, limit, measured):
    within = seconds < limit
    line = (f"{'PASS' if ok and within else 'FAIL'} criterion {n}: {title} | {measured} "
            f"| {seconds:.1f}s (limit {limit:g}s)")
    log.append(line)
    print(line)
    assert ok, line
    assert within, line


def fmt(x):
    return f"{x:.3g}" if isinstance(x, float) else str(x)


def test_criterion_01_gradient_oracle(acceptance_log):
    t0 = time.perf_counter()
    s = V.gradient_suite(100, seed=0, h=1e-5, tol=1e-5)
    worst = max(s.measured["max_rel_error"].values())
    record(acceptance_log, 1, "RHS vs central differences, 100 configs", s.passed, time.perf_counter() - t0, 30,
           f"max rel err {fmt(worst)} <= 1e-5, kink redraws {s.measured['kink_redraws']}")


def test_criterion_02_norm_conservation(acceptance_log):
    s = suite("norm")
    record(acceptance_log, 2, "norm conservation, RK4 dt=1e-3 t=10", s.passed, s.seconds, 10,
           f"max drift {fmt(s.measured['max_norm_drift'])} <= 1e-6")


def test_criterion_03_equivalence(acceptance_log):
    s = suite("equivalence")
    m = s.measured
    ok = m["max_param_deviation"] <= 1e-4 and all(r >= 8 for r in m["halving_ratios"])
    record(acceptance_log, 3, "BN vs manifold flow, dt=1e-4 t=2", ok, s.seconds, 60,
           f"deviation {fmt(m['max_param_deviation'])} <= 1e-4, halving ratio "
           f"{', '.join(fmt(r) for r in m['halving_ratios'])} >= 8")


def test_criterion_04_metric(acceptance_log):
    s = V.metric_suite(1000, seed=0, max_cond=1e3, tol_sym=1e-10, tol_rel=1e-8)
    record(acceptance_log, 4, "metric suite, 1000 trials, cond <= 1e3", s.passed, s.seconds, 10,
           ", ".join(f"{k} {fmt(v)}" for k, v in s.measured.items()))


def test_criterion_05_scale_law(acceptance_log):
    s = V.scale_law_suite(0, (0.1, 2.0, 10.0), tol_v=1e-10, tol_f=1e-12)
    record(acceptance_log, 5, "scale law c in {0.1, 2, 10}", s.passed, s.seconds, 5,
           ", ".join(f"{k} {fmt(v)}" for k, v in s.measured.items()))


def test_criterion_06_first_step(acceptance_log, tmp_path):
    t0 = time.perf_counter()
    res = ex.run_fig3(ExperimentConfig.from_dict("fig3"), tmp_path)
    keys = ("every_post_norm_larger", "tangency_below_1e-10", "pythagoras_within_1e-12")
    m = res.metrics
    record(acceptance_log, 6, "first-step amplification, norms 1e-3..1", all(res.checks[k] for k in keys),
           time.perf_counter() - t0, 5,
           f"post>pre {res.checks['every_post_norm_larger']}, tangency {fmt(m['max_tangency'])}, "
           f"pythagoras {fmt(m['max_pythagoras_rel'])}")


def test_criterion_07_fig1(acceptance_log, tmp_path):
    t0 = time.perf_counter()
    res = ex.run_fig1(ExperimentConfig.from_dict("fig1"), tmp_path)
    m = res.metrics
    ok = m["sector_ratio_bn"] > 1.5 and 0.5 <= m["control_sector_ratio_bn"] <= 2.0
    record(acceptance_log, 7, "fig1 sector speed ratio", ok, time.perf_counter() - t0, 60,
           f"BN minor/major {fmt(m['sector_ratio_bn'])} > 1.5, control {fmt(m['control_sector_ratio_bn'])} in [0.5, 2]")


def test_criterion_08_fig2(acceptance_log, tmp_path):
    t0 = time.perf_counter()
    res = ex.run_fig2(ExperimentConfig.from_dict("fig2"), tmp_path)
    m = res.metrics
    ok = res.checks["small_group_first_passage_earlier"] and res.checks["t0_speed_ratio_within_10pct"]
    record(acceptance_log, 8, "fig2 init-scale groups", ok, time.perf_counter() - t0, 120,
           f"median first passage {m['median_first_passage']} (None = never), "
           f"t0 speed ratio {fmt(m['speed_ratio_t0_median'])} vs 10")


def test_criterion_09_particle_limit(acceptance_log, tmp_path):
    t0 = time.perf_counter()
    dist, init = verify_problem()
    trajs = suite("norm").trajectories + suite("equivalence").trajectories + [V.manifold_trajectory(dist, init)]
    audit = V.speed_bound_suite(trajs, dist)
    res = ex.run_convergence_study(ExperimentConfig.from_dict("convergence"), tmp_path)
    m = res.metrics
    ok = audit.passed and res.checks["speed_bound_never_violated"] and m["decrease_fraction"] > 0.8
    record(acceptance_log, 9, "speed bound audit + particle limit m=16,64,256", ok, time.perf_counter() - t0, 300,
           f"audit violations {audit.measured['violations']}/{audit.measured['trajectories']} suite trajectories, "
           f"{m['speed_bound_violations']} in study; W2 decrease fraction {fmt(m['decrease_fraction'])} > 0.8")


def test_criterion_10_ot(acceptance_log):
    s = V.ot_suite(200, seed=0, max_size=6, tol_axiom=1e-9)
    m = s.measured
    ok = m["exact_matches"] == m["trials"] and m["max_axiom_violation"] <= 1e-9
    record(acceptance_log, 10, "W2 vs permutation minimum, 200 trials", ok, s.seconds, 30,
           f"exact {m['exact_matches']}/{m['trials']}, axiom violation {fmt(m['max_axiom_violation'])}")


def test_criterion_11_regular_point(acceptance_log):
    s = V.regular_point_suite(1000, seed=0, tol=1e-10)
    record(acceptance_log, 11, "regular-point identity, 1000 tangent vectors", s.passed, s.seconds, 5,
           ", ".join(f"{k} {fmt(v)}" for k, v in s.measured.items()))

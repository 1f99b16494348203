"""Self-checking invariant suites.

Each suite draws its own random instances from a seed and returns a
:class:`SuiteResult` with the measured worst-case quantities next to the
tolerance it was held to. ``run_verify`` in :mod:`bnflow.experiments` runs
all of them; the acceptance tests call them one by one.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .data_model import DataDistribution, generate_gaussian, regularity_constants
from .geometry import (
    ManifoldMetric,
    TangentVector,
    manifold_gradient,
    metric_matrix,
    normalize_to_omega,
    project_to_tangent,
    regular_point_check,
    tangent_projection,
)
from .meanfield import speed_bound_audit, w2_bruteforce, w2_empirical


@dataclass
class SuiteResult:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    seconds: float = 0.0
    trajectories: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "seconds": self.seconds, **self.measured}


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def random_spd(d: int, rng: np.random.Generator, max_cond: float = 1e3) -> np.ndarray:
    """Random rotation of a spectrum log-uniform in ``[1, cond]``, cond log-uniform in ``[1, max_cond]``."""
    cond = float(np.exp(rng.uniform(0.0, np.log(max_cond))))
    lam = np.exp(rng.uniform(0.0, np.log(cond), size=d))
    lam[0], lam[-1] = 1.0, cond
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    s = (q * lam) @ q.T
    return 0.5 * (s + s.T)


def random_problem(rng: np.random.Generator, d: int, n: int, max_cond: float = 1e2) -> DataDistribution:
    sigma = random_spd(d, rng, max_cond)
    dist = generate_gaussian(d, n, sigma, int(rng.integers(2**32)))
    return dist.with_targets(rng.standard_normal(n))


# --------------------------------------------------------------------------
# gradients against finite differences


def fd_relative_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    """Worst ``|r_i - f_i| / max(|f_i|, max|f|)``.

    Components tiny compared with the largest one are judged against that
    largest one, since central differences carry absolute roundoff.
    """
    analytic, fd = np.ravel(analytic), np.ravel(fd)
    scale = np.maximum(np.abs(fd), np.max(np.abs(fd)))
    scale = np.where(scale > 0, scale, 1.0)
    return float(np.max(np.abs(analytic - fd) / scale))


@_timed
def gradient_suite(n_configs: int = 100, seed: int = 0, *, h: float = 1e-5, tol: float = 1e-5,
                   min_margin: float = 1e-3, n: int = 40, act: str = "leaky_relu") -> SuiteResult:
    """RHS of every mode versus central differences of the loss.

    Draws whose nearest kink is within ``min_margin`` (relative pre-activation)
    are redrawn: a kink inside the stencil makes the difference quotient
    meaningless for a piecewise-linear activation.
    """
    rng = np.random.default_rng(seed)
    worst = {"bn_euclidean": 0.0, "manifold": 0.0, "vanilla": 0.0}
    redraws = 0
    for _ in range(n_configs):
        while True:
            d = int(rng.integers(1, 6))
            m = int(rng.integers(1, 9))
            dist = random_problem(rng, d, n)
            ens = dyn.init_ensemble(m, d, rng, scale=float(np.exp(rng.uniform(-1, 1))), act=act)
            ens = ens.with_params(rng.standard_normal(m), ens.b)
            variants = {
                "bn_euclidean": ens,
                "manifold": dyn.normalize_ensemble(ens, dist.sigma),
                "vanilla": ens.with_params(ens.a, ens.b, mode="vanilla"),
            }
            if all(dyn.kink_margin(e, dist) > min_margin for e in variants.values()):
                break
            redraws += 1
        for mode, e in variants.items():
            adot, bdot = dyn.rhs(e, dist)
            fa, fb = dyn.fd_velocity(e, dist, h)
            worst[mode] = max(worst[mode], fd_relative_error(np.concatenate([adot, bdot.ravel()]),
                                                             np.concatenate([fa, fb.ravel()])))
    passed = all(v <= tol for v in worst.values())
    return SuiteResult("gradient", passed, {"max_rel_error": worst, "tol": tol, "h": h, "configs": n_configs,
                                            "kink_redraws": redraws})


# --------------------------------------------------------------------------
# flows


@_timed
def norm_conservation_suite(dist: DataDistribution, init: dyn.Ensemble, *, dt: float = 1e-3, t_end: float = 10.0,
                            tol: float = 1e-6, mean_field: bool = False) -> SuiteResult:
    traj = dyn.integrate(init, dist, ManifoldMetric(dist.sigma), "rk4", dt, t_end, "none", mean_field=mean_field)
    norms = np.linalg.norm(traj.b, axis=2)
    drift = float(np.max(np.abs(norms - norms[0])))
    res = SuiteResult("norm_conservation", drift <= tol,
                      {"max_norm_drift": drift, "tol": tol, "dt": dt, "t_end": t_end, "steps": len(traj) - 1})
    res.trajectories.append(traj)
    return res


@_timed
def equivalence_suite(dist: DataDistribution, init: dyn.Ensemble, *, dt: float = 1e-4, t_end: float = 2.0,
                      tol: float = 1e-4, order_dts=(0.1, 0.05), order_act: str = "tanh",
                      min_order_ratio: float = 8.0, mean_field: bool = False) -> SuiteResult:
    """Normalized BN flow versus manifold flow, plus an RK4 order check.

    The order check uses a smooth activation at coarse steps: with a kinked
    activation the right-hand side is discontinuous on finite samples and
    RK4 degrades to low order, and at the fine step the gap is at roundoff.
    """
    metric = ManifoldMetric(dist.sigma)
    rep = dyn.equivalence_report(init, dist, metric, dt, t_end, mean_field=mean_field)
    smooth = init.with_params(init.a, init.b, act=order_act)
    devs = [dyn.equivalence_report(smooth, dist, metric, h, t_end, mean_field=mean_field).max_param_deviation
            for h in order_dts]
    ratios = [d1 / d2 if d2 > 0 else float("inf") for d1, d2 in zip(devs, devs[1:])]
    passed = rep.max_param_deviation <= tol and all(r >= min_order_ratio for r in ratios)
    return SuiteResult("equivalence", passed, trajectories=list(rep.trajectories), measured={
        "max_param_deviation": rep.max_param_deviation, "max_loss_deviation": rep.max_loss_deviation,
        "tol": tol, "dt": dt, "t_end": t_end, "order_act": order_act, "order_dts": list(order_dts),
        "order_deviations": devs, "halving_ratios": ratios, "min_order_ratio": min_order_ratio,
    })


@_timed
def scale_law_suite(seed: int = 0, scales=(0.1, 2.0, 10.0), *, trials: int = 20, tol_v: float = 1e-10,
                    tol_f: float = 1e-12) -> SuiteResult:
    """Rescaling b by c divides its BN velocity by c and leaves outputs unchanged."""
    rng = np.random.default_rng(seed)
    worst_v = worst_f = 0.0
    for _ in range(trials):
        d = int(rng.integers(2, 6))
        dist = random_problem(rng, d, 200)
        e1 = dyn.init_ensemble(int(rng.integers(1, 9)), d, rng, act="relu")
        _, v1 = dyn.rhs_bn_euclidean(e1, dist)
        f1 = dyn.forward(e1, dist)
        for c in scales:
            e2 = e1.with_params(e1.a, c * e1.b)
            _, v2 = dyn.rhs_bn_euclidean(e2, dist)
            nv = np.linalg.norm(v1)
            if nv > 0:
                worst_v = max(worst_v, float(np.linalg.norm(v2 - v1 / c) / nv))
            worst_f = max(worst_f, float(np.max(np.abs(dyn.forward(e2, dist) - f1))))
    return SuiteResult("scale_law", worst_v <= tol_v and worst_f <= tol_f,
                       {"max_rel_velocity_error": worst_v, "max_forward_diff": worst_f, "scales": list(scales),
                        "tol_velocity": tol_v, "tol_forward": tol_f, "trials": trials})


# --------------------------------------------------------------------------
# geometry


def _random_point(rng, max_cond):
    d = int(rng.integers(2, 7))
    metric = ManifoldMetric(random_spd(d, rng, max_cond))
    b_bar = normalize_to_omega(rng.standard_normal(d), metric)
    return metric, b_bar


@_timed
def metric_suite(trials: int = 1000, seed: int = 0, *, max_cond: float = 1e3, tol_sym: float = 1e-10,
                 tol_rel: float = 1e-8) -> SuiteResult:
    """Symmetry and positivity of G on tangent pairs, ``G grad_m = P grad`` and tangency of grad_m."""
    rng = np.random.default_rng(seed)
    worst_sym = worst_rel = worst_tan = 0.0
    min_quad = np.inf
    for _ in range(trials):
        metric, b_bar = _random_point(rng, max_cond)
        G = metric_matrix(b_bar, metric)
        u = project_to_tangent(b_bar, rng.standard_normal(metric.d), metric)
        v = project_to_tangent(b_bar, rng.standard_normal(metric.d), metric)
        worst_sym = max(worst_sym, float(abs(u @ G @ v - v @ G @ u) / (1 + np.linalg.norm(u) * np.linalg.norm(v))))
        min_quad = min(min_quad, float(u @ G @ u / (u @ u)))
        g = rng.standard_normal(metric.d)
        gm = manifold_gradient(b_bar, g, metric).vec
        P = tangent_projection(b_bar, metric)
        worst_rel = max(worst_rel, float(np.linalg.norm(G @ gm - P @ g) / np.linalg.norm(g)))
        sb = metric.sigma @ b_bar
        worst_tan = max(worst_tan, float(abs(gm @ sb) / (np.linalg.norm(gm) * np.linalg.norm(sb))))
    passed = worst_sym <= tol_sym and min_quad > 0 and worst_rel <= tol_rel and worst_tan <= tol_sym
    return SuiteResult("metric", passed, {"max_symmetry_residual": worst_sym, "min_rayleigh_quotient": min_quad,
                                          "max_defining_relation_residual": worst_rel, "max_tangency_residual": worst_tan,
                                          "tol_symmetry": tol_sym, "tol_relation": tol_rel, "trials": trials,
                                          "max_cond": max_cond})


@_timed
def regular_point_suite(trials: int = 1000, seed: int = 0, *, max_cond: float = 1e3, tol: float = 1e-10) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    all_regular = True
    for _ in range(trials):
        metric, b_bar = _random_point(rng, max_cond)
        v = project_to_tangent(b_bar, rng.standard_normal(metric.d), metric)
        r = regular_point_check(b_bar, TangentVector(b_bar, v), metric)
        worst = max(worst, abs(r.quadratic_form - v @ v) / (v @ v))
        all_regular &= r.is_regular
    return SuiteResult("regular_point", worst <= tol and all_regular,
                       {"max_rel_form_residual": float(worst), "all_regular": bool(all_regular), "tol": tol,
                        "trials": trials})


# --------------------------------------------------------------------------
# optimal transport


@_timed
def ot_suite(trials: int = 200, seed: int = 0, *, max_size: int = 6, tol_axiom: float = 1e-9) -> SuiteResult:
    """Assignment W2 against the permutation minimum, plus metric axioms.

    Agreement is counted as exact when the squared costs are bitwise equal;
    ties between distinct optimal permutations may differ in the last bit,
    so the pass test allows 1e-12 relative.
    """
    rng = np.random.default_rng(seed)
    exact = 0
    worst_gap = worst_axiom = 0.0
    for _ in range(trials):
        k = int(rng.integers(1, max_size + 1))
        dim = int(rng.integers(2, 5))
        x, y, z = (rng.standard_normal((k, dim)) for _ in range(3))
        w = w2_empirical(x, y).distance
        bf = w2_bruteforce(x, y)
        exact += int(w == bf)
        worst_gap = max(worst_gap, abs(w - bf) / max(bf, 1.0))
        wyx = w2_empirical(y, x).distance
        wxx = w2_empirical(x, x).distance
        wxz, wzy = w2_empirical(x, z).distance, w2_empirical(z, y).distance
        worst_axiom = max(worst_axiom, abs(w - wyx), wxx, max(0.0, w - wxz - wzy))
    passed = worst_gap <= 1e-12 and worst_axiom <= tol_axiom
    return SuiteResult("ot", passed, {"exact_matches": exact, "trials": trials, "max_rel_gap_vs_bruteforce": worst_gap,
                                      "max_axiom_violation": worst_axiom, "tol_axiom": tol_axiom})


@_timed
def speed_bound_suite(trajectories, dist: DataDistribution) -> SuiteResult:
    reports = []
    for tr in trajectories:
        if tr.mode == "vanilla":
            continue
        consts = regularity_constants(dist, 1.0, tr.act, tr.loss)
        reports.append(speed_bound_audit(tr, consts))
    violations = sum(r.violated for r in reports)
    worst = max((r.max_adot_observed / r.bound for r in reports), default=0.0)
    return SuiteResult("speed_bound", violations == 0, {"trajectories": len(reports), "violations": violations,
                                                        "max_speed_over_bound": worst})


def manifold_trajectory(dist: DataDistribution, init: dyn.Ensemble, *, dt: float = 1e-2, t_end: float = 2.0):
    metric = ManifoldMetric(dist.sigma)
    return dyn.integrate(dyn.normalize_ensemble(init, dist.sigma), dist, metric, "rk4", dt, t_end, "renormalize",
                         mean_field=True)


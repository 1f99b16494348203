"""Experiment runners: the three figure studies, the verification suite and the convergence study.

Every runner takes an :class:`~bnflow.config.ExperimentConfig` and an output
directory, writes CSV/JSON there, and returns a :class:`RunResult` whose
``checks`` map assertion names to booleans.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import verify as V
from .config import ExperimentConfig
from .data_model import DataDistribution, get_activation, get_loss, regularity_constants, save_csv
from .geometry import ManifoldMetric, sigma_norms
from .meanfield import InitLaw, particle_limit_study, speed_bound_audit

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    experiment: str
    checks: dict[str, bool] = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    files: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "passed": self.passed, "checks": self.checks,
                "metrics": self.metrics, "files": self.files}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"not JSON serializable: {type(o)}")

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=default)
        fh.write("\n")


def _finish(result: RunResult, out: Path) -> RunResult:
    write_json(out / "summary.json", result.to_dict())
    result.files.append("summary.json")
    return result


def _unit(angle: np.ndarray) -> np.ndarray:
    return np.column_stack([np.cos(angle), np.sin(angle)])


# --------------------------------------------------------------------------
# fig1: direction-dependent speed


def probe_speeds(state: dyn.Ensemble, dist: DataDistribution, angles: np.ndarray, a_probe: float = 1.0) -> np.ndarray:
    """Speed of a probe neuron ``(a_probe, unit(angle))`` under the network's residual.

    BN: norm of the tangential BN velocity. Vanilla: norm of d/dt (b/|b|).
    The probe is not part of the network, so it does not change the residual.
    """
    u = _unit(angles)
    w = u if state.mode == "vanilla" else u / sigma_norms(u, dist.sigma)[:, None]
    residual = get_loss(state.loss).deriv(dyn.forward(state, dist), dist.targets)
    act = get_activation(state.act)
    g = a_probe * ((residual[:, None] * act.deriv(dist.samples @ w.T)).T @ dist.samples) / dist.n
    if state.mode == "vanilla":
        v = -g
    else:
        s = sigma_norms(u, dist.sigma)
        su = u @ dist.sigma
        v = -(g - su * (np.einsum("kj,kj->k", u, g) / s**2)[:, None]) / s[:, None]
    tangential = v - u * np.einsum("kj,kj->k", u, v)[:, None]
    return np.linalg.norm(tangential, axis=1)


def sector_masks(sigma: np.ndarray, angles: np.ndarray, halfwidth_deg: float) -> tuple[np.ndarray, np.ndarray]:
    """Directions within ``halfwidth`` of the minor / major eigen-axis (either sign)."""
    _, vecs = np.linalg.eigh(sigma)
    def near(axis):
        ang = math.atan2(axis[1], axis[0])
        diff = np.abs((angles - ang + np.pi / 2) % np.pi - np.pi / 2)
        return diff <= math.radians(halfwidth_deg) + 1e-12
    return near(vecs[:, 0]), near(vecs[:, -1])


def _init_fig_ensemble(cfg: ExperimentConfig, rng, mode: str) -> dyn.Ensemble:
    e = cfg.ensemble
    return dyn.init_ensemble(int(e["m"]), 2, rng, scale=float(e["init_scales"][0]), mode=mode, act=e["act"],
                             loss=e["loss"])


def _fig1_profile(cfg: ExperimentConfig, dist: DataDistribution, snapshots: bool):
    """Speed profiles averaged over ``repetitions`` independent initializations.

    A single network's residual is far from isotropic, so one run gives a very
    noisy profile; the average over initializations is what isotropy constrains.
    Repetition 0 is continued to the snapshot iterations when ``snapshots``.
    """
    p = cfg.params
    angles = np.linspace(0, 2 * np.pi, int(p["n_angles"]), endpoint=False)
    it = int(p["speed_iteration"])
    lr, mean_field = float(p["lr"]), bool(cfg.integration["mean_field"])
    snap_its = sorted(set(int(i) for i in p["snapshot_iterations"]))
    profiles = {mode: [] for mode in ("bn_euclidean", "vanilla")}
    snaps = {}
    for rep in range(int(p["repetitions"])):
        for mode in profiles:
            ens = _init_fig_ensemble(cfg, np.random.default_rng([cfg.seed, rep]), mode)
            keep = snapshots and rep == 0
            n_iter = max([it] + snap_its) if keep else it
            _, got = dyn.gd_run(ens, dist, lr, n_iter, mean_field=mean_field,
                                snapshot_at=tuple(snap_its + [it]) if keep else (it,))
            profiles[mode].append(probe_speeds(got[it], dist, angles))
            if keep:
                snaps[mode] = got
    mean = {mode: np.mean(v, axis=0) for mode, v in profiles.items()}
    minor, major = sector_masks(dist.sigma, angles, float(p["sector_halfwidth_deg"]))
    ratios = {mode: float(np.median(v[minor]) / np.median(v[major])) for mode, v in mean.items()}
    return angles, mean, profiles, snaps, ratios


def _write_profile(path: Path, angles, mean, profiles) -> None:
    write_csv(path, ["angle_rad", "angle_deg", "speed_bn", "speed_vanilla", "speed_bn_rep0", "speed_vanilla_rep0"],
              zip(angles, np.degrees(angles), mean["bn_euclidean"], mean["vanilla"],
                  profiles["bn_euclidean"][0], profiles["vanilla"][0]))


def run_fig1(cfg: ExperimentConfig, out: Path) -> RunResult:
    p = cfg.params
    res = RunResult("fig1")
    dist = cfg.build_data()
    if dist.d != 2:
        raise ValueError("fig1 needs two-dimensional data")
    angles, mean, profiles, runs, ratios = _fig1_profile(cfg, dist, snapshots=True)
    _write_profile(out / "speed_profile.csv", angles, mean, profiles)
    rows = []
    for mode, snaps in runs.items():
        for it in sorted(set(int(i) for i in p["snapshot_iterations"])):
            e = snaps[it]
            w = e.b / np.linalg.norm(e.b, axis=1, keepdims=True)
            for k in range(e.m):
                rows.append((it, mode, k, math.atan2(w[k, 1], w[k, 0]), e.a[k], np.linalg.norm(e.b[k]), w[k, 0], w[k, 1]))
    write_csv(out / "directions.csv", ["iteration", "model", "k", "angle_rad", "a", "norm_b", "u1", "u2"], rows)
    res.files += ["speed_profile.csv", "directions.csv"]
    res.metrics.update(sector_ratio_bn=ratios["bn_euclidean"], sector_ratio_vanilla=ratios["vanilla"],
                       lr=float(p["lr"]), speed_iteration=int(p["speed_iteration"]),
                       repetitions=int(p["repetitions"]), sigma=dist.sigma.tolist())
    res.checks["bn_minor_over_major_gt_min_ratio"] = ratios["bn_euclidean"] > float(p["min_ratio"])
    if p.get("control", True):
        c_angles, c_mean, c_prof, _, c_ratios = _fig1_profile(cfg, cfg.build_data(sigma=np.eye(2)), snapshots=False)
        lo, hi = p["control_range"]
        _write_profile(out / "speed_profile_control.csv", c_angles, c_mean, c_prof)
        res.files.append("speed_profile_control.csv")
        res.metrics["control_sector_ratio_bn"] = c_ratios["bn_euclidean"]
        res.metrics["control_sector_ratio_vanilla"] = c_ratios["vanilla"]
        res.checks["isotropic_control_ratio_in_range"] = lo <= c_ratios["bn_euclidean"] <= hi
    return _finish(res, out)


# --------------------------------------------------------------------------
# fig2: magnitude-dependent speed


def angle_to_nearest(b: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Angle (rad) between each row of ``b`` and the closest unit row of ``directions``."""
    u = b / np.linalg.norm(b, axis=1, keepdims=True)
    cos = np.clip(u @ directions.T, -1.0, 1.0)
    return np.arccos(cos.max(axis=1))


def fig2_init(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[dyn.Ensemble, np.ndarray]:
    """Groups share directions and output weights and differ only in |b|."""
    e, p = cfg.ensemble, cfg.params
    m, scales = int(e["m"]), [float(s) for s in e["init_scales"]]
    a = rng.choice([-1.0, 1.0], size=m)
    if p.get("a_init", "positive") == "positive":
        a = np.abs(a)
    # small output weights give a feature-learning phase where directions align with the teacher
    a = float(p.get("a_scale", 1.0)) * a
    u = rng.standard_normal((m, 2))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    A = np.concatenate([a] * len(scales))
    B = np.concatenate([s * u for s in scales])
    group = np.repeat(np.arange(len(scales)), m)
    return dyn.Ensemble(a=A, b=B, mode="bn_euclidean", act=e["act"], loss=e["loss"]), group


def run_fig2(cfg: ExperimentConfig, out: Path) -> RunResult:
    p, e = cfg.params, cfg.ensemble
    res = RunResult("fig2")
    dist = cfg.build_data()
    teacher = np.array([b for _, b in cfg.teacher_spec().teacher_neurons], dtype=float)
    if teacher.size == 0:
        raise ValueError("fig2 needs teacher neurons to measure convergence against")
    teacher /= np.linalg.norm(teacher, axis=1, keepdims=True)
    ens, group = fig2_init(cfg, np.random.default_rng(cfg.seed))
    scales = [float(s) for s in e["init_scales"]]
    mean_field = bool(cfg.integration["mean_field"])
    lr, n_iter, thr = float(p["lr"]), int(p["iterations"]), float(p["angle_threshold"])

    _, bdot0 = dyn.rhs_bn_euclidean(ens, dist, mean_field=mean_field)
    speed0 = np.linalg.norm(bdot0, axis=1)
    m = int(e["m"])
    pair_ratio = speed0[:m] / speed0[m:2 * m] if len(scales) > 1 else np.ones(m)

    first = np.full(ens.m, -1, dtype=int)
    snaps = set(int(i) for i in p["snapshot_iterations"])
    snap_rows, track_rows = [], []
    cur = ens
    for it in range(n_iter + 1):
        ang = angle_to_nearest(cur.b, teacher)
        first[(first < 0) & (ang < thr)] = it
        if it in snaps:
            for k in range(cur.m):
                u = cur.b[k] / np.linalg.norm(cur.b[k])
                snap_rows.append((it, k, int(group[k]), math.atan2(u[1], u[0]), cur.a[k], np.linalg.norm(cur.b[k]), ang[k]))
            for gi in range(len(scales)):
                track_rows.append((it, gi, scales[gi], float(np.median(ang[group == gi]))))
        if it == n_iter:
            break
        cur = dyn.gd_step(cur, dist, lr=lr, mean_field=mean_field)

    def med_first(gi):
        f = first[group == gi].astype(float)
        f[f < 0] = np.inf
        return float(np.median(f))

    medians = [med_first(gi) for gi in range(len(scales))]
    reached = [float(np.mean(first[group == gi] >= 0)) for gi in range(len(scales))]
    write_csv(out / "group_convergence.csv", ["iteration", "group", "init_scale", "median_angle_rad"], track_rows)
    write_csv(out / "directions.csv", ["iteration", "k", "group", "angle_rad", "a", "norm_b", "angle_to_teacher"], snap_rows)
    write_csv(out / "first_passage.csv", ["k", "group", "init_scale", "first_passage_iteration", "speed_t0"],
              [(k, int(group[k]), scales[group[k]], int(first[k]), speed0[k]) for k in range(ens.m)])
    res.files += ["group_convergence.csv", "directions.csv", "first_passage.csv"]
    # None = the group median never reached the threshold within the budget
    res.metrics.update(median_first_passage=[v if math.isfinite(v) else None for v in medians], reached_fraction=reached, init_scales=scales, lr=lr, angle_threshold=thr,
                       speed_ratio_t0_median=float(np.median(pair_ratio)),
                       speed_ratio_t0_range=[float(pair_ratio.min()), float(pair_ratio.max())])
    if len(scales) == 2:
        c = scales[1] / scales[0]
        if abs(c - 1.0) < 1e-12:
            res.checks["equal_scales_medians_within_20pct"] = (
                math.isfinite(medians[0]) and abs(medians[0] - medians[1]) <= 0.2 * max(medians[0], medians[1], 1)
            )
        else:
            small, large = (0, 1) if c > 1 else (1, 0)
            res.checks["small_group_first_passage_earlier"] = math.isfinite(medians[small]) and medians[small] < medians[large]
            expect = max(c, 1 / c)
            ratio = float(np.median(pair_ratio)) if c > 1 else float(np.median(1 / pair_ratio))
            res.checks["t0_speed_ratio_within_10pct"] = abs(ratio - expect) <= 0.1 * expect
    return _finish(res, out)


# --------------------------------------------------------------------------
# fig3: first-step amplification


def fig3_init(cfg: ExperimentConfig, d: int, rng: np.random.Generator) -> dyn.Ensemble:
    """``m`` neurons: ``m / len(scales)`` shared (a, direction) pairs at every scale."""
    e = cfg.ensemble
    scales = [float(s) for s in e["init_scales"]]
    m = int(e["m"])
    if m % len(scales):
        raise ValueError(f"m={m} is not a multiple of the {len(scales)} init scales")
    n_dir = m // len(scales)
    a = rng.choice([-1.0, 1.0], size=n_dir)
    u = rng.standard_normal((n_dir, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    A = np.tile(a, len(scales))
    B = np.concatenate([s * u for s in scales])
    return dyn.Ensemble(a=A, b=B, mode="bn_euclidean", act=e["act"], loss=e["loss"])


def first_step_table(ens: dyn.Ensemble, dist: DataDistribution, lr: float, mean_field: bool) -> dict[str, np.ndarray]:
    _, bdot = dyn.rhs_bn_euclidean(ens, dist, mean_field=mean_field)
    after = dyn.gd_step(ens, dist, lr=lr, mean_field=mean_field)
    _, bdot2 = dyn.rhs_bn_euclidean(after, dist, mean_field=mean_field)
    pre = np.linalg.norm(ens.b, axis=1)
    post = np.linalg.norm(after.b, axis=1)
    sp = np.linalg.norm(bdot, axis=1)
    tang = np.abs(np.einsum("kj,kj->k", ens.b, bdot)) / np.maximum(pre * sp, 1e-300)
    lhs = post**2
    rhs = pre**2 + lr**2 * sp**2
    return {
        "pre": pre, "post": post, "speed": sp, "tangency": tang,
        "pythagoras_rel": np.abs(lhs - rhs) / rhs,
        "rel_step1": lr * sp / pre,
        "speed2": np.linalg.norm(bdot2, axis=1),
        "rel_step2": lr * np.linalg.norm(bdot2, axis=1) / post,
    }


def run_fig3(cfg: ExperimentConfig, out: Path) -> RunResult:
    p, e = cfg.params, cfg.ensemble
    res = RunResult("fig3")
    dist = cfg.build_data()
    ens = fig3_init(cfg, dist.d, np.random.default_rng(cfg.seed))
    lr = float(p["lr"])
    tab = first_step_table(ens, dist, lr, bool(cfg.integration["mean_field"]))
    scales = [float(s) for s in e["init_scales"]]
    n_dir = ens.m // len(scales)
    write_csv(out / "first_step.csv",
              ["k", "direction", "init_scale", "norm_pre", "norm_post", "speed", "tangency_rel", "pythagoras_rel",
               "rel_step1", "speed_step2", "rel_step2"],
              [(k, k % n_dir, scales[k // n_dir], tab["pre"][k], tab["post"][k], tab["speed"][k], tab["tangency"][k],
                tab["pythagoras_rel"][k], tab["rel_step1"][k], tab["speed2"][k], tab["rel_step2"][k]) for k in range(ens.m)])
    res.files.append("first_step.csv")

    moving = tab["speed"] > 0
    # |b|*|bdot| is scale-free, so the crossover norm sqrt(lr |b| |bdot|) is per direction
    G = (tab["pre"] * tab["speed"]).reshape(len(scales), n_dir)[0]
    crossover = np.sqrt(lr * G)
    reversed_ok, n_pairs = True, 0
    post = tab["post"].reshape(len(scales), n_dir)
    order = np.argsort(scales)
    for j in range(n_dir):
        small = [i for i in order if scales[i] < crossover[j]]
        for i1, i2 in zip(small, small[1:]):
            n_pairs += 1
            reversed_ok &= bool(post[i1, j] > post[i2, j])
    res.metrics.update(
        lr=lr, crossover_norm=crossover.tolist(), reversal_pairs=n_pairs,
        max_tangency=float(tab["tangency"].max()), max_pythagoras_rel=float(tab["pythagoras_rel"].max()),
        max_rel_step2=float(tab["rel_step2"].max()), max_rel_step1=float(tab["rel_step1"].max()),
        max_speed_step1=float(tab["speed"].max()), max_speed_step2=float(tab["speed2"].max()),
    )
    if np.any(moving):
        res.checks["every_post_norm_larger"] = bool(np.all(tab["post"][moving] > tab["pre"][moving]))
    else:
        res.metrics["note"] = "zero velocity: norm growth check waived"
    res.checks["post_order_reversed_below_crossover"] = reversed_ok
    res.checks["tangency_below_1e-10"] = bool(tab["tangency"].max() <= 1e-10)
    res.checks["pythagoras_within_1e-12"] = bool(tab["pythagoras_rel"].max() <= 1e-12)
    # blow-up = the fastest neuron gets faster after the amplifying step
    res.checks["no_blowup_second_step"] = bool(
        np.all(np.isfinite(tab["speed2"])) and tab["speed2"].max() <= tab["speed"].max()
    )
    return _finish(res, out)


# --------------------------------------------------------------------------
# verification suite


def run_verify(cfg: ExperimentConfig, out: Path) -> RunResult:
    p, e = cfg.params, cfg.ensemble
    res = RunResult("verify")
    dist = cfg.build_data()
    rng = np.random.default_rng(cfg.seed)
    # the flow equivalence needs unit-norm raw weights, whatever the configured scale
    init = dyn.init_ensemble(int(e["m"]), dist.d, rng, scale=1.0, act=e["act"], loss=e["loss"])
    seed = cfg.seed
    suites = [
        V.gradient_suite(int(p["gradient_configs"]), seed),
        V.norm_conservation_suite(dist, init, dt=float(p["norm_dt"]), t_end=float(p["norm_t_end"])),
        V.equivalence_suite(dist, init, dt=float(p["equiv_dt"]), t_end=float(p["equiv_t_end"]),
                            order_dts=tuple(float(h) for h in p["order_dts"]), order_act=p["order_act"]),
        V.metric_suite(int(p["metric_trials"]), seed),
        V.scale_law_suite(seed),
        V.ot_suite(int(p["ot_trials"]), seed),
        V.regular_point_suite(int(p["regular_trials"]), seed),
    ]
    trajs = [tr for s in suites for tr in s.trajectories] + [V.manifold_trajectory(dist, init)]
    suites.append(V.speed_bound_suite(trajs, dist))
    for s in suites:
        res.checks[s.name] = bool(s.passed)
        log.info("%s: %s (%.1fs)", s.name, "pass" if s.passed else "FAIL", s.seconds)
    report = {"seed": seed, "suites": [s.to_dict() for s in suites]}
    write_json(out / "verify.json", report)
    res.files.append("verify.json")
    res.metrics["seconds"] = {s.name: s.seconds for s in suites}
    return _finish(res, out)


# --------------------------------------------------------------------------
# convergence study


def _law(cfg: ExperimentConfig) -> InitLaw:
    p, e = cfg.params, cfg.ensemble
    return InitLaw(kind=p["init_kind"], a_dist=p["a_dist"], base_m=int(p["base_m"]), act=e["act"], loss=e["loss"])


def _study_one_seed(args):
    cfg, seed = args
    p = cfg.params
    dist = cfg.build_data()
    return particle_limit_study(_law(cfg), p["m_list"], p["t_grid"], dist, seeds=[seed],
                                paired_seeds=bool(p["paired_seeds"]), dt=float(p["dt"]),
                                scheme=cfg.integration["scheme"])


def run_convergence_study(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> RunResult:
    p = cfg.params
    res = RunResult("convergence")
    seeds = [int(s) for s in p["seeds"]]
    tasks = [(cfg, s) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            tables = list(pool.map(_study_one_seed, tasks))
    else:
        tables = [_study_one_seed(t) for t in tasks]
    table = tables[0]
    for t in tables[1:]:
        table.rows.extend(t.rows)
        table.trajectories.extend(t.trajectories)
    write_csv(out / "convergence.csv", ["m", "m_prime", "t", "seed", "w2"],
              [(r["m"], r["m_prime"], r["t"], r["seed"], r["w2"]) for r in table.rows])
    summary = table.summary()
    dist = cfg.build_data()
    audits = [speed_bound_audit(tr, regularity_constants(dist, 1.0, cfg.ensemble["act"], cfg.ensemble["loss"]))
              for tr in table.trajectories]
    summary["speed_bound_violations"] = sum(a.violated for a in audits)
    write_json(out / "convergence_summary.json", summary)
    res.files += ["convergence.csv", "convergence_summary.json"]
    res.metrics.update(summary)
    if p["init_kind"] == "duplicate":
        res.checks["duplicated_init_zero_distance"] = all(r["w2"] <= 1e-12 for r in table.rows)
    else:
        res.checks["decrease_fraction_above_min"] = summary["decrease_fraction"] > float(p["min_decrease_fraction"])
    res.checks["speed_bound_never_violated"] = summary["speed_bound_violations"] == 0
    return _finish(res, out)


# --------------------------------------------------------------------------
# generate / simulate


def run_generate(cfg: ExperimentConfig, out: Path) -> RunResult:
    dist = cfg.build_data()
    save_csv(dist, out / "data.csv")
    res = RunResult("generate", files=["data.csv"])
    res.metrics.update(n=dist.n, d=dist.d, sigma=dist.sigma.tolist())
    return _finish(res, out)


def run_simulate(cfg: ExperimentConfig, out: Path) -> RunResult:
    e, integ = cfg.ensemble, cfg.integration
    dist = cfg.build_data()
    mode = cfg.params.get("mode", "bn_euclidean")
    ens = dyn.init_ensemble(int(e["m"]), dist.d, np.random.default_rng(cfg.seed), scale=float(e["init_scales"][0]),
                            mode="bn_euclidean", act=e["act"], loss=e["loss"])
    metric = ManifoldMetric(dist.sigma)
    if mode == "manifold":
        ens = dyn.normalize_ensemble(ens, metric.sigma)
    elif mode == "vanilla":
        ens = ens.with_params(ens.a, ens.b, mode="vanilla")
    traj = dyn.integrate(ens, dist, metric, integ["scheme"], float(integ["dt"]), float(integ["t_end"]),
                         integ["retraction"], mean_field=bool(integ["mean_field"]),
                         record_every=int(cfg.params.get("record_every", 1)))
    traj.to_csv(out / "trajectory.csv")
    res = RunResult("simulate", files=["trajectory.csv"])
    res.metrics.update(mode=mode, loss_initial=float(traj.losses[0]), loss_final=float(traj.losses[-1]),
                       max_loss_increase=traj.max_loss_increase, steps=len(traj) - 1)
    if mode != "vanilla":
        audit = speed_bound_audit(traj, regularity_constants(dist, 1.0, e["act"], e["loss"]))
        res.metrics["speed_bound"] = {"max_adot": audit.max_adot_observed, "bound": audit.bound}
        res.checks["speed_bound_holds"] = not audit.violated
    return _finish(res, out)

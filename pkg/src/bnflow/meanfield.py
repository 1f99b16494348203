"""Empirical-measure view of the network: pushforward, velocity field,
exact 2-Wasserstein distances, and particle-limit diagnostics.

W2 uses the ambient Euclidean distance on R^{d+1} between (a, b_bar) atoms as
ground cost, not the geodesic distance of the metric G.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .data_model import DataDistribution, RegularityConstants, get_activation
from .dynamics import Ensemble, TrajectoryLog, integrate, rhs_manifold
from .geometry import ON_OMEGA_TOL, ManifoldMetric, sigma_norms

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform atoms ``(a_k, b_bar_k)`` on R x Omega."""

    a: np.ndarray
    b_bar: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(-1)
        b = np.array(self.b_bar, dtype=float)
        if b.ndim != 2 or b.shape[0] != a.shape[0] or a.shape[0] == 0:
            raise ValueError("empirical measure needs m >= 1 atoms with matching a and b_bar")
        off = np.max(np.abs(sigma_norms(b, np.asarray(self.sigma)) - 1.0))
        if off > ON_OMEGA_TOL:
            raise ValueError(f"atoms are off Omega by {off:.3g}")
        for arr in (a, b):
            arr.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b_bar", b)

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.m, 1.0 / self.m)

    @property
    def points(self) -> np.ndarray:
        """Atoms as rows of R^{d+1}: ``(a, b_bar)``."""
        return np.column_stack([self.a, self.b_bar])


def pushforward(ens: Ensemble, metric: ManifoldMetric) -> EmpiricalMeasure:
    """Image of the ensemble under ``(a, b) -> (a, b / |b|_Sigma)``."""
    b = ens.b
    if np.any(np.linalg.norm(b, axis=1) == 0):
        raise ValueError("cannot normalize a zero weight vector")
    return EmpiricalMeasure(a=ens.a, b_bar=b / sigma_norms(b, metric.sigma)[:, None], sigma=metric.sigma)


def measure_forward(measure: EmpiricalMeasure, dist: DataDistribution, act: str) -> np.ndarray:
    """``f0(x, rho_bar) = mean_k a_k act(b_bar_k^T x)`` on every sample."""
    return get_activation(act).fn(dist.samples @ measure.b_bar.T) @ measure.a / measure.m


def as_ensemble(measure: EmpiricalMeasure, act: str, loss: str = "squared") -> Ensemble:
    return Ensemble(a=measure.a, b=measure.b_bar, mode="manifold", act=act, loss=loss)


def velocity_field(
    measure: EmpiricalMeasure, dist: DataDistribution, metric: ManifoldMetric, act: str, loss: str = "squared"
) -> tuple[np.ndarray, np.ndarray]:
    """Per-atom mean-field velocity on R x Omega (no 1/m factor)."""
    return rhs_manifold(as_ensemble(measure, act, loss), dist, metric, mean_field=True)


# --------------------------------------------------------------------------
# optimal transport


@dataclass(frozen=True)
class TransportPlan:
    """Coupling between two uniform clouds.

    ``matrix[i, j]`` is the mass moved from atom i to atom j; for equal sizes
    ``assignment[i]`` is the partner of atom i.
    """

    matrix: np.ndarray
    cost: float
    assignment: np.ndarray | None = None


@dataclass(frozen=True)
class W2Result:
    distance: float
    plan: TransportPlan


def pairwise_sq_dist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _points(mu) -> np.ndarray:
    return mu.points if isinstance(mu, EmpiricalMeasure) else np.atleast_2d(np.asarray(mu, dtype=float))


def w2_empirical(mu, nu) -> W2Result:
    """Exact W2 between uniform empirical measures.

    Equal sizes reduce to an assignment problem; otherwise the transport
    linear program is solved with HiGHS. ``mu``/``nu`` may be
    :class:`EmpiricalMeasure` or raw (m, k) point arrays.
    """
    x, y = _points(mu), _points(nu)
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("W2 of an empty measure is undefined")
    if x.shape[1] != y.shape[1]:
        raise ValueError("measures live in different dimensions")
    C = pairwise_sq_dist(x, y)
    n1, n2 = C.shape
    if n1 == n2:
        rows, cols = linear_sum_assignment(C)
        cost = float(np.sum(C[rows, cols]) / n1)
        plan = np.zeros_like(C)
        plan[rows, cols] = 1.0 / n1
        return W2Result(np.sqrt(max(cost, 0.0)), TransportPlan(plan, cost, cols))
    plan = _transport_lp(C)
    cost = float(np.sum(plan * C))
    return W2Result(np.sqrt(max(cost, 0.0)), TransportPlan(plan, cost))


def _transport_lp(C: np.ndarray) -> np.ndarray:
    n1, n2 = C.shape
    # row sums 1/n1, column sums 1/n2 over the flattened (row-major) plan
    A_rows = np.kron(np.eye(n1), np.ones((1, n2)))
    A_cols = np.kron(np.ones((1, n1)), np.eye(n2))
    A = np.vstack([A_rows, A_cols])[:-1]  # one constraint is redundant
    b = np.concatenate([np.full(n1, 1.0 / n1), np.full(n2, 1.0 / n2)])[:-1]
    res = linprog(C.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return np.maximum(res.x.reshape(n1, n2), 0.0)


def w2_bruteforce(x: np.ndarray, y: np.ndarray) -> float:
    """Minimum over all permutations; for testing small equal-size clouds."""
    C = pairwise_sq_dist(_points(x), _points(y))
    n = C.shape[0]
    idx = np.arange(n)
    best = min(float(np.sum(C[idx, list(p)])) for p in itertools.permutations(range(n)))
    return float(np.sqrt(best / n))


# --------------------------------------------------------------------------
# speed bound


@dataclass(frozen=True)
class SpeedBoundReport:
    r: float
    r0: float
    A: float
    B: float
    max_adot_observed: float
    t_r_lower: float
    within_support: bool
    bound_holds: bool

    @property
    def bound(self) -> float:
        return self.A + self.B * self.r

    @property
    def violated(self) -> bool:
        return not (self.within_support and self.bound_holds)


def speed_bound_audit(
    traj: TrajectoryLog, consts: RegularityConstants, r0: float | None = None, r: float | None = None
) -> SpeedBoundReport:
    """Check every logged output-weight speed against ``A + B r``.

    Speeds are compared in the mean-field normalization (per-particle, no
    1/m), which is the larger of the two conventions. ``r`` defaults to the
    largest ``|a|`` seen; ``r0`` to the largest initial ``|a|``.
    """
    if traj.mode == "vanilla":
        raise ValueError("the speed bound concerns normalized weights; vanilla trajectories are not covered")
    m = traj.a.shape[1]
    speeds = np.abs(traj.adot) * (1.0 if traj.mean_field else m)
    r_obs = float(np.max(np.abs(traj.a)))
    r0 = float(np.max(np.abs(traj.a[0]))) if r0 is None else float(r0)
    r = r_obs if r is None else float(r)
    max_speed = float(np.max(speeds))
    within = r_obs <= r * (1 + 1e-12)
    A, B = consts.A, consts.B
    t_lower = (r - r0) / (A + B * r) if r > r0 else 0.0
    return SpeedBoundReport(
        r=r,
        r0=r0,
        A=A,
        B=B,
        max_adot_observed=max_speed,
        t_r_lower=t_lower,
        within_support=within,
        bound_holds=max_speed <= A + B * r,
    )


# --------------------------------------------------------------------------
# particle limit


@dataclass(frozen=True)
class InitLaw:
    """How to sample an initial width-m ensemble.

    ``kind="iid"``: ``a`` from ``a_dist`` (``rademacher`` or ``uniform`` on
    [-1, 1]) times ``a_scale``, ``b`` uniform on the unit sphere.
    ``kind="duplicate"``: draw ``base_m`` atoms once and repeat them
    ``m / base_m`` times, so every width represents the same measure.
    """

    kind: str = "iid"
    a_dist: str = "uniform"
    a_scale: float = 1.0
    base_m: int = 16
    act: str = "leaky_relu"
    loss: str = "squared"

    def _draw(self, k: int, d: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if self.a_dist == "rademacher":
            a = rng.choice([-1.0, 1.0], size=k)
        elif self.a_dist == "uniform":
            a = rng.uniform(-1.0, 1.0, size=k)
        else:
            raise ValueError(f"unknown a_dist {self.a_dist!r}")
        b = rng.standard_normal((k, d))
        b /= np.linalg.norm(b, axis=1, keepdims=True)
        return self.a_scale * a, b

    def _ensemble(self, a, b) -> Ensemble:
        return Ensemble(a=a, b=b, mode="bn_euclidean", act=self.act, loss=self.loss)

    def sample(self, m: int, d: int, rng: np.random.Generator) -> Ensemble:
        if self.kind == "iid":
            return self._ensemble(*self._draw(m, d, rng))
        if self.kind == "duplicate":
            if m % self.base_m:
                raise ValueError(f"width {m} is not a multiple of base_m={self.base_m}")
            a, b = self._draw(self.base_m, d, rng)
            reps = m // self.base_m
            return self._ensemble(np.tile(a, reps), np.tile(b, (reps, 1)))
        raise ValueError(f"unknown init law {self.kind!r}")

    def sample_nested(self, m_list: list[int], d: int, rng: np.random.Generator) -> dict[int, Ensemble]:
        """Coupled draws: iid widths share leading atoms; duplicate widths share the base atoms."""
        if self.kind == "duplicate":
            if any(m % self.base_m for m in m_list):
                raise ValueError(f"widths must be multiples of base_m={self.base_m}")
            a, b = self._draw(self.base_m, d, rng)
            return {m: self._ensemble(np.tile(a, m // self.base_m), np.tile(b, (m // self.base_m, 1)))
                    for m in m_list}
        a, b = self._draw(max(m_list), d, rng)
        return {m: self._ensemble(a[:m], b[:m]) for m in m_list}


@dataclass
class ConvergenceTable:
    rows: list[dict] = field(default_factory=list)
    trajectories: list[TrajectoryLog] = field(default_factory=list, repr=False)

    def cells(self) -> list[tuple[float, float]]:
        """(W2 at width pair i, W2 at pair i+1) for every seed, time and consecutive pair."""
        out = []
        key = {}
        for row in self.rows:
            key.setdefault((row["seed"], row["t"]), {})[row["m"]] = row["w2"]
        for per_m in key.values():
            ms = sorted(per_m)
            out.extend((per_m[m1], per_m[m2]) for m1, m2 in zip(ms, ms[1:]))
        return out

    def decrease_fraction(self) -> float:
        cells = self.cells()
        if not cells:
            return float("nan")
        return sum(w2 < w1 for w1, w2 in cells) / len(cells)

    def medians(self) -> dict[tuple[int, float], float]:
        groups: dict[tuple[int, float], list[float]] = {}
        for row in self.rows:
            groups.setdefault((row["m"], row["t"]), []).append(row["w2"])
        return {k: float(np.median(v)) for k, v in sorted(groups.items())}

    def median_trend(self) -> bool:
        """True when the median W2 decreases with m at every time."""
        med = self.medians()
        times = sorted({t for _, t in med})
        ok = True
        for t in times:
            vals = [med[(m, tt)] for (m, tt) in med if tt == t]
            ok &= all(v2 < v1 for v1, v2 in zip(vals, vals[1:]))
        return bool(ok)

    def summary(self) -> dict:
        return {
            "n_cells": len(self.cells()),
            "decrease_fraction": self.decrease_fraction(),
            "median_trend_decreasing": self.median_trend(),
            "medians": [{"m": m, "t": t, "median_w2": v} for (m, t), v in self.medians().items()],
        }


def _run_width(ens, dist, metric, t_grid, dt, scheme):
    t_end = max(t_grid)
    if t_end <= 0:
        return {0.0: pushforward(ens, metric)}, None
    traj = integrate(ens, dist, metric, scheme, dt, t_end, "renormalize", mean_field=True)
    out = {}
    for t in t_grid:
        i = int(np.argmin(np.abs(traj.times - t)))
        if abs(traj.times[i] - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"time {t} is not on the integration grid (dt={dt})")
        out[t] = pushforward(traj.state(i), metric)
    return out, traj


def particle_limit_study(
    law: InitLaw,
    m_list: list[int],
    t_grid: list[float],
    dist: DataDistribution,
    *,
    seeds: list[int] = (0,),
    paired_seeds: bool = False,
    dt: float = 0.01,
    scheme: str = "rk4",
    metric: ManifoldMetric | None = None,
) -> ConvergenceTable:
    """W2 between consecutive widths of mean-field trajectories.

    With ``paired_seeds`` the widths of one repetition are nested: a single
    draw at the largest width whose leading atoms form the smaller clouds.
    Otherwise each width gets an independent draw from a derived seed.
    ``duplicate`` laws always share their base atoms across widths.
    Dynamics use the mean-field (per-particle) velocity scaling.
    """
    m_list = list(m_list)
    if any(m2 <= m1 for m1, m2 in zip(m_list, m_list[1:])):
        raise ValueError("m_list must be strictly increasing")
    metric = metric or ManifoldMetric(dist.sigma)
    table = ConvergenceTable()
    for seed in seeds:
        if paired_seeds or law.kind == "duplicate":
            inits = law.sample_nested(m_list, dist.d, np.random.default_rng(seed))
        else:
            inits = {m: law.sample(m, dist.d, np.random.default_rng([seed, j])) for j, m in enumerate(m_list)}
        clouds = {}
        for m in m_list:
            clouds[m], traj = _run_width(inits[m], dist, metric, t_grid, dt, scheme)
            if traj is not None:
                table.trajectories.append(traj)
        for m1, m2 in zip(m_list, m_list[1:]):
            for t in t_grid:
                w2 = w2_empirical(clouds[m1][t], clouds[m2][t]).distance
                table.rows.append({"m": m1, "m_prime": m2, "t": float(t), "seed": seed, "w2": w2})
    return table

"""Gradient-flow right-hand sides, integrators and the BN/manifold equivalence harness.

Three parametrizations of the same two-layer network are supported:

``bn_euclidean``
    raw weights ``b`` in R^d, normalized by the population BN inside the model.
``manifold``
    normalized weights ``b_bar`` living on Omega, moved by the manifold gradient.
``vanilla``
    no normalization at all.

Velocities are negative gradients. With ``mean_field=True`` the ``1/m`` factor
of the finite-width gradient is dropped, giving per-particle velocities.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .data_model import DataDistribution, get_activation, get_loss
from .geometry import (
    REPROJECT_TOL,
    ManifoldMetric,
    OffManifoldError,
    manifold_gradient_batch,
    sigma_norms,
)

log = logging.getLogger(__name__)

MODES = ("bn_euclidean", "manifold", "vanilla")
MIN_BN_NORM = 1e-12


class IntegrationError(RuntimeError):
    def __init__(self, step: int, msg: str):
        super().__init__(f"step {step}: {msg}")
        self.step = step


@dataclass(frozen=True)
class Neuron:
    a: float
    b: np.ndarray


@dataclass(frozen=True)
class Ensemble:
    """Width-m network stored as arrays ``a`` (m,) and ``b`` (m, d)."""

    a: np.ndarray
    b: np.ndarray
    mode: str = "bn_euclidean"
    act: str = "leaky_relu"
    loss: str = "squared"

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(-1)
        b = np.array(self.b, dtype=float)
        if b.ndim == 1:
            b = b[None, :]
        if a.shape[0] < 1 or b.shape[0] != a.shape[0]:
            raise ValueError(f"need m >= 1 matching a/b rows, got a{a.shape} b{b.shape}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        get_activation(self.act)
        get_loss(self.loss)
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_neurons(cls, neurons: list[Neuron], **kw) -> Ensemble:
        return cls(a=[n.a for n in neurons], b=np.array([n.b for n in neurons]), **kw)

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def d(self) -> int:
        return self.b.shape[1]

    @property
    def neurons(self) -> list[Neuron]:
        return [Neuron(float(a), b.copy()) for a, b in zip(self.a, self.b)]

    def __iter__(self) -> Iterator[Neuron]:
        return iter(self.neurons)

    def with_params(self, a: np.ndarray, b: np.ndarray, **kw) -> Ensemble:
        return replace(self, a=a, b=b, **kw)


def init_ensemble(
    m: int,
    d: int,
    rng: np.random.Generator,
    *,
    scale: float = 1.0,
    mode: str = "bn_euclidean",
    act: str = "leaky_relu",
    loss: str = "squared",
) -> Ensemble:
    """Rademacher output weights and ``b`` uniform on the sphere of radius ``scale``."""
    a = rng.choice([-1.0, 1.0], size=m)
    b = rng.standard_normal((m, d))
    b = scale * b / np.linalg.norm(b, axis=1, keepdims=True)
    return Ensemble(a=a, b=b, mode=mode, act=act, loss=loss)


# --------------------------------------------------------------------------
# model


def _effective_directions(ens: Ensemble, sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    if ens.mode == "vanilla":
        return ens.b, None
    s = sigma_norms(ens.b, sigma)
    if np.any(np.linalg.norm(ens.b, axis=1) < MIN_BN_NORM):
        k = int(np.argmin(np.linalg.norm(ens.b, axis=1)))
        raise ValueError(f"neuron {k} has |b| below {MIN_BN_NORM:g}; BN is singular at b = 0")
    return ens.b / s[:, None], s


def forward(ens: Ensemble, dist: DataDistribution) -> np.ndarray:
    if ens.d != dist.d:
        raise ValueError(f"ensemble dimension {ens.d} != data dimension {dist.d}")
    w, _ = _effective_directions(ens, dist.sigma)
    act = get_activation(ens.act)
    return act.fn(dist.samples @ w.T) @ ens.a / ens.m


def loss(ens: Ensemble, dist: DataDistribution) -> float:
    lo = get_loss(ens.loss)
    return float(np.mean(lo.value(forward(ens, dist), dist.targets)))


def _residual_terms(ens: Ensemble, dist: DataDistribution, w: np.ndarray):
    """Shared pieces: activations, residual l', and E[l' a act'(w^T x) x] per neuron."""
    act = get_activation(ens.act)
    lo = get_loss(ens.loss)
    x = dist.samples
    pre = x @ w.T  # (n, m)
    h = act.fn(pre)
    f = h @ ens.a / ens.m
    r = lo.deriv(f, dist.targets)  # (n,)
    n = dist.n
    e_rh = r @ h / n  # E[l' act]  (m,)
    g = ens.a[:, None] * (((r[:, None] * act.deriv(pre)).T @ x) / n)  # (m, d)
    return e_rh, g


def _scale(ens: Ensemble, mean_field: bool) -> float:
    return 1.0 if mean_field else 1.0 / ens.m


def rhs_bn_euclidean(
    ens: Ensemble, dist: DataDistribution, metric: ManifoldMetric | None = None, *, mean_field: bool = False, **_
) -> tuple[np.ndarray, np.ndarray]:
    """Negative gradient of the BN loss in raw coordinates.

    ``bdot = -(1/m) (1/|b|_S) (I - S b b^T / |b|_S^2) E[l' a act'(b_bar^T x) x]``,
    which is Euclidean-orthogonal to ``b``.
    """
    if ens.mode != "bn_euclidean":
        raise ValueError(f"rhs_bn_euclidean needs mode bn_euclidean, got {ens.mode}")
    sigma = dist.sigma if metric is None else metric.sigma
    w, s = _effective_directions(ens, sigma)
    e_rh, g = _residual_terms(ens, dist, w)
    c = _scale(ens, mean_field)
    sb = ens.b @ sigma
    proj = g - sb * (np.einsum("kj,kj->k", ens.b, g) / s**2)[:, None]
    return -c * e_rh, -c * proj / s[:, None]


def rhs_manifold(
    ens: Ensemble,
    dist: DataDistribution,
    metric: ManifoldMetric | None = None,
    *,
    mean_field: bool = False,
    check: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Negative manifold gradient of the vanilla loss at normalized weights.

    ``check=False`` skips the on-Omega test (used for Runge-Kutta stage points).
    """
    if ens.mode != "manifold":
        raise ValueError(f"rhs_manifold needs mode manifold, got {ens.mode}")
    sigma = dist.sigma if metric is None else metric.sigma
    if check:
        drift = float(np.max(np.abs(sigma_norms(ens.b, sigma) - 1.0)))
        if drift > REPROJECT_TOL:
            raise OffManifoldError(f"manifold ensemble is off Omega by {drift:.3g}")
    e_rh, g = _residual_terms(ens, dist, ens.b)
    c = _scale(ens, mean_field)
    return -c * e_rh, -c * manifold_gradient_batch(ens.b, g, sigma)


def rhs_vanilla(
    ens: Ensemble, dist: DataDistribution, metric: ManifoldMetric | None = None, *, mean_field: bool = False, **_
) -> tuple[np.ndarray, np.ndarray]:
    if ens.mode != "vanilla":
        raise ValueError(f"rhs_vanilla needs mode vanilla, got {ens.mode}")
    e_rh, g = _residual_terms(ens, dist, ens.b)
    c = _scale(ens, mean_field)
    return -c * e_rh, -c * g


_RHS = {"bn_euclidean": rhs_bn_euclidean, "manifold": rhs_manifold, "vanilla": rhs_vanilla}


def rhs(ens: Ensemble, dist: DataDistribution, metric: ManifoldMetric | None = None, *, mean_field: bool = False,
        check: bool = True):
    return _RHS[ens.mode](ens, dist, metric, mean_field=mean_field, check=check)


# --------------------------------------------------------------------------
# finite differences


def loss_from_params(ens: Ensemble, dist: DataDistribution, a: np.ndarray, b: np.ndarray) -> float:
    """Loss of the same architecture at arbitrary (a, b); manifold mode reads b as free vectors."""
    mode = "vanilla" if ens.mode == "manifold" else ens.mode
    return loss(Ensemble(a=a, b=b, mode=mode, act=ens.act, loss=ens.loss), dist)


def finite_difference_gradient(
    ens: Ensemble, dist: DataDistribution, h: float = 1e-5
) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference Euclidean gradient of the loss in (a, b).

    For manifold mode this is the gradient of the vanilla loss at ``b_bar``.
    """
    a0, b0 = np.array(ens.a), np.array(ens.b)
    ga = np.empty_like(a0)
    gb = np.empty_like(b0)
    for k in range(ens.m):
        ap, am = a0.copy(), a0.copy()
        ap[k] += h
        am[k] -= h
        ga[k] = (loss_from_params(ens, dist, ap, b0) - loss_from_params(ens, dist, am, b0)) / (2 * h)
        for j in range(ens.d):
            bp, bm = b0.copy(), b0.copy()
            bp[k, j] += h
            bm[k, j] -= h
            gb[k, j] = (loss_from_params(ens, dist, a0, bp) - loss_from_params(ens, dist, a0, bm)) / (2 * h)
    return ga, gb


def fd_velocity(ens: Ensemble, dist: DataDistribution, h: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """Velocity predicted from finite differences, comparable to :func:`rhs`."""
    ga, gb = finite_difference_gradient(ens, dist, h)
    if ens.mode == "manifold":
        gb = manifold_gradient_batch(ens.b, gb, dist.sigma)
    return -ga, -gb


def kink_margin(ens: Ensemble, dist: DataDistribution) -> float:
    """Smallest |pre-activation| / |x| over samples and neurons."""
    w, _ = _effective_directions(ens, dist.sigma)
    pre = np.abs(dist.samples @ w.T)
    xn = np.linalg.norm(dist.samples, axis=1)[:, None]
    return float(np.min(pre / np.maximum(xn, 1e-300)))


# --------------------------------------------------------------------------
# time integration


@dataclass
class TrajectoryLog:
    """Snapshots of an integration; index ``i`` holds the state at ``times[i]``."""

    times: np.ndarray
    a: np.ndarray  # (T, m)
    b: np.ndarray  # (T, m, d)
    losses: np.ndarray  # (T,)
    adot: np.ndarray  # (T, m)
    bdot: np.ndarray  # (T, m, d)
    mode: str
    act: str
    loss: str
    mean_field: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        T = len(self.times)
        for name in ("a", "b", "losses", "adot", "bdot"):
            if len(getattr(self, name)) != T:
                raise ValueError(f"trajectory field {name} has length {len(getattr(self, name))}, expected {T}")
        if T > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    def state(self, i: int) -> Ensemble:
        return Ensemble(a=self.a[i], b=self.b[i], mode=self.mode, act=self.act, loss=self.loss)

    @property
    def states(self) -> list[Ensemble]:
        return [self.state(i) for i in range(len(self))]

    @property
    def max_loss_increase(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(max(np.max(np.diff(self.losses)), 0.0))

    def to_csv(self, path: str | Path) -> None:
        write_trajectory_csv(self, path)


def _step(ens, dist, metric, dt, scheme, mean_field):
    k1 = rhs(ens, dist, metric, mean_field=mean_field)
    if scheme == "euler":
        return k1, (dt * k1[0], dt * k1[1])

    def shifted(k, c):
        return ens.with_params(ens.a + c * k[0], ens.b + c * k[1])

    k2 = rhs(shifted(k1, dt / 2), dist, metric, mean_field=mean_field, check=False)
    k3 = rhs(shifted(k2, dt / 2), dist, metric, mean_field=mean_field, check=False)
    k4 = rhs(shifted(k3, dt), dist, metric, mean_field=mean_field, check=False)
    da = dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    db = dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return k1, (da, db)


def integrate(
    ens: Ensemble,
    dist: DataDistribution,
    metric: ManifoldMetric | None = None,
    scheme: str = "rk4",
    dt: float = 1e-2,
    t_end: float = 1.0,
    retraction: str = "renormalize",
    *,
    mean_field: bool = False,
    record_every: int = 1,
) -> TrajectoryLog:
    """Integrate the gradient flow of ``ens.mode`` from t=0 to ``t_end``.

    ``retraction="renormalize"`` rescales BN weights back to their initial
    Euclidean norms and re-projects manifold weights onto Omega after each step.
    """
    if scheme not in ("euler", "rk4"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if retraction not in ("none", "renormalize"):
        raise ValueError(f"unknown retraction {retraction!r}")
    if not dt > 0 or t_end < dt:
        raise ValueError(f"need dt > 0 and t_end >= dt, got dt={dt}, t_end={t_end}")
    metric = metric or ManifoldMetric(dist.sigma)
    n_steps = int(round(t_end / dt))
    norms0 = np.linalg.norm(ens.b, axis=1)

    times, As, Bs, Ls, Ad, Bd = [], [], [], [], [], []

    def record(t, e, k):
        times.append(t)
        As.append(e.a)
        Bs.append(e.b)
        Ls.append(loss(e, dist))
        Ad.append(k[0])
        Bd.append(k[1])

    cur = ens
    for step in range(n_steps):
        k1, (da, db) = _step(cur, dist, metric, dt, scheme, mean_field)
        if step % record_every == 0:
            record(step * dt, cur, k1)
        a_new, b_new = cur.a + da, cur.b + db
        if not (np.all(np.isfinite(a_new)) and np.all(np.isfinite(b_new))):
            raise IntegrationError(step, "non-finite state (NaN/Inf)")
        if retraction == "renormalize":
            if cur.mode == "bn_euclidean":
                b_new = b_new * (norms0 / np.linalg.norm(b_new, axis=1))[:, None]
            elif cur.mode == "manifold":
                b_new = b_new / sigma_norms(b_new, metric.sigma)[:, None]
        cur = cur.with_params(a_new, b_new)
    k_last = rhs(cur, dist, metric, mean_field=mean_field)
    if not (np.all(np.isfinite(k_last[0])) and np.all(np.isfinite(k_last[1]))):
        raise IntegrationError(n_steps, "non-finite velocity")
    record(n_steps * dt, cur, k_last)

    traj = TrajectoryLog(
        times=np.array(times),
        a=np.array(As),
        b=np.array(Bs),
        losses=np.array(Ls),
        adot=np.array(Ad),
        bdot=np.array(Bd),
        mode=ens.mode,
        act=ens.act,
        loss=ens.loss,
        mean_field=mean_field,
        meta={"scheme": scheme, "dt": dt, "t_end": t_end, "retraction": retraction},
    )
    if traj.max_loss_increase > 0:
        log.debug("loss increased by up to %.3g along the trajectory", traj.max_loss_increase)
    return traj


def write_trajectory_csv(traj: TrajectoryLog, path: str | Path) -> None:
    d = traj.b.shape[2]
    header = ["t", "k", "a"] + [f"b_{j + 1}" for j in range(d)] + ["adot"] + [f"bdot_{j + 1}" for j in range(d)] + ["loss"]
    fmt = "{:.17g}".format
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, t in enumerate(traj.times):
            for k in range(traj.a.shape[1]):
                w.writerow(
                    [fmt(t), k, fmt(traj.a[i, k])]
                    + [fmt(v) for v in traj.b[i, k]]
                    + [fmt(traj.adot[i, k])]
                    + [fmt(v) for v in traj.bdot[i, k]]
                    + [fmt(traj.losses[i])]
                )


def read_trajectory_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Parse a trajectory CSV back into arrays shaped like :class:`TrajectoryLog` fields."""
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    t_vals = np.unique(data["t"])
    m = int(data["k"].max()) + 1
    d = sum(1 for nm in data.dtype.names if nm.startswith("b_"))
    T = len(t_vals)

    def grab(prefix):
        return np.stack([data[f"{prefix}_{j + 1}"] for j in range(d)], axis=-1).reshape(T, m, d)

    return {
        "times": t_vals,
        "a": data["a"].reshape(T, m),
        "b": grab("b"),
        "adot": data["adot"].reshape(T, m),
        "bdot": grab("bdot"),
        "losses": data["loss"].reshape(T, m)[:, 0],
    }


# --------------------------------------------------------------------------
# discrete gradient descent


def gd_step(
    ens: Ensemble, dist: DataDistribution, metric: ManifoldMetric | None = None, lr: float = 0.1,
    *, mean_field: bool = False,
) -> Ensemble:
    """One gradient-descent step ``theta <- theta + lr * velocity`` in BN coordinates."""
    if not lr > 0:
        raise ValueError("lr must be positive")
    if ens.mode != "bn_euclidean":
        raise ValueError("gd_step operates on bn_euclidean ensembles")
    adot, bdot = rhs_bn_euclidean(ens, dist, metric, mean_field=mean_field)
    return ens.with_params(ens.a + lr * adot, ens.b + lr * bdot)


def gd_run(
    ens: Ensemble, dist: DataDistribution, lr: float, n_iter: int, *, mean_field: bool = False,
    snapshot_at: tuple[int, ...] = (),
) -> tuple[Ensemble, dict[int, Ensemble]]:
    """Plain gradient descent in any mode; manifold mode re-projects onto Omega each step."""
    snaps = {}
    cur = ens
    for it in range(n_iter + 1):
        if it in snapshot_at:
            snaps[it] = cur
        if it == n_iter:
            break
        adot, bdot = rhs(cur, dist, mean_field=mean_field)
        a_new, b_new = cur.a + lr * adot, cur.b + lr * bdot
        if cur.mode == "manifold":
            b_new = b_new / sigma_norms(b_new, dist.sigma)[:, None]
        if not np.all(np.isfinite(b_new)):
            raise IntegrationError(it, "non-finite state in gradient descent")
        cur = cur.with_params(a_new, b_new)
    return cur, snaps


# --------------------------------------------------------------------------
# equivalence harness


def normalize_ensemble(ens: Ensemble, sigma: np.ndarray) -> Ensemble:
    """Map BN-mode weights through ``b -> b / |b|_Sigma`` into manifold mode."""
    b_bar = ens.b / sigma_norms(ens.b, sigma)[:, None]
    return ens.with_params(ens.a, b_bar, mode="manifold")


@dataclass(frozen=True)
class EquivalenceReport:
    max_param_deviation: float
    max_loss_deviation: float
    dt: float
    t_end: float
    trajectories: tuple = field(default=(), repr=False, compare=False)


def equivalence_report(
    init: Ensemble,
    dist: DataDistribution,
    metric: ManifoldMetric | None = None,
    dt: float = 1e-3,
    t_end: float = 1.0,
    *,
    scheme: str = "rk4",
    mean_field: bool = False,
) -> EquivalenceReport:
    """Compare the normalized BN trajectory with the manifold trajectory.

    The two flows coincide when every raw weight has unit Euclidean norm
    (BN flow conserves that norm); other norms rescale each neuron's clock
    by ``1/|b|^2``, so they are rejected here.
    """
    if init.mode != "bn_euclidean":
        raise ValueError("equivalence_report needs a bn_euclidean initial ensemble")
    norms = np.linalg.norm(init.b, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-8:
        raise ValueError("initial weights must lie on the unit sphere for the flows to coincide")
    metric = metric or ManifoldMetric(dist.sigma)
    bn = integrate(init, dist, metric, scheme, dt, t_end, "none", mean_field=mean_field)
    mf = integrate(normalize_ensemble(init, metric.sigma), dist, metric, scheme, dt, t_end, "none",
                   mean_field=mean_field)
    s = np.sqrt(np.einsum("tki,ij,tkj->tk", bn.b, metric.sigma, bn.b))
    b_mapped = bn.b / s[..., None]
    dev_b = np.max(np.abs(b_mapped - mf.b))
    dev_a = np.max(np.abs(bn.a - mf.a))
    return EquivalenceReport(
        max_param_deviation=float(max(dev_a, dev_b)),
        max_loss_deviation=float(np.max(np.abs(bn.losses - mf.losses))),
        dt=dt,
        t_end=t_end,
        trajectories=(bn, mf),
    )

"""Data distribution, targets, activations and the regularity constants.

Population expectations are exact averages over the stored sample set.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_CENTER_TOL = 1e-8
DEFAULT_PD_TOL = 1e-10


class DataValidationError(ValueError):
    """Raised when samples violate the zero-mean / positive-definite assumption."""


# --------------------------------------------------------------------------
# activations and losses


@dataclass(frozen=True)
class Activation:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    value_at_zero: float


@dataclass(frozen=True)
class Loss:
    name: str
    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    # derivative with respect to the prediction (first argument)
    deriv: Callable[[np.ndarray, np.ndarray], np.ndarray]
    deriv_lipschitz: float


def _leaky(alpha: float) -> Activation:
    # derivative at 0 takes the left value
    def fn(w):
        return np.maximum(w, alpha * w) if 0.0 <= alpha <= 1.0 else np.where(w > 0, w, alpha * w)

    def deriv(w):
        out = np.full(np.shape(w), alpha)
        out[np.asarray(w) > 0] = 1.0
        return out

    return Activation(
        name=f"leaky_relu:{alpha:g}",
        fn=fn,
        deriv=deriv,
        lipschitz=max(1.0, abs(alpha)),
        value_at_zero=0.0,
    )


def get_activation(act_id: str) -> Activation:
    """Look up an activation by id.

    Accepted ids: ``relu``, ``identity``, ``tanh``, ``leaky_relu`` (slope 0.01) and
    ``leaky_relu:<alpha>``.
    """
    name, _, arg = act_id.partition(":")
    if name == "relu" and not arg:
        return Activation(
            name="relu",
            fn=lambda w: np.maximum(w, 0.0),
            deriv=lambda w: (w > 0).astype(float),
            lipschitz=1.0,
            value_at_zero=0.0,
        )
    if name == "identity" and not arg:
        return Activation(
            name="identity",
            fn=lambda w: np.asarray(w, dtype=float).copy(),
            deriv=lambda w: np.ones_like(w, dtype=float),
            lipschitz=1.0,
            value_at_zero=0.0,
        )
    if name == "tanh" and not arg:
        # smooth; used where integrator order is measured
        return Activation(
            name="tanh",
            fn=np.tanh,
            deriv=lambda w: 1.0 - np.tanh(w) ** 2,
            lipschitz=1.0,
            value_at_zero=0.0,
        )
    if name == "leaky_relu":
        try:
            alpha = float(arg) if arg else 0.01
        except ValueError:
            raise ValueError(f"bad leaky_relu slope in {act_id!r}") from None
        return _leaky(alpha)
    raise ValueError(f"unknown activation id {act_id!r}")


def get_loss(loss_id: str) -> Loss:
    if loss_id == "squared":
        return Loss(
            name="squared",
            value=lambda f, y: 0.5 * (f - y) ** 2,
            deriv=lambda f, y: f - y,
            deriv_lipschitz=1.0,
        )
    raise ValueError(f"unknown loss id {loss_id!r}")


# --------------------------------------------------------------------------
# data distribution


def second_moment(samples: np.ndarray) -> np.ndarray:
    n = samples.shape[0]
    sigma = samples.T @ samples / n
    return 0.5 * (sigma + sigma.T)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DataDistribution:
    """Finite sample set standing in for the data distribution.

    ``sigma`` is the sample second moment ``(1/n) sum x x^T``. Construction
    validates zero mean (when ``centered``) and positive definiteness.
    """

    samples: np.ndarray
    targets: np.ndarray
    sigma: np.ndarray = None  # type: ignore[assignment]
    centered: bool = True
    center_tol: float = DEFAULT_CENTER_TOL
    pd_tol: float = DEFAULT_PD_TOL
    shift: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0:
            raise DataValidationError("samples must be a non-empty (n, d) matrix")
        y = np.asarray(self.targets, dtype=float).reshape(-1)
        if y.shape[0] != x.shape[0]:
            raise DataValidationError(
                f"{x.shape[0]} samples but {y.shape[0]} targets"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataValidationError("samples and targets must be finite")
        sigma = second_moment(x) if self.sigma is None else np.asarray(self.sigma, float)
        object.__setattr__(self, "samples", _frozen(x))
        object.__setattr__(self, "targets", _frozen(y))
        object.__setattr__(self, "sigma", _frozen(sigma))
        self.validate()

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def validate(self) -> None:
        x, sigma = self.samples, self.sigma
        if sigma.shape != (self.d, self.d):
            raise DataValidationError(f"sigma has shape {sigma.shape}, expected {(self.d, self.d)}")
        if np.max(np.abs(sigma - sigma.T)) > 1e-12:
            raise DataValidationError("sigma is not symmetric")
        recomputed = second_moment(x)
        scale = max(np.max(np.abs(recomputed)), 1e-300)
        if np.max(np.abs(recomputed - sigma)) > 1e-12 * scale:
            raise DataValidationError("stored sigma does not match the samples' second moment")
        if self.centered:
            mean_norm = float(np.linalg.norm(x.mean(axis=0)))
            if mean_norm > self.center_tol:
                raise DataValidationError(
                    f"sample mean has norm {mean_norm:.3g} > {self.center_tol:g}; "
                    "inputs must have zero mean (zero-mean input assumption)"
                )
        check_positive_definite(sigma, self.pd_tol)

    def with_targets(self, targets: np.ndarray) -> DataDistribution:
        return DataDistribution(
            samples=self.samples,
            targets=targets,
            sigma=self.sigma,
            centered=self.centered,
            center_tol=self.center_tol,
            pd_tol=self.pd_tol,
            shift=self.shift,
        )


def check_positive_definite(sigma: np.ndarray, pd_tol: float = DEFAULT_PD_TOL) -> np.ndarray:
    """Return the eigenvalues of ``sigma``; raise if the smallest is not above ``pd_tol * lambda_max``."""
    eig = np.linalg.eigvalsh(sigma)
    lam_max = max(float(eig[-1]), 0.0)
    if not eig[0] > pd_tol * lam_max or lam_max == 0.0:
        raise DataValidationError(
            f"covariance is not positive definite: smallest eigenvalue {eig[0]:.6g} "
            f"(largest {eig[-1]:.6g}, tolerance {pd_tol:g} relative)"
        )
    return eig


def generate_gaussian(
    d: int,
    n: int,
    sigma_spec: np.ndarray,
    seed: int,
    *,
    center_tol: float = DEFAULT_CENTER_TOL,
    pd_tol: float = DEFAULT_PD_TOL,
) -> DataDistribution:
    """Draw ``n`` centered Gaussian samples with covariance ``sigma_spec``.

    The draw is recentered exactly so the sample mean is zero; targets are
    zero until :func:`teacher_targets` fills them in.
    """
    sigma_spec = np.asarray(sigma_spec, dtype=float)
    if sigma_spec.shape != (d, d):
        raise ValueError(f"sigma_spec has shape {sigma_spec.shape}, expected {(d, d)}")
    if np.max(np.abs(sigma_spec - sigma_spec.T)) > 1e-12 * max(1.0, np.max(np.abs(sigma_spec))):
        raise DataValidationError("sigma_spec is not symmetric")
    check_positive_definite(sigma_spec, pd_tol)
    if n < d:
        raise ValueError(f"need n >= d, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(sigma_spec)
    x = rng.standard_normal((n, d)) @ chol.T
    x = x - x.mean(axis=0)
    return DataDistribution(
        samples=x, targets=np.zeros(n), centered=True, center_tol=center_tol, pd_tol=pd_tol
    )


class CSVFormatError(ValueError):
    pass


def load_csv(
    path: str | Path,
    center_policy: str = "reject",
    *,
    center_tol: float = DEFAULT_CENTER_TOL,
    pd_tol: float = DEFAULT_PD_TOL,
) -> DataDistribution:
    """Read ``x1,...,xd,y`` rows. ``center_policy`` is ``reject`` or ``recenter``."""
    if center_policy not in ("reject", "recenter"):
        raise ValueError(f"center_policy must be 'reject' or 'recenter', got {center_policy!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CSVFormatError(f"{path}: empty file") from None
        d = len(header) - 1
        expected = [f"x{i + 1}" for i in range(d)] + ["y"]
        if d < 1 or header != expected:
            raise CSVFormatError(f"{path}: header must be {','.join(expected) or 'x1,...,xd,y'}, got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != d + 1:
                raise CSVFormatError(f"{path}: row {lineno} has {len(row)} fields, expected {d + 1}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise CSVFormatError(f"{path}: row {lineno} is not numeric: {row}") from None
    if not rows:
        raise CSVFormatError(f"{path}: no data rows")
    data = np.array(rows)
    x, y = data[:, :d], data[:, d]
    mean = x.mean(axis=0)
    shift = None
    if np.linalg.norm(mean) > center_tol:
        if center_policy == "reject":
            raise DataValidationError(
                f"{path}: sample mean has norm {np.linalg.norm(mean):.3g}; "
                "the zero-mean input assumption fails (use center_policy='recenter')"
            )
        shift = -mean
        x = x - mean
        log.info("recentered %s by %s", path, shift)
    return DataDistribution(
        samples=x, targets=y, centered=True, center_tol=center_tol, pd_tol=pd_tol, shift=shift
    )


def save_csv(dist: DataDistribution, path: str | Path) -> None:
    header = [f"x{i + 1}" for i in range(dist.d)] + ["y"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for xi, yi in zip(dist.samples, dist.targets):
            w.writerow([f"{v:.17g}" for v in xi] + [f"{yi:.17g}"])


# --------------------------------------------------------------------------
# teacher


@dataclass(frozen=True)
class TeacherSpec:
    """Teacher network ``y = (1/m*) sum a*_k act(BN(b*_k^T x)) + noise``."""

    teacher_neurons: Sequence[tuple[float, Sequence[float]]] = ()
    noise_std: float = 0.0
    act: str = "relu"

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def teacher_targets(dist: DataDistribution, spec: TeacherSpec, seed: int = 0) -> DataDistribution:
    act = get_activation(spec.act)
    n, d = dist.n, dist.d
    y = np.zeros(n)
    m_star = len(spec.teacher_neurons)
    if m_star:
        a_star = np.array([float(a) for a, _ in spec.teacher_neurons])
        b_star = np.array([np.asarray(b, dtype=float) for _, b in spec.teacher_neurons])
        if b_star.ndim != 2 or b_star.shape[1] != d:
            raise ValueError(f"teacher neurons must have dimension {d}, got {b_star.shape[1:]}")
        s = np.sqrt(np.einsum("ki,ij,kj->k", b_star, dist.sigma, b_star))
        if np.any(s == 0):
            raise ValueError("teacher neuron with zero weight vector")
        pre = dist.samples @ (b_star / s[:, None]).T
        y = act.fn(pre) @ a_star / m_star
    if spec.noise_std > 0:
        y = y + spec.noise_std * np.random.default_rng(seed).standard_normal(n)
    if not np.all(np.isfinite(y)):
        raise ValueError("teacher produced non-finite targets")
    return dist.with_targets(y)


# --------------------------------------------------------------------------
# regularity constants


@dataclass(frozen=True)
class RegularityConstants:
    """Bounds used by the particle-limit speed estimate.

    ``speed_bound(r) = A + B r`` bounds the mean-field output-weight speed
    while every particle keeps ``|a| <= r``.
    """

    c_x: float
    l_sigma: float
    l_lprime: float
    sigma0: float
    lprime0: float
    c_b: float

    @property
    def act_bound(self) -> float:
        """Bound on ``|act(b^T x)|`` over the normalized manifold."""
        return self.sigma0 + self.l_sigma * self.c_b * self.c_x

    @property
    def A(self) -> float:
        return self.lprime0 * self.act_bound

    @property
    def B(self) -> float:
        return self.l_lprime * self.act_bound**2

    def speed_bound(self, r: float) -> float:
        return self.A + self.B * r


def regularity_constants(dist: DataDistribution, r: float, act: str, loss: str) -> RegularityConstants:
    """Constants for ``|adot| <= (|l'(0)| + L_l' r K) K`` with ``K = |act(0)| + L_act C_b C_x``.

    ``l'(0)`` is evaluated against the stored targets, so it is ``max |y|``
    for squared loss. ``r`` is only checked here; the bound takes it at use.
    """
    if r < 0:
        raise ValueError("support radius must be >= 0")
    a = get_activation(act)
    lo = get_loss(loss)
    c_x = float(np.max(np.linalg.norm(dist.samples, axis=1)))
    lam_min = float(np.linalg.eigvalsh(dist.sigma)[0])
    lprime0 = float(np.max(np.abs(lo.deriv(np.zeros(dist.n), dist.targets))))
    return RegularityConstants(
        c_x=c_x,
        l_sigma=a.lipschitz,
        l_lprime=lo.deriv_lipschitz,
        sigma0=abs(a.value_at_zero),
        lprime0=lprime0,
        c_b=lam_min**-0.5,
    )

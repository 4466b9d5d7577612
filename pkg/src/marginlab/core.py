"""Datasets, importance weights, losses and log-space weighted risk.

All risk quantities are carried as natural logs.  Training pushes the
parameter norm to infinity on separable data, so raw risks underflow by
design; downstream code reads ``RiskValue.log_risk`` only.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import logsumexp

# exp(x) underflows to 0.0 below this
UNDERFLOW_LOG = -745.0


class StructuralError(ValueError):
    """Shapes or dimensions do not line up."""


class NumericError(ValueError):
    """Non-finite input where a finite one is required."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with +/-1 labels and optional density ratios.

    ``density_ratios[i]`` is p_target(x_i) / p_source(x_i).
    """

    features: np.ndarray
    labels: np.ndarray
    density_ratios: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.array(self.labels, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise StructuralError(f"features must be a non-empty n x d matrix, got shape {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise StructuralError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all(np.isfinite(X)):
            raise NumericError("features contain NaN or inf")
        if not np.all((y == 1.0) | (y == -1.0)):
            raise DomainError("labels must be exactly -1 or +1")
        eta = None
        if self.density_ratios is not None:
            eta = np.array(self.density_ratios, dtype=float).reshape(-1)
            if eta.shape[0] != X.shape[0]:
                raise StructuralError("density_ratios length differs from n")
            if not np.all(np.isfinite(eta)) or np.any(eta <= 0):
                raise DomainError("density ratios must be positive and finite")
            eta.setflags(write=False)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "density_ratios", eta)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def signed_features(self) -> np.ndarray:
        """Rows y_i * x_i."""
        return self.labels[:, None] * self.features

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        eta = None if self.density_ratios is None else self.density_ratios[idx]
        return Dataset(self.features[idx], self.labels[idx], eta)

    def to_csv(self, path) -> None:
        header = [f"x{j}" for j in range(self.d)] + ["y"]
        if self.density_ratios is not None:
            header.append("eta")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i in range(self.n):
                row = [_fmt(v) for v in self.features[i]] + [str(int(self.labels[i]))]
                if self.density_ratios is not None:
                    row.append(_fmt(self.density_ratios[i]))
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise StructuralError(f"{path}: empty file")
        header = [h.strip() for h in rows[0]]
        has_eta = header[-1] == "eta"
        n_feat = len(header) - 1 - int(has_eta)
        expected = [f"x{j}" for j in range(n_feat)] + ["y"] + (["eta"] if has_eta else [])
        if header != expected:
            raise StructuralError(f"{path}: bad header {header}")
        body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        if body.size == 0:
            raise StructuralError(f"{path}: no samples")
        eta = body[:, -1] if has_eta else None
        return cls(body[:, :n_feat], body[:, n_feat], eta)


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass(frozen=True)
class WeightVector:
    """Raw per-sample importance weights confined to [1/M, M]."""

    w: np.ndarray
    bound_M: float = 1.0

    def __post_init__(self):
        w = np.array(self.w, dtype=float).reshape(-1)
        M = float(self.bound_M)
        if M < 1.0:
            raise DomainError(f"bound_M must be >= 1, got {M}")
        if w.size == 0 or not np.all(np.isfinite(w)):
            raise DomainError("weights must be a non-empty finite vector")
        lo, hi = 1.0 / M, M
        tol = 1e-12 * M
        if np.any(w < lo - tol) or np.any(w > hi + tol):
            raise DomainError(f"weights must lie in [{lo:g}, {hi:g}]")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "bound_M", M)

    @classmethod
    def uniform(cls, n: int) -> "WeightVector":
        return cls(np.ones(n), 1.0)

    def __len__(self) -> int:
        return self.w.shape[0]

    def normalized(self) -> np.ndarray:
        """Weights rescaled to sum to one (the view used by the margin argument)."""
        return self.w / self.w.sum()

    @property
    def log_w(self) -> np.ndarray:
        return np.log(self.w)


class LossKind(enum.Enum):
    EXPONENTIAL = "exponential"
    LOGISTIC = "logistic"

    @classmethod
    def parse(cls, text: str) -> "LossKind":
        key = text.strip().lower()
        for member in cls:
            if member.value == key or member.name.lower() == key:
                return member
        raise ValueError(f"unknown loss {text!r}")

    def log_loss(self, u: np.ndarray) -> np.ndarray:
        """log l(u), finite for every finite margin u."""
        u = np.asarray(u, dtype=float)
        if self is LossKind.EXPONENTIAL:
            return -u
        # log(log1p(exp(-u))), split on the sign of u
        out = np.empty_like(u)
        pos = u > 0
        z = np.exp(-u[pos])
        safe = np.where(z > 0, z, 1.0)
        out[pos] = -u[pos] + np.where(z > 0, np.log(np.log1p(safe) / safe), 0.0)
        out[~pos] = np.log(np.logaddexp(0.0, -u[~pos]))
        return out

    def log_neg_derivative(self, u: np.ndarray) -> np.ndarray:
        """log(-l'(u))."""
        u = np.asarray(u, dtype=float)
        if self is LossKind.EXPONENTIAL:
            return -u
        return -np.logaddexp(0.0, u)

    def log_second_derivative(self, u: np.ndarray) -> np.ndarray:
        """log l''(u)."""
        u = np.asarray(u, dtype=float)
        if self is LossKind.EXPONENTIAL:
            return -u
        return -np.logaddexp(0.0, u) - np.logaddexp(0.0, -u)


@dataclass(frozen=True)
class RiskValue:
    log_risk: float
    risk: float = field(init=False)
    underflow: bool = field(init=False)

    def __post_init__(self):
        lr = float(self.log_risk)
        object.__setattr__(self, "log_risk", lr)
        object.__setattr__(self, "underflow", lr < UNDERFLOW_LOG)
        object.__setattr__(self, "risk", 0.0 if lr < UNDERFLOW_LOG else math.exp(lr))


def _check_inputs(predictor, theta, data: Dataset, w: WeightVector, lam: float, r: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != predictor.n_params:
        raise StructuralError(f"theta has {theta.shape[0]} entries, predictor expects {predictor.n_params}")
    if data.d != predictor.input_dim:
        raise StructuralError(f"data has d={data.d}, predictor expects {predictor.input_dim}")
    if len(w) != data.n:
        raise StructuralError(f"{len(w)} weights for {data.n} samples")
    if not np.all(np.isfinite(theta)):
        raise NumericError("theta is not finite")
    if lam < 0:
        raise DomainError("lambda must be nonnegative")
    if r <= 0:
        raise DomainError("r must be positive")
    return theta


def _log_regularizer(theta: np.ndarray, lam: float, r: float) -> float:
    nrm = float(np.linalg.norm(theta))
    if lam == 0 or nrm == 0:
        return -math.inf
    return math.log(lam) + r * math.log(nrm)


def log_data_risk(margins: np.ndarray, log_w: np.ndarray, loss: LossKind) -> float:
    """log((1/n) sum_i w_i l(u_i)) for per-sample margins u."""
    return float(logsumexp(log_w + loss.log_loss(margins)) - math.log(margins.shape[0]))


def weighted_risk(predictor, theta, data: Dataset, w: WeightVector,
                  loss: LossKind = LossKind.EXPONENTIAL, lam: float = 0.0, r: float = 2.0) -> RiskValue:
    """Weighted empirical risk plus ``lam * ||theta||^r``, evaluated in log space."""
    theta = _check_inputs(predictor, theta, data, w, lam, r)
    margins = data.labels * predictor.outputs(theta, data.features)
    log_l = log_data_risk(margins, w.log_w, loss)
    return RiskValue(float(np.logaddexp(log_l, _log_regularizer(theta, lam, r))))


def gradient_terms(predictor, theta: np.ndarray, X: np.ndarray, y: np.ndarray, log_w: np.ndarray,
                   loss: LossKind):
    """Scaled data-gradient pieces.

    Returns ``(log_scale, g, margins)`` with the unregularized gradient equal to
    ``exp(log_scale) * g``; ``g`` is O(1) even when the risk itself underflows.
    """
    margins = y * predictor.outputs(theta, X)
    log_c = log_w + loss.log_neg_derivative(margins) - math.log(X.shape[0])
    shift = float(np.max(log_c))
    coef = np.exp(log_c - shift)
    g = -predictor.vjp(theta, X, coef * y)
    return shift, g, margins


def regularizer_gradient(theta: np.ndarray, lam: float, r: float) -> np.ndarray:
    nrm = float(np.linalg.norm(theta))
    if lam == 0 or nrm == 0:
        return np.zeros_like(theta)
    return lam * r * nrm ** (r - 2.0) * theta


def weighted_risk_gradient(predictor, theta, data: Dataset, w: WeightVector,
                           loss: LossKind = LossKind.EXPONENTIAL, lam: float = 0.0, r: float = 2.0) -> np.ndarray:
    theta = _check_inputs(predictor, theta, data, w, lam, r)
    log_scale, g, _ = gradient_terms(predictor, theta, data.features, data.labels, w.log_w, loss)
    return math.exp(log_scale) * g + regularizer_gradient(theta, lam, r)


def generalized_kl(p, w) -> float:
    """sum_i p_i log(p_i / w_i) against raw, unnormalized weights (0 log 0 = 0)."""
    p = np.asarray(p, dtype=float).reshape(-1)
    wv = w.w if isinstance(w, WeightVector) else np.asarray(w, dtype=float).reshape(-1)
    if p.shape != wv.shape:
        raise StructuralError("p and w differ in length")
    if np.any(p < -1e-9) or abs(p.sum() - 1.0) > 1e-9:
        raise DomainError("p is not a probability vector")
    if np.any(wv <= 0):
        raise DomainError("weights must be positive")
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(wv[mask]))))


def read_vector(path) -> np.ndarray:
    return np.array([float(t) for t in Path(path).read_text().split()], dtype=float)


def write_vector(path, v) -> None:
    Path(path).write_text("".join(_fmt(x) + "\n" for x in np.asarray(v, dtype=float).reshape(-1)))

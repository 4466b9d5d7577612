"""Synthetic datasets whose oracles are known by construction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..bounds import DensityPair, Gaussian
from ..core import Dataset, WeightVector


class ConfigError(ValueError):
    pass


@dataclass
class Oracle:
    """What the generator knows about its own data."""

    theta_star: Optional[np.ndarray] = None
    gamma_star: Optional[float] = None
    theta_tilde: Optional[np.ndarray] = None
    sep_indices: Optional[tuple] = None
    pair: Optional[DensityPair] = None
    label_direction: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None


@dataclass
class Generated:
    data: Dataset
    oracle: Oracle = field(default_factory=Oracle)


def _vec(v, name) -> np.ndarray:
    if isinstance(v, str):
        v = [float(t) for t in v.replace(",", " ").split()]
    out = np.atleast_1d(np.asarray(v, dtype=float))
    if out.ndim != 1 or not np.all(np.isfinite(out)):
        raise ConfigError(f"{name} must be a finite vector")
    return out


def symmetric_pair(seed: int = 0) -> Generated:
    X = np.array([[1.0, 0.0], [-1.0, 0.0]])
    return Generated(Dataset(X, np.array([1.0, -1.0])), Oracle(theta_star=np.array([1.0, 0.0]), gamma_star=1.0))


def _random_unit(rng, d):
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def planted_margin(seed: int = 0, gamma: float = 0.5, n: int = 20, d: int = 2, radius: float = 5.0,
                   clearance: float = 0.2) -> Generated:
    """Points in a ball of the given radius, separated through the origin with margin exactly gamma.

    Two support points y(gamma theta +- b e) sit on the margin (e orthogonal to
    theta); every other point has |theta.x| >= gamma + 0.2 (radius - gamma).
    Their hull's min-norm point is gamma theta, so theta is the max-margin
    direction.
    """
    if n < 2 or d < 2:
        raise ConfigError("PlantedMargin needs n >= 2 and d >= 2")
    if not 0 < gamma < radius:
        raise ConfigError("PlantedMargin needs 0 < gamma < radius")
    rng = np.random.default_rng(seed)
    theta = _random_unit(rng, d)
    e = _random_unit(rng, d)
    e -= (e @ theta) * theta
    e /= np.linalg.norm(e)
    b = 0.9 * math.sqrt(radius ** 2 - gamma ** 2)
    X = [gamma * theta + b * e, -gamma * theta + b * e]
    y = [1.0, -1.0]
    clearance = clearance * (radius - gamma)
    while len(X) < n:
        x = _random_unit(rng, d) * radius * rng.uniform() ** (1.0 / d)
        proj = float(theta @ x)
        if abs(proj) < gamma + clearance:
            continue
        X.append(x)
        y.append(math.copysign(1.0, proj))
    return Generated(Dataset(np.array(X), np.array(y)), Oracle(theta_star=theta, gamma_star=gamma))


def conflict_pair(seed: int = 0, w_plus: float = 1.0, w_minus: float = 1.0) -> Generated:
    """x = 1 twice with opposite labels; the weighted optimum is log(w+/w-)/2."""
    if w_plus <= 0 or w_minus <= 0:
        raise ConfigError("ConflictPair weights must be positive")
    data = Dataset(np.array([[1.0], [1.0]]), np.array([1.0, -1.0]))
    return Generated(data, Oracle(theta_tilde=np.array([0.5 * math.log(w_plus / w_minus)]),
                                  sep_indices=(), weights=np.array([w_plus, w_minus])))


def mixed_sep_nonsep(seed: int = 0) -> Generated:
    X = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    y = np.array([1.0, -1.0, 1.0, -1.0])
    return Generated(Dataset(X, y), Oracle(sep_indices=(0, 1), theta_tilde=np.zeros(2)))


def gaussian_shift(seed: int = 0, mu_s=(0.0, 0.0), mu_t=(1.0, 0.0), sigma: float = 1.0, n: int = 200,
                   truncation_radius: float = 10.0, label_direction=None) -> Generated:
    """Source sample from a ball-truncated Gaussian with exact target/source density ratios.

    Labels follow sign(label_direction . x) in both domains.
    """
    mu_s, mu_t = _vec(mu_s, "mu_s"), _vec(mu_t, "mu_t")
    if mu_s.shape != mu_t.shape:
        raise ConfigError("mu_s and mu_t differ in dimension")
    if sigma <= 0 or n < 1:
        raise ConfigError("GaussianShift needs sigma > 0 and n >= 1")
    if truncation_radius <= max(np.linalg.norm(mu_s), np.linalg.norm(mu_t)):
        raise ConfigError("truncation radius must enclose both means")
    d = mu_s.shape[0]
    if label_direction is None:
        label_direction = np.ones(d)
    u = _vec(label_direction, "label_direction")
    if u.shape[0] != d or not np.linalg.norm(u) > 0:
        raise ConfigError("label_direction must be a nonzero vector of the data dimension")
    u = u / np.linalg.norm(u)
    pair = DensityPair(Gaussian.isotropic(mu_s, sigma, truncation_radius),
                       Gaussian.isotropic(mu_t, sigma, truncation_radius), seed=seed)
    rng = np.random.default_rng(seed)
    X = pair.source.sample(rng, n)
    y = np.where(X @ u >= 0, 1.0, -1.0)
    eta = pair.density_ratio(X)
    return Generated(Dataset(X, y, eta), Oracle(pair=pair, label_direction=u))


def two_cluster(seed: int = 0, n: int = 16, mu=(2.0, 1.0), sd: float = 0.1) -> Generated:
    """Alternating labels around +mu and -mu with isotropic noise."""
    mu = _vec(mu, "mu")
    if n < 2 or sd < 0:
        raise ConfigError("TwoCluster needs n >= 2 and sd >= 0")
    rng = np.random.default_rng(seed)
    y = np.array([1.0, -1.0] * (n // 2) + [1.0] * (n % 2))
    X = y[:, None] * mu + sd * rng.normal(size=(n, mu.shape[0]))
    return Generated(Dataset(X, y))


GENERATORS = {
    "symmetricpair": symmetric_pair,
    "plantedmargin": planted_margin,
    "conflictpair": conflict_pair,
    "mixedsepnonsep": mixed_sep_nonsep,
    "gaussianshift": gaussian_shift,
    "twocluster": two_cluster,
}


def target_sample(generated: Generated, m: int, seed: int):
    """Fresh labelled draws from the target distribution of a shift scenario."""
    o = generated.oracle
    if o.pair is None:
        raise ConfigError("generator has no target distribution")
    X = o.pair.target.sample(np.random.default_rng(seed), m)
    return X, np.where(X @ o.label_direction >= 0, 1.0, -1.0)


# -- weight schemes -----------------------------------------------------------

def make_weights(scheme: str, generated: Generated, *, M: float = 10.0, values=None,
                 seed: int = 0) -> WeightVector:
    key = scheme.strip().lower().replace("_", "")
    data = generated.data
    if key == "uniform":
        return WeightVector.uniform(data.n)
    if key == "explicit" or (key == "default" and generated.oracle.weights is not None):
        vals = generated.oracle.weights if values is None else _vec(values, "weights.values")
        if vals is None or vals.shape[0] != data.n:
            raise ConfigError("explicit weights must list one value per sample")
        return WeightVector(vals, max(float(np.max(vals)), 1.0 / float(np.min(vals)), 1.0))
    if key == "default":
        return WeightVector.uniform(data.n)
    if M < 1:
        raise ConfigError("M must be at least 1")
    if key == "randombox":
        return WeightVector(np.random.default_rng(seed).uniform(1.0 / M, M, data.n), M)
    if key in ("alignedwithratios", "aligned", "invertedratios", "inverted"):
        if data.density_ratios is None:
            raise ConfigError(f"{scheme} needs density ratios")
        eta = data.density_ratios if key.startswith("aligned") else 1.0 / data.density_ratios
        return WeightVector(np.clip(eta, 1.0 / M, M), M)
    raise ConfigError(f"unknown weight scheme {scheme!r}")

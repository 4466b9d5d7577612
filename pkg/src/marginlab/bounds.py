"""Direction, margin and generalization bounds evaluated on concrete runs."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .core import Dataset, DomainError, WeightVector, generalized_kl
from .predictors import normalized_margin

log = logging.getLogger(__name__)


def prop1_direction_bound(n: int, kl: float, M: float, norm_theta: float, gamma_star: float) -> float:
    """2 (log n + KL(p*||w) + M) / (||theta|| gamma*), a bound on the squared direction gap."""
    if norm_theta <= 0 or gamma_star <= 0:
        raise DomainError("norm_theta and gamma_star must be positive")
    return 2.0 * (math.log(n) + kl + M) / (norm_theta * gamma_star)


@dataclass
class FenchelCheck:
    numeric: float
    closed_form: float
    abs_diff: float
    iterations: int = 0


def _log_mean_exp_weighted(u, log_w, n):
    return float(logsumexp(u + log_w) - math.log(n))


def fenchel_identity_check(p, w, tol: float = 1e-10, max_iter: int = 10_000) -> FenchelCheck:
    """Compare sup_u <p,u> - log((1/n) sum w_i e^{u_i}) against log n + KL(p||w).

    The supremum is found by diagonally preconditioned gradient ascent from
    u = 0 with Armijo backtracking, stopping at gradient norm ``tol``.
    Coordinates with p_i = 0 are dropped (their u_i runs to -inf).
    """
    p = np.asarray(p, dtype=float).reshape(-1)
    wv = w.w if isinstance(w, WeightVector) else np.asarray(w, dtype=float).reshape(-1)
    if np.any(p < -1e-9) or abs(p.sum() - 1.0) > 1e-9:
        raise DomainError("p is not a probability vector")
    n = p.shape[0]
    closed = math.log(n) + generalized_kl(p, wv)
    supp = p > 0
    ps, log_ws = p[supp], np.log(wv[supp])

    def objective(u):
        return float(ps @ u) - _log_mean_exp_weighted(u, log_ws, n)

    u = np.zeros(ps.shape[0])
    f = objective(u)
    it = 0
    for it in range(1, max_iter + 1):
        q = np.exp(u + log_ws - logsumexp(u + log_ws))
        grad = ps - q
        if float(np.linalg.norm(grad)) <= tol:
            break
        direction = grad / ps
        slope = float(grad @ direction)
        step = 1.0
        while True:
            u_new = u + step * direction
            f_new = objective(u_new)
            if f_new >= f + 1e-4 * step * slope or step < 1e-16:
                break
            step *= 0.5
        u, f = u_new, f_new
    return FenchelCheck(f, closed, abs(f - closed), it)


def finite_step_margin_floor(tau: float, alpha: float, r: float, gamma_star: float, c: float) -> float:
    """c * gamma* / tau^(alpha/r)"""
    if not 1.0 < tau <= 2.0:
        raise DomainError("tau must lie in (1, 2]")
    if not 0.1 <= c < 1.0:
        raise DomainError("c must lie in [0.1, 1)")
    if alpha <= 0 or r <= 0:
        raise DomainError("alpha and r must be positive")
    return c * gamma_star / tau ** (alpha / r)


# -- distributions ---------------------------------------------------------

@dataclass(frozen=True)
class Gaussian:
    """Gaussian, optionally truncated to the ball ||x|| <= truncation_radius."""

    mean: np.ndarray
    cov: np.ndarray
    truncation_radius: Optional[float] = None

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(mean.shape[0])
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise DomainError("covariance shape does not match the mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if self.truncation_radius is not None and not self.is_isotropic:
            raise DomainError("truncation is only supported for isotropic covariance")

    @classmethod
    def isotropic(cls, mean, sigma: float, truncation_radius: Optional[float] = None) -> "Gaussian":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls(mean, sigma ** 2 * np.eye(mean.shape[0]), truncation_radius)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def is_isotropic(self) -> bool:
        return bool(np.allclose(self.cov, self.cov[0, 0] * np.eye(self.dim)))

    def log_mass(self, center=None) -> float:
        """log P(||X|| <= R) for X ~ N(center, cov); 0 when untruncated."""
        if self.truncation_radius is None:
            return 0.0
        center = self.mean if center is None else np.asarray(center, dtype=float)
        s2 = self.cov[0, 0]
        nc = float(center @ center) / s2
        q = self.truncation_radius ** 2 / s2
        if nc == 0.0:
            return float(stats.chi2.logcdf(q, self.dim))
        return float(np.log(stats.ncx2.cdf(q, self.dim, nc)))

    def logpdf(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = stats.multivariate_normal(self.mean, self.cov).logpdf(X)
        out = np.atleast_1d(out) - self.log_mass()
        if self.truncation_radius is not None:
            out = np.where(np.linalg.norm(X, axis=1) <= self.truncation_radius, out, -np.inf)
        return out

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        out = np.empty((0, self.dim))
        while out.shape[0] < m:
            draw = rng.multivariate_normal(self.mean, self.cov, size=max(m - out.shape[0], 16) * 2)
            if self.truncation_radius is not None:
                draw = draw[np.linalg.norm(draw, axis=1) <= self.truncation_radius]
            out = np.vstack([out, draw])
        return out[:m]


@dataclass(frozen=True)
class Mixture:
    components: tuple
    weights: tuple

    def __post_init__(self):
        wts = np.asarray(self.weights, dtype=float)
        if len(self.components) != wts.shape[0] or np.any(wts <= 0):
            raise DomainError("mixture needs one positive weight per component")
        object.__setattr__(self, "weights", tuple(wts / wts.sum()))

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def logpdf(self, X) -> np.ndarray:
        parts = np.stack([math.log(wt) + comp.logpdf(X) for comp, wt in zip(self.components, self.weights)])
        return logsumexp(parts, axis=0)

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        counts = rng.multinomial(m, self.weights)
        X = np.vstack([comp.sample(rng, k) for comp, k in zip(self.components, counts) if k > 0])
        return X[rng.permutation(m)]


Distribution = Union[Gaussian, Mixture]


@dataclass(frozen=True)
class DensityPair:
    source: Distribution
    target: Distribution
    mc_samples: int = 100_000
    seed: int = 0

    def density_ratio(self, X) -> np.ndarray:
        """p_target(x) / p_source(x)"""
        return np.exp(self.target.logpdf(X) - self.source.logpdf(X))

    @property
    def chi2(self) -> float:
        return chi2_divergence(self).value


@dataclass
class Chi2Result:
    value: float
    method: str
    stderr: float = 0.0
    samples: int = 0
    notice: str = ""


def _closed_form_ok(pair: DensityPair) -> bool:
    s, t = pair.source, pair.target
    if not (isinstance(s, Gaussian) and isinstance(t, Gaussian)):
        return False
    if not np.allclose(s.cov, t.cov):
        return False
    if s.truncation_radius != t.truncation_radius:
        return False
    return s.truncation_radius is None or s.is_isotropic


def chi2_divergence(pair: DensityPair, method: Optional[str] = None) -> Chi2Result:
    """D(P_t || P_s) = E_s[(p_t/p_s)^2] - 1.

    Closed form for equal-covariance Gaussians (exact under a common
    isotropic ball truncation); Monte Carlo over source samples otherwise.
    """
    if method not in (None, "closed_form", "monte_carlo"):
        raise ValueError(f"unknown method {method!r}")
    notice = ""
    if method != "monte_carlo":
        if _closed_form_ok(pair):
            s, t = pair.source, pair.target
            delta = t.mean - s.mean
            quad = float(delta @ np.linalg.solve(s.cov, delta))
            if s.truncation_radius is None:
                return Chi2Result(math.expm1(quad), "closed_form")
            # E_s[eta^2] = e^quad * P(N(2 mu_t - mu_s) in ball) * Z_s / Z_t^2
            log_m2 = quad + s.log_mass(2 * t.mean - s.mean) + s.log_mass() - 2 * t.log_mass()
            return Chi2Result(math.expm1(log_m2), "closed_form")
        if method == "closed_form":
            notice = "closed form unavailable for this pair; used Monte Carlo"
            log.info(notice)
    rng = np.random.default_rng(pair.seed)
    X = pair.source.sample(rng, pair.mc_samples)
    sq = pair.density_ratio(X) ** 2
    return Chi2Result(float(sq.mean() - 1.0), "monte_carlo",
                      float(sq.std(ddof=1) / math.sqrt(sq.shape[0])), sq.shape[0], notice)


# -- generalization bound ----------------------------------------------------

def weighted_rademacher_bound(data: Dataset, H: int, prod_frobenius: float, C: float) -> float:
    """C (sqrt(2 log(2) H) + 1) prod_h ||W_h||_F sqrt(mean eta^2) / sqrt(n)"""
    if data.density_ratios is None:
        raise DomainError("density ratios are required")
    if prod_frobenius < 0:
        raise DomainError("prod_frobenius must be nonnegative")
    eta = data.density_ratios
    return (C * (math.sqrt(2.0 * math.log(2.0) * H) + 1.0) * prod_frobenius
            * math.sqrt(float(np.mean(eta ** 2))) / math.sqrt(data.n))


@dataclass
class GenBoundReport:
    term_I: float
    term_II: float
    epsilon: float
    total: float
    gamma_used: float
    C_sup_norm: float
    H: int
    n: int
    delta: float
    chi2: float = 0.0
    chi2_method: str = ""
    # Rademacher-lemma route with rebalanced layer norms <= 1/sqrt(H), for comparison
    term_II_lemma: float = 0.0

    def csv_row(self) -> list:
        return [repr(float(v)) for v in (self.gamma_used, self.term_I, self.term_II, self.epsilon, self.total)]


def _depth(predictor) -> int:
    return int(getattr(predictor, "depth", 1))


def normalized_margins(predictor, theta, data: Dataset) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    nrm = float(np.linalg.norm(theta))
    if nrm == 0:
        raise DomainError("theta must be nonzero")
    return data.labels * predictor.outputs(theta, data.features) / nrm ** predictor.alpha


def _sup_norm(data: Dataset, pool) -> float:
    C = float(np.max(np.linalg.norm(data.features, axis=1)))
    if pool is not None:
        C = max(C, float(np.max(np.linalg.norm(np.atleast_2d(pool), axis=1))))
    return C


def _resolve_chi2(data: Dataset, pair: Optional[DensityPair], chi2: Optional[float]):
    if chi2 is not None:
        return float(chi2), "given"
    if pair is not None:
        res = chi2_divergence(pair)
        return res.value, res.method
    return float(np.mean(data.density_ratios ** 2) - 1.0), "plug_in"


def _bound_terms(margins, eta, gamma, n, C, H, chi2, delta):
    term_I = float(np.sum(eta[margins < gamma]) / n)
    term_II = C * math.sqrt(chi2 + 1.0) / (gamma * H ** ((H - 1) / 2.0) * math.sqrt(n))
    # log log2(4C/gamma) is negative once gamma > 2C; clamp at zero there
    loglog = math.log(max(math.log2(4.0 * C / gamma), 1.0))
    eps = math.sqrt(loglog / n) + math.sqrt(math.log(1.0 / delta) / n)
    return term_I, term_II, eps


def generalization_bound(data: Dataset, predictor, theta, gamma: float, delta: float = 0.05,
                         pair: Optional[DensityPair] = None, *, chi2: Optional[float] = None,
                         pool=None) -> GenBoundReport:
    """Evaluate the three terms of the covariate-shift margin bound at one gamma.

    C is the largest feature norm over the training data and the optional
    ``pool`` of extra (e.g. test) samples.
    """
    if data.density_ratios is None:
        raise DomainError("density ratios are required")
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    C = _sup_norm(data, pool)
    if not 0 < gamma < 4 * C:
        raise DomainError(f"gamma must lie in (0, 4C) = (0, {4 * C:g})")
    chi2_val, method = _resolve_chi2(data, pair, chi2)
    H = _depth(predictor)
    margins = normalized_margins(predictor, theta, data)
    term_I, term_II, eps = _bound_terms(margins, data.density_ratios, gamma, data.n, C, H, chi2_val, delta)
    rad = weighted_rademacher_bound(data, H, H ** (-H / 2.0), C)
    return GenBoundReport(term_I, term_II, eps, term_I + term_II + eps, gamma, C, H, data.n, delta,
                          chi2_val, method, 4.0 * rad / gamma)


@dataclass
class GammaSweep:
    gamma_opt: float
    total_at_opt: float
    curve: List[GenBoundReport] = field(repr=False)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["gamma", "term_I", "term_II", "epsilon", "total"])
            for rep in self.curve:
                writer.writerow(rep.csv_row())


def gamma_candidates(margins: np.ndarray, C: float, grid_points: int = 100) -> np.ndarray:
    top = 4.0 * C * (1.0 - 1e-6)
    pos = margins[margins > 0]
    low = (pos.min() / 10.0) if pos.size else top * 1e-6
    grid = np.geomspace(low, top, grid_points + 1)[1:]
    cands = np.concatenate([margins[(margins > 0) & (margins < 4.0 * C)], grid])
    return np.unique(cands)


def optimal_gamma_sweep(data: Dataset, predictor, theta, delta: float = 0.05,
                        pair: Optional[DensityPair] = None, *, chi2: Optional[float] = None,
                        pool=None, grid_points: int = 100) -> GammaSweep:
    """Minimize the bound total over sample margins plus a log grid; ties go to the smaller gamma."""
    if data.density_ratios is None:
        raise DomainError("density ratios are required")
    C = _sup_norm(data, pool)
    chi2_val, method = _resolve_chi2(data, pair, chi2)
    H = _depth(predictor)
    margins = normalized_margins(predictor, theta, data)
    rad = weighted_rademacher_bound(data, H, H ** (-H / 2.0), C)
    curve = []
    for g in gamma_candidates(margins, C, grid_points):
        tI, tII, eps = _bound_terms(margins, data.density_ratios, g, data.n, C, H, chi2_val, delta)
        curve.append(GenBoundReport(tI, tII, eps, tI + tII + eps, float(g), C, H, data.n, delta,
                                    chi2_val, method, 4.0 * rad / g))
    best = min(range(len(curve)), key=lambda i: (curve[i].total, curve[i].gamma_used))
    return GammaSweep(curve[best].gamma_used, curve[best].total, curve)


# -- trajectory-level checks ---------------------------------------------------

@dataclass
class BoundCheck:
    violations: List[int]
    worst_ratio: float
    checked: int
    notes: List[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def prop1_soundness(snapshots: Sequence, certificate, w: WeightVector) -> BoundCheck:
    """dir_gap^2 against the direction bound at every snapshot from the first separated one on."""
    n = len(w)
    kl = generalized_kl(certificate.p_star / certificate.p_star.sum(), w)
    seen_sep = False
    viol, worst, checked = [], 0.0, 0
    for s in snapshots:
        seen_sep = seen_sep or s.separated
        if not seen_sep or s.dir_gap is None or s.norm_theta <= 0:
            continue
        bound = prop1_direction_bound(n, kl, w.bound_M, s.norm_theta, certificate.gamma_star)
        ratio = s.dir_gap ** 2 / bound
        worst = max(worst, ratio)
        checked += 1
        if ratio > 1.0:
            viol.append(s.t)
    return BoundCheck(viol, worst, checked)


def prop2_risk_envelope(snapshots: Sequence, omega: float, log_risk_star: float,
                        report_until_gap: float = 0.1, abs_tol: float = 1e-12) -> BoundCheck:
    """nonsep_gap^2 <= (2/omega) (L(t) - L*) at each snapshot.

    Steps before the gap first drops below ``report_until_gap`` only go to
    ``notes``; they are outside the local strong-convexity regime.
    """
    if omega <= 0:
        raise DomainError("omega must be positive")
    risk_star = math.exp(log_risk_star)
    viol, notes, worst, checked = [], [], 0.0, 0
    local = False
    for s in snapshots:
        if s.nonsep_gap is None:
            continue
        local = local or s.nonsep_gap < report_until_gap
        excess = max(math.exp(s.log_risk) - risk_star, 0.0)
        bound = 2.0 / omega * excess + abs_tol
        ratio = s.nonsep_gap ** 2 / bound
        if ratio > 1.0:
            (viol if local else notes).append(s.t)
        if local:
            worst = max(worst, ratio)
            checked += 1
    return BoundCheck(viol, worst, checked, notes)


@dataclass
class RateFit:
    K: float
    violations: List[int]
    checked: int

    @property
    def passed(self) -> bool:
        return not self.violations


def log2_rate_fit(ts, gaps, split: int = 1000, floor: float = 1e-12) -> RateFit:
    """Fit K so that gap(t) <= K log^2 t / t on 2 <= t <= split, then test t >= split.

    ``floor`` absorbs rounding once the gap has converged to machine level.
    """
    ts = np.asarray(ts, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    fit = (ts >= 2) & (ts <= split)
    if not np.any(fit):
        raise DomainError("no snapshots in the fitting window")
    env = np.log(ts[fit]) ** 2 / ts[fit]
    K = float(np.max(gaps[fit] / env))
    test = ts >= split
    allowed = K * np.log(ts[test]) ** 2 / ts[test] + floor
    viol = [int(t) for t, g, a in zip(ts[test], gaps[test], allowed) if g > a]
    return RateFit(K, viol, int(test.sum()))


def rebalanced_constants(H: int) -> dict:
    """Side-by-side depth factors of the two complexity routes."""
    return {
        "theorem_denominator": H ** ((H - 1) / 2.0),
        "lemma_product_bound": H ** (-H / 2.0),
        "lemma_factor": 4.0 * (math.sqrt(2.0 * math.log(2.0) * H) + 1.0) * H ** (-H / 2.0),
    }


def target_error(predictor, theta, X, y) -> float:
    """Fraction of samples with y f(theta, x) <= 0."""
    return float(np.mean(np.asarray(y) * predictor.outputs(np.asarray(theta, float), np.asarray(X, float)) <= 0))


def margin_floor_holds(predictor, theta, data: Dataset, floor: float) -> bool:
    return normalized_margin(predictor, theta, data).gamma_tilde >= floor

"""Full-batch gradient descent on the weighted (optionally regularized) risk."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .core import Dataset, DomainError, LossKind, WeightVector, _check_inputs, regularizer_gradient
from .geometry import MarginCertificate, RestrictedOptimum
from .predictors import LinearPredictor

DIVERGENCE_LIMIT = 1e12
TRAJECTORY_HEADER = ["t", "log_risk", "norm_theta", "gamma_tilde", "separated",
                     "a_t", "b_t", "eta_t", "dir_gap", "nonsep_gap"]


class Schedule(enum.Enum):
    CONSTANT = "constant"
    CAPPED_BY_RISK = "capped_by_risk"

    @classmethod
    def parse(cls, text: str) -> "Schedule":
        key = text.strip().lower().replace("-", "_")
        aliases = {"constant": cls.CONSTANT, "cappedbyrisk": cls.CAPPED_BY_RISK,
                   "capped_by_risk": cls.CAPPED_BY_RISK, "capped": cls.CAPPED_BY_RISK}
        if key not in aliases:
            raise ValueError(f"unknown schedule {text!r}")
        return aliases[key]


class Termination(enum.Enum):
    MAX_STEPS = "max_steps"
    STATIONARITY = "stationarity"
    RISK_TARGET = "risk_target"


@dataclass(frozen=True)
class TrainConfig:
    eta0: float = 0.1
    schedule: Schedule = Schedule.CONSTANT
    max_steps: int = 1000
    lam: float = 0.0
    r: float = 2.0
    loss: LossKind = LossKind.EXPONENTIAL
    # None: snapshot at t = 0 and powers of two
    snapshot_every: Optional[int] = None
    seed: int = 0
    stop_grad_norm: float = 0.0
    stop_log_risk: Optional[float] = None
    init_scale: float = 1.0

    def __post_init__(self):
        if not self.eta0 > 0:
            raise DomainError("eta0 must be positive")
        if self.max_steps < 1:
            raise DomainError("max_steps must be at least 1")
        if self.lam < 0 or self.r <= 0:
            raise DomainError("need lam >= 0 and r > 0")
        if self.snapshot_every is not None and self.snapshot_every < 1:
            raise DomainError("snapshot_every must be positive")
        if self.stop_grad_norm < 0:
            raise DomainError("stop_grad_norm must be nonnegative")


@dataclass(frozen=True)
class Snapshot:
    t: int
    log_risk: float
    norm_theta: float
    gamma_tilde: float
    separated: bool
    a_t: float
    b_t: float
    eta_t: float
    dir_gap: Optional[float] = None
    nonsep_gap: Optional[float] = None
    grad_norm: float = 0.0

    def csv_row(self) -> list:
        def f(v):
            return "" if v is None else repr(float(v))
        return [str(self.t), f(self.log_risk), f(self.norm_theta), f(self.gamma_tilde),
                "1" if self.separated else "0", f(self.a_t), f(self.b_t), f(self.eta_t),
                f(self.dir_gap), f(self.nonsep_gap)]

    @classmethod
    def from_csv_row(cls, row: dict) -> "Snapshot":
        def opt(key):
            return float(row[key]) if row.get(key, "") != "" else None
        return cls(int(row["t"]), float(row["log_risk"]), float(row["norm_theta"]),
                   float(row["gamma_tilde"]), row["separated"] == "1", float(row["a_t"]),
                   float(row["b_t"]), float(row["eta_t"]), opt("dir_gap"), opt("nonsep_gap"))


@dataclass
class Trajectory:
    snapshots: List[Snapshot]
    final_theta: np.ndarray
    termination: Termination
    config: Optional[TrainConfig] = None
    linear: bool = True

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRAJECTORY_HEADER)
            for s in self.snapshots:
                writer.writerow(s.csv_row())

    @staticmethod
    def read_snapshots(path) -> List[Snapshot]:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != TRAJECTORY_HEADER:
                raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
            return [Snapshot.from_csv_row(r) for r in reader]

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(s, name) is None else getattr(s, name) for s in self.snapshots],
                        dtype=float)

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]


class DivergenceError(ArithmeticError):
    """Parameters blew up; usually the learning rate is too large."""

    def __init__(self, step: int, last_snapshot: Optional[Snapshot], lam: Optional[float] = None):
        msg = f"parameters diverged at step {step}"
        if lam is not None:
            msg += f" (lambda = {lam:g})"
        super().__init__(msg)
        self.step = step
        self.last_snapshot = last_snapshot
        self.lam = lam


def capped_learning_rate(eta0: float, log_risk: float, alpha: float) -> float:
    """min(eta0, 1 / (L * max(1, log(1/L))^(3 - 2/alpha))), computed from log L."""
    power = 3.0 - 2.0 / alpha
    log_cap = -log_risk - power * math.log(max(1.0, -log_risk))
    return eta0 if log_cap > math.log(eta0) else math.exp(log_cap)


def _is_snapshot_step(t: int, every: Optional[int]) -> bool:
    if every is None:
        return t == 0 or (t & (t - 1)) == 0
    return t % every == 0


def train(predictor, data: Dataset, w: WeightVector, config: TrainConfig, *,
          certificate: Optional[MarginCertificate] = None,
          restricted: Optional[RestrictedOptimum] = None,
          theta0=None) -> Trajectory:
    """Run theta <- theta - eta_t * grad L_lam(theta; w) from a seeded start.

    ``certificate`` enables the direction gap to theta*, ``restricted`` the
    gap between the projection onto the non-separable span and theta~.
    """
    if theta0 is None:
        theta0 = predictor.init(config.seed, config.init_scale)
    theta = _check_inputs(predictor, theta0, data, w, config.lam, config.r).copy()
    X, y = data.features, data.labels
    log_w = w.log_w
    loss = config.loss
    exp_loss = loss is LossKind.EXPONENTIAL
    log_n = math.log(data.n)
    lam, r = config.lam, config.r
    log_lam = math.log(lam) if lam > 0 else -math.inf
    alpha = predictor.alpha
    capped = config.schedule is Schedule.CAPPED_BY_RISK
    theta_star = None if certificate is None or certificate.theta_star is None else certificate.theta_star
    basis = tilde = None
    if restricted is not None:
        basis, tilde = restricted.basis, restricted.theta_tilde

    snapshots: List[Snapshot] = []
    termination = Termination.MAX_STEPS
    t = 0
    while True:
        margins = y * predictor.outputs(theta, X)
        neg = -margins
        if exp_loss:
            a_log = log_w + neg
            shift = float(a_log.max())
            e = np.exp(a_log - shift)
            s = float(e.sum())
            log_data = shift + math.log(s) - log_n
            coef = e
            log_scale = shift - log_n
        else:
            a_log = log_w + loss.log_loss(margins)
            shift = float(a_log.max())
            log_data = shift + math.log(float(np.exp(a_log - shift).sum())) - log_n
            c_log = log_w + loss.log_neg_derivative(margins)
            cshift = float(c_log.max())
            coef = np.exp(c_log - cshift)
            log_scale = cshift - log_n
        g = predictor.vjp(theta, X, -coef * y)
        if log_scale > 700.0:
            # loss terms beyond double range: the iterate has already blown up
            raise DivergenceError(t, snapshots[-1] if snapshots else None, lam if lam > 0 else None)
        nrm = math.sqrt(float(theta @ theta))
        if lam > 0 and nrm > 0:
            log_reg = log_lam + r * math.log(nrm)
            log_risk = max(log_data, log_reg) + math.log1p(math.exp(-abs(log_data - log_reg)))
            grad = math.exp(log_scale) * g + regularizer_gradient(theta, lam, r)
            grad_norm = math.sqrt(float(grad @ grad))
            log_grad_norm = math.log(grad_norm) if grad_norm > 0 else -math.inf
        else:
            log_risk = log_data
            gn = math.sqrt(float(g @ g))
            log_grad_norm = log_scale + math.log(gn) if gn > 0 else -math.inf
            grad = math.exp(log_scale) * g
            grad_norm = math.exp(log_grad_norm) if log_grad_norm > -745 else 0.0
        eta = capped_learning_rate(config.eta0, log_risk, alpha) if capped else config.eta0

        stop = None
        if t >= config.max_steps:
            stop = Termination.MAX_STEPS
        elif config.stop_grad_norm > 0 and grad_norm <= config.stop_grad_norm:
            stop = Termination.STATIONARITY
        elif config.stop_log_risk is not None and log_risk <= config.stop_log_risk:
            stop = Termination.RISK_TARGET

        if stop is not None or _is_snapshot_step(t, config.snapshot_every):
            if nrm > 0:
                gamma_tilde = float(margins.min()) / nrm ** alpha
                dir_gap = None if theta_star is None else float(np.linalg.norm(theta / nrm - theta_star))
            else:
                gamma_tilde = math.nan
                dir_gap = None if theta_star is None else float(np.linalg.norm(theta_star))
            nonsep_gap = None
            if basis is not None:
                nonsep_gap = float(np.linalg.norm(basis @ (basis.T @ theta) - tilde))
            log_a = math.log(eta) + log_risk
            snapshots.append(Snapshot(
                t=t, log_risk=log_risk, norm_theta=nrm, gamma_tilde=gamma_tilde,
                separated=bool(np.all(margins > 0)),
                a_t=math.exp(log_a) if log_a > -745 else 0.0,
                b_t=math.exp(log_grad_norm - log_risk) if log_grad_norm > -math.inf else 0.0,
                eta_t=eta, dir_gap=dir_gap, nonsep_gap=nonsep_gap, grad_norm=grad_norm))
        if stop is not None:
            termination = stop
            break

        theta = theta - eta * grad
        t += 1
        if not (np.all(np.isfinite(theta)) and np.max(np.abs(theta)) <= DIVERGENCE_LIMIT):
            raise DivergenceError(t, snapshots[-1] if snapshots else None, lam if lam > 0 else None)

    return Trajectory(snapshots, theta, termination, config, isinstance(predictor, LinearPredictor))


@dataclass
class PathPoint:
    lam: float
    theta: np.ndarray
    gamma_tilde: float
    log_risk: float
    trajectory: Trajectory = field(repr=False)


def weak_reg_path(predictor, data: Dataset, w: WeightVector, lambdas, config: TrainConfig, *,
                  theta0=None, stop_grad_norm: float = 1e-8,
                  certificate: Optional[MarginCertificate] = None) -> List[PathPoint]:
    """Minimize L + lam ||theta||^r along a decreasing lam schedule, warm-starting each stage."""
    lambdas = [float(v) for v in lambdas]
    if not lambdas or any(v <= 0 for v in lambdas):
        raise DomainError("lambda schedule must be non-empty and positive")
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise DomainError("lambda schedule must be strictly decreasing")
    theta = predictor.init(config.seed, config.init_scale) if theta0 is None else np.asarray(theta0, float)
    out = []
    for lam in lambdas:
        cfg = replace(config, lam=lam, stop_grad_norm=stop_grad_norm)
        try:
            traj = train(predictor, data, w, cfg, certificate=certificate, theta0=theta)
        except DivergenceError as exc:
            raise DivergenceError(exc.step, exc.last_snapshot, lam) from exc
        theta = traj.final_theta
        out.append(PathPoint(lam, theta.copy(), traj.final.gamma_tilde, traj.final.log_risk, traj))
    return out


@dataclass
class EnvelopeReport:
    applicable: bool
    violations: List[int]
    max_violation: float
    norm_violations: List[int] = field(default_factory=list)
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.applicable and not self.violations and not self.norm_violations


def boosting_envelope_check(trajectory: Trajectory, rel_slack: float = 1e-12) -> EnvelopeReport:
    """Per-step risk-decrease and norm-growth envelopes of a linear GD run.

    Checks L_{t+1} <= L_t (1 - a_t (1 - a_t/2) b_t^2) in log space and
    ||theta_{t+1}|| <= sum_{j<=t} a_j b_j.  ``max_violation`` is the largest
    positive excess (log-risk units for the first, norm units for the second).
    """
    cfg = trajectory.config
    snaps = trajectory.snapshots
    if cfg is not None and cfg.lam > 0:
        return EnvelopeReport(False, [], 0.0, reason="regularized run")
    if not trajectory.linear:
        return EnvelopeReport(False, [], 0.0, reason="non-linear predictor")
    ts = [s.t for s in snaps]
    if ts != list(range(ts[0], ts[0] + len(ts))) or ts[0] != 0:
        return EnvelopeReport(False, [], 0.0, reason="needs a snapshot at every step from t = 0")
    if snaps[0].norm_theta != 0.0:
        return EnvelopeReport(False, [], 0.0, reason="norm envelope needs theta_0 = 0")
    if any(s.a_t > 1.0 for s in snaps[:-1]):
        return EnvelopeReport(False, [], 0.0, reason="a_t > 1 at some step")

    risk_viol, norm_viol = [], []
    worst = 0.0
    partial = 0.0
    for cur, nxt in zip(snaps, snaps[1:]):
        a, b = cur.a_t, cur.b_t
        log_a = math.log(cur.eta_t) + cur.log_risk
        a_exact = math.exp(log_a) if log_a > -745 else 0.0
        factor = 1.0 - a_exact * (1.0 - a_exact / 2.0) * b * b
        slack = rel_slack * max(1.0, abs(cur.log_risk))
        rhs = cur.log_risk + math.log(factor) if factor > 0 else -math.inf
        excess = nxt.log_risk - rhs
        if excess > slack:
            risk_viol.append(cur.t)
        worst = max(worst, excess if math.isfinite(excess) else math.inf)
        partial += a * b
        excess_n = nxt.norm_theta - partial
        if excess_n > rel_slack * max(1.0, partial):
            norm_viol.append(cur.t)
        worst = max(worst, excess_n)
    return EnvelopeReport(True, risk_viol, max(worst, 0.0), norm_viol)

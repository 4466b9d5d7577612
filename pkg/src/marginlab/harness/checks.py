"""Verification checks; each turns one run into exactly one verdict."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .. import bounds
from ..core import DomainError, WeightVector
from ..geometry import MarginCertificate, RestrictedOptimum, SeparabilitySplit
from ..predictors import LinearPredictor
from ..trainer import Snapshot, Termination, Trajectory, boosting_envelope_check
from .generators import Generated, target_sample
from .scenario import ScenarioSpec

PASS, FAIL, INAPPLICABLE, ERROR = "PASS", "FAIL", "INAPPLICABLE", "ERROR"


@dataclass
class PathRecord:
    lam: float
    gamma_tilde: float
    log_risk: float
    snapshots: List[Snapshot]


@dataclass
class RunState:
    spec: ScenarioSpec
    generated: Generated
    weights: WeightVector
    predictor: object
    snapshots: List[Snapshot]
    final_theta: np.ndarray
    termination: Termination = Termination.MAX_STEPS
    certificate: Optional[MarginCertificate] = None
    split: Optional[SeparabilitySplit] = None
    restricted: Optional[RestrictedOptimum] = None
    log_risk_star: Optional[float] = None
    path: Optional[List[PathRecord]] = None
    # filled by the Theorem1 check so the runner can write the sweep curve
    gamma_sweep: Optional[bounds.GammaSweep] = None

    @property
    def linear(self) -> bool:
        return isinstance(self.predictor, LinearPredictor)

    @property
    def data(self):
        return self.generated.data


@dataclass
class Verdict:
    name: str
    status: str
    values: Dict[str, object] = field(default_factory=dict)
    message: str = ""


def _gap_values(snaps, attr):
    return [(s.t, getattr(s, attr)) for s in snaps if getattr(s, attr) is not None]


def check_claim1(st: RunState) -> Verdict:
    if st.certificate is not None and not st.certificate.separable:
        return Verdict("Claim1", INAPPLICABLE, message="data is not linearly separable")
    first = next((k for k, s in enumerate(st.snapshots) if s.separated), None)
    if first is None:
        if st.linear:
            return Verdict("Claim1", FAIL, message="run never separated the data")
        return Verdict("Claim1", INAPPLICABLE, message="network never separated the data")
    after = [s.norm_theta for s in st.snapshots[first:]]
    drops = [st.snapshots[first + k + 1].t for k in range(len(after) - 1) if not after[k + 1] > after[k]]
    min_norm = st.spec.option("claim1.min_norm", 0.0)
    final = after[-1]
    ok = not drops and final > min_norm
    return Verdict("Claim1", PASS if ok else FAIL, {
        "first_separated_t": st.snapshots[first].t, "final_norm": final, "min_norm": min_norm,
        "non_increasing_steps": len(drops)})


def check_prop1(st: RunState) -> Verdict:
    if not st.linear:
        return Verdict("Prop1", INAPPLICABLE, message="needs a linear predictor")
    if st.certificate is None or not st.certificate.separable:
        return Verdict("Prop1", INAPPLICABLE, message="data is not linearly separable")
    if st.spec.train.lam > 0:
        return Verdict("Prop1", INAPPLICABLE, message="regularized run")
    tol = st.spec.option("prop1.tol", 0.05)
    sound = bounds.prop1_soundness(st.snapshots, st.certificate, st.weights)
    final_gap = st.snapshots[-1].dir_gap
    ok = final_gap is not None and final_gap <= tol and sound.passed
    return Verdict("Prop1", PASS if ok else FAIL, {
        "final_dir_gap": final_gap, "tol": tol, "bound_checked": sound.checked,
        "bound_violations": len(sound.violations), "worst_gap2_over_bound": sound.worst_ratio,
        "gamma_star": st.certificate.gamma_star})


def check_prop2(st: RunState) -> Verdict:
    if not st.linear:
        return Verdict("Prop2", INAPPLICABLE, message="needs a linear predictor")
    if st.spec.train.lam > 0:
        return Verdict("Prop2", INAPPLICABLE, message="regularized run")
    if st.split is None or not st.split.nonsep_indices or st.restricted is None:
        return Verdict("Prop2", INAPPLICABLE, message="non-separable part is empty")
    tol = st.spec.option("prop2.tol", 1e-2)
    gaps = _gap_values(st.snapshots, "nonsep_gap")
    final_gap = gaps[-1][1]
    env = bounds.prop2_risk_envelope(st.snapshots, st.restricted.strong_convexity_omega, st.log_risk_star)
    values = {"final_nonsep_gap": final_gap, "tol": tol, "omega": st.restricted.strong_convexity_omega,
              "theta_tilde": " ".join(repr(float(v)) for v in st.restricted.theta_tilde),
              "envelope_violations": len(env.violations), "early_envelope_notes": len(env.notes)}
    ok = final_gap <= tol and env.passed
    ts = np.array([t for t, _ in gaps], dtype=float)
    if ts.max() >= 1000:
        fit = bounds.log2_rate_fit(ts, [g for _, g in gaps])
        values.update({"rate_K": fit.K, "rate_violations": len(fit.violations)})
        ok = ok and fit.passed
    return Verdict("Prop2", PASS if ok else FAIL, values)


def check_prop3_path(st: RunState) -> Verdict:
    if not st.path:
        return Verdict("Prop3Path", INAPPLICABLE, message="no lambda_schedule")
    slack = st.spec.option("prop3.slack", 1e-3)
    gammas = [p.gamma_tilde for p in st.path]
    monotone = all(b >= a - slack for a, b in zip(gammas, gammas[1:]))
    values = {"lambdas": " ".join(repr(p.lam) for p in st.path),
              "gamma_path": " ".join(repr(g) for g in gammas), "monotone": monotone}
    ok = monotone
    if st.certificate is not None and st.certificate.separable:
        gamma_ref = st.certificate.gamma_star
        frac = st.spec.option("prop3.final_fraction", 0.95)
        values.update({"gamma_star": gamma_ref, "final_over_gamma_star": gammas[-1] / gamma_ref})
        ok = ok and gammas[-1] >= frac * gamma_ref
    else:
        gamma_ref = max(max((s.gamma_tilde for s in p.snapshots if s.gamma_tilde == s.gamma_tilde), default=-math.inf)
                        for p in st.path)
        values["gamma_hat_star"] = gamma_ref
    if gamma_ref > 0:
        floor = bounds.finite_step_margin_floor(2.0, st.predictor.alpha, st.spec.train.r, gamma_ref, 0.1)
        bad = checked = 0
        for p in st.path:
            for s in p.snapshots:
                if s.log_risk <= p.log_risk + math.log(2.0):
                    checked += 1
                    bad += not s.gamma_tilde >= floor
        values.update({"floor": floor, "floor_checked": checked, "floor_violations": bad})
        ok = ok and bad == 0
    return Verdict("Prop3Path", PASS if ok else FAIL, values)


def check_theorem1(st: RunState) -> Verdict:
    gen = st.generated
    if st.data.density_ratios is None or gen.oracle.pair is None:
        return Verdict("Theorem1", INAPPLICABLE, message="needs density ratios")
    if not np.linalg.norm(st.final_theta) > 0:
        return Verdict("Theorem1", INAPPLICABLE, message="theta is zero")
    m = st.spec.option("theorem1.test_samples", 10_000)
    delta = st.spec.option("theorem1.delta", 0.05)
    X_t, y_t = target_sample(gen, m, st.spec.seed + 7919)
    test_err = bounds.target_error(st.predictor, st.final_theta, X_t, y_t)
    chi2 = bounds.chi2_divergence(gen.oracle.pair)
    sweep = bounds.optimal_gamma_sweep(st.data, st.predictor, st.final_theta, delta,
                                       chi2=chi2.value, pool=X_t)
    st.gamma_sweep = sweep
    totals = np.array([r.total for r in sweep.curve])
    margins = bounds.normalized_margins(st.predictor, st.final_theta, st.data)
    pos = margins[margins > 0]
    min_pos = float(pos.min()) if pos.size else math.nan
    best = next(r for r in sweep.curve if r.gamma_used == sweep.gamma_opt)
    valid = bool(np.all(totals >= test_err))
    return Verdict("Theorem1", PASS if valid else FAIL, {
        "target_error": test_err, "test_samples": m, "chi2": chi2.value, "chi2_method": chi2.method,
        "C_sup_norm": best.C_sup_norm, "gamma_opt": sweep.gamma_opt, "total_at_opt": sweep.total_at_opt,
        "term_I": best.term_I, "term_II": best.term_II, "epsilon": best.epsilon,
        "term_II_lemma": best.term_II_lemma, "epsilon_fraction": best.epsilon / best.total,
        "min_total_minus_error": float(totals.min() - test_err), "min_positive_margin": min_pos,
        "gamma_opt_at_least_min_margin": bool(pos.size and sweep.gamma_opt >= min_pos),
        "grid_size": len(sweep.curve)})


def check_envelope(st: RunState) -> Verdict:
    traj = Trajectory(st.snapshots, st.final_theta, st.termination, st.spec.train, st.linear)
    rep = boosting_envelope_check(traj)
    if not rep.applicable:
        return Verdict("Envelope", INAPPLICABLE, message=rep.reason)
    return Verdict("Envelope", PASS if rep.passed else FAIL, {
        "steps": len(st.snapshots) - 1, "risk_violations": len(rep.violations),
        "norm_violations": len(rep.norm_violations), "max_violation": rep.max_violation})


CHECK_FUNCS: Dict[str, Callable[[RunState], Verdict]] = {
    "Prop1": check_prop1,
    "Prop2": check_prop2,
    "Prop3Path": check_prop3_path,
    "Theorem1": check_theorem1,
    "Envelope": check_envelope,
    "Claim1": check_claim1,
}


def run_checks(st: RunState) -> List[Verdict]:
    out = []
    for name in st.spec.checks:
        try:
            out.append(CHECK_FUNCS[name](st))
        except (DomainError, ValueError, ArithmeticError) as exc:
            out.append(Verdict(name, ERROR, message=f"{type(exc).__name__}: {exc}"))
    return out

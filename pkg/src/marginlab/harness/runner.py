"""Scenario orchestration: data, oracles, training, checks and artifacts."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..core import Dataset, WeightVector, log_data_risk, read_vector, write_vector
from ..geometry import max_margin_linear, maximal_separable_subset, nonsep_optimum
from ..predictors import LinearPredictor, load_params, save_params
from ..trainer import DivergenceError, Termination, Trajectory, train, weak_reg_path
from .checks import ERROR, FAIL, INAPPLICABLE, PASS, PathRecord, RunState, Verdict, run_checks
from .generators import ConfigError, make_weights
from .scenario import ScenarioSpec, load_spec

log = logging.getLogger(__name__)

REPORT_NAME = "report.txt"
PLOT_DIR = "plots"
SUMMARY_HEADER = ["id", "seed", "final_gamma_tilde", "final_dir_gap", "theorem1_slack", "fails", "verdicts"]


@dataclass
class RunArtifacts:
    out_dir: Path
    trajectory_csv: Optional[Path]
    report: Path
    plot_data: List[Path]
    verdicts: List[Verdict] = field(default_factory=list)
    state: Optional[RunState] = field(default=None, repr=False)

    @property
    def fail_count(self) -> int:
        return sum(v.status in (FAIL, ERROR) for v in self.verdicts)


def exit_code(fails: int) -> int:
    return min(int(fails), 125)


# -- oracles ------------------------------------------------------------------

def _weights(spec: ScenarioSpec, gen) -> WeightVector:
    args = dict(spec.weight_args)
    return make_weights(spec.weight_scheme, gen, M=args.pop("M", 10.0), values=args.pop("values", None),
                        seed=spec.seed + 104_729)


def _oracles(spec: ScenarioSpec, gen, w: WeightVector, linear: bool):
    cert = split = restricted = log_risk_star = None
    if not linear:
        return cert, split, restricted, log_risk_star
    data = gen.data
    cert = max_margin_linear(data)
    if not cert.separable or "Prop2" in spec.checks:
        split = maximal_separable_subset(data)
        if split.nonsep_indices:
            idx = list(split.nonsep_indices)
            sub = data.subset(idx)
            w_sub = WeightVector(w.w[idx], w.bound_M)
            restricted = nonsep_optimum(sub, w_sub, spec.train.loss, n_total=data.n)
            margins = sub.labels * (sub.features @ restricted.theta_tilde)
            log_risk_star = log_data_risk(margins, w_sub.log_w, spec.train.loss) + math.log(sub.n / data.n)
    return cert, split, restricted, log_risk_star


def _prepare(spec: ScenarioSpec):
    gen = spec.generate()
    w = _weights(spec, gen)
    predictor = spec.build_predictor(gen.data.d)
    cert, split, restricted, lrs = _oracles(spec, gen, w, isinstance(predictor, LinearPredictor))
    return gen, w, predictor, cert, split, restricted, lrs


# -- artifact writers -----------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_report(path: Path, spec: ScenarioSpec, verdicts: Sequence[Verdict], header: Dict[str, object]) -> None:
    lines = [f"scenario = {spec.id}", f"seed = {spec.seed}", f"generator = {spec.generator}",
             f"weights = {spec.weight_scheme}", f"predictor = {spec.predictor}"]
    lines += [f"{k} = {_fmt(v)}" for k, v in header.items()]
    for v in verdicts:
        lines += ["", f"[{v.name}]", f"verdict = {v.status}"]
        if v.message:
            lines.append(f"message = {v.message}")
        lines += [f"{k} = {_fmt(val)}" for k, val in v.values.items()]
    counts = {s: sum(v.status == s for v in verdicts) for s in (PASS, FAIL, INAPPLICABLE, ERROR)}
    lines += ["", "[summary]"] + [f"{k} = {n}" for k, n in counts.items()]
    path.write_text("\n".join(lines) + "\n")


def read_report(path) -> dict:
    """Parse a report back into {'header': {...}, 'checks': {name: {...}}}."""
    header, checks = {}, {}
    current = header
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1]
            current = checks.setdefault(name, {})
            continue
        key, _, value = line.partition("=")
        current[key.strip()] = value.strip()
    summary = checks.pop("summary", {})
    return {"header": header, "checks": checks, "summary": summary}


def _write_dat(path: Path, xs, ys) -> int:
    rows = [(x, y) for x, y in zip(xs, ys) if x is not None and y is not None
            and math.isfinite(x) and math.isfinite(y)]
    path.write_text("".join(f"{x!r} {y!r}\n" for x, y in rows))
    return len(rows)


def write_plots(out: Path, st: RunState) -> List[Path]:
    pdir = out / PLOT_DIR
    pdir.mkdir(parents=True, exist_ok=True)
    ts = [float(s.t) for s in st.snapshots]
    entries = []
    for col in ("norm_theta", "log_risk", "gamma_tilde", "dir_gap", "nonsep_gap"):
        ys = [getattr(s, col) for s in st.snapshots]
        if all(y is None for y in ys):
            continue
        f = pdir / f"{col}.dat"
        entries.append((f, "t", col, _write_dat(f, ts, [None if y is None else float(y) for y in ys])))
    if st.path:
        f = pdir / "path_gamma.dat"
        entries.append((f, "lambda", "gamma_tilde", _write_dat(f, [p.lam for p in st.path],
                                                                 [p.gamma_tilde for p in st.path])))
    if st.gamma_sweep is not None:
        f = pdir / "bound_total.dat"
        curve = st.gamma_sweep.curve
        entries.append((f, "gamma", "total", _write_dat(f, [r.gamma_used for r in curve], [r.total for r in curve])))
    manifest = pdir / "manifest.txt"
    manifest.write_text("".join(f"{p.name} {x} {y} {n}\n" for p, x, y, n in entries))
    return [p for p, *_ in entries] + [manifest]


def _write_path(out: Path, path: List[PathRecord]) -> None:
    with open(out / "path.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["stage", "lam", "gamma_tilde", "log_risk"])
        for k, p in enumerate(path):
            writer.writerow([k, repr(p.lam), repr(p.gamma_tilde), repr(p.log_risk)])
    for k, p in enumerate(path):
        Trajectory(p.snapshots, np.zeros(0), Termination.MAX_STEPS).to_csv(out / f"path_{k}.csv")


def _read_path(out: Path) -> Optional[List[PathRecord]]:
    f = out / "path.csv"
    if not f.exists():
        return None
    with open(f, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [PathRecord(float(r["lam"]), float(r["gamma_tilde"]), float(r["log_risk"]),
                       Trajectory.read_snapshots(out / f"path_{int(r['stage'])}.csv")) for r in rows]


def _header(st: RunState) -> dict:
    fin = st.snapshots[-1]
    head = {"termination": st.termination.value, "steps": fin.t, "final_log_risk": fin.log_risk,
            "final_norm_theta": fin.norm_theta, "final_gamma_tilde": fin.gamma_tilde}
    if fin.dir_gap is not None:
        head["final_dir_gap"] = fin.dir_gap
    if st.certificate is not None:
        head["separable"] = st.certificate.separable
        head["gamma_star"] = st.certificate.gamma_star
        head["duality_gap"] = st.certificate.duality_gap
    if st.split is not None:
        head["sep_indices"] = " ".join(map(str, st.split.sep_indices)) or "-"
        head["nonsep_indices"] = " ".join(map(str, st.split.nonsep_indices)) or "-"
    return head


def _finish(out: Path, st: RunState) -> RunArtifacts:
    verdicts = run_checks(st)
    if st.gamma_sweep is not None:
        st.gamma_sweep.to_csv(out / "gamma_sweep.csv")
    plots = write_plots(out, st)
    report = out / REPORT_NAME
    write_report(report, st.spec, verdicts, _header(st))
    return RunArtifacts(out, out / "trajectory.csv", report, plots, verdicts, st)


def _error_artifacts(out: Path, spec: ScenarioSpec, exc: Exception) -> RunArtifacts:
    msg = f"{type(exc).__name__}: {exc}"
    verdicts = [Verdict(name, ERROR, message=msg) for name in spec.checks]
    report = out / REPORT_NAME
    write_report(report, spec, verdicts, {"error": msg})
    traj = out / "trajectory.csv"
    return RunArtifacts(out, traj if traj.exists() else None, report, [], verdicts)


# -- entry points -----------------------------------------------------------------

def generate_scenario_data(spec: ScenarioSpec, out_dir=None) -> Path:
    out = Path(out_dir) if out_dir is not None else spec.out_dir
    out.mkdir(parents=True, exist_ok=True)
    gen = spec.generate()
    gen.data.to_csv(out / "dataset.csv")
    write_vector(out / "weights.txt", _weights(spec, gen).w)
    return out


def run_scenario(spec: ScenarioSpec, out_dir=None) -> RunArtifacts:
    """Generate, train, check and write every artifact into the output directory."""
    out = Path(out_dir) if out_dir is not None else spec.out_dir
    out.mkdir(parents=True, exist_ok=True)
    try:
        gen, w, predictor, cert, split, restricted, lrs = _prepare(spec)
        gen.data.to_csv(out / "dataset.csv")
        write_vector(out / "weights.txt", w.w)
        traj = train(predictor, gen.data, w, spec.train, certificate=cert, restricted=restricted)
        traj.to_csv(out / "trajectory.csv")
        save_params(out / "theta.params", predictor, traj.final_theta)
        path = None
        if spec.lambda_schedule:
            pts = weak_reg_path(predictor, gen.data, w, spec.lambda_schedule, spec.train,
                                certificate=cert if cert is not None and cert.separable else None)
            path = [PathRecord(p.lam, p.gamma_tilde, p.log_risk, p.trajectory.snapshots) for p in pts]
            _write_path(out, path)
    except (ConfigError, DivergenceError, ArithmeticError, ValueError) as exc:
        log.error("scenario %s failed: %s", spec.id, exc)
        return _error_artifacts(out, spec, exc)
    st = RunState(spec, gen, w, predictor, traj.snapshots, traj.final_theta, traj.termination,
                  cert, split, restricted, lrs, path)
    return _finish(out, st)


def verify_scenario(spec: ScenarioSpec, out_dir=None) -> RunArtifacts:
    """Re-run the checks on the artifacts an earlier run left behind."""
    out = Path(out_dir) if out_dir is not None else spec.out_dir
    if not out.is_dir():
        raise ConfigError(f"{out}: no run directory to verify")
    try:
        gen, w, predictor, cert, split, restricted, lrs = _prepare(spec)
        stored = Dataset.from_csv(out / "dataset.csv")
        if not (np.array_equal(stored.features, gen.data.features) and np.array_equal(stored.labels, gen.data.labels)):
            raise ConfigError(f"{out}: stored dataset does not match the scenario")
        stored_w = read_vector(out / "weights.txt")
        if not np.array_equal(stored_w, w.w):
            raise ConfigError(f"{out}: stored weights do not match the scenario")
        snaps = Trajectory.read_snapshots(out / "trajectory.csv")
        _, theta = load_params(out / "theta.params")
    except (OSError, ConfigError, ValueError, ArithmeticError) as exc:
        return _error_artifacts(out, spec, exc)
    termination = Termination.MAX_STEPS
    if (out / REPORT_NAME).exists():
        termination = Termination(read_report(out / REPORT_NAME)["header"].get("termination", "max_steps"))
    st = RunState(spec, gen, w, predictor, snaps, theta, termination, cert, split, restricted, lrs,
                  _read_path(out))
    return _finish(out, st)


def summary_row(spec_id: str, seed: int, report: dict) -> list:
    head, checks = report["header"], report["checks"]
    slack = checks.get("Theorem1", {}).get("min_total_minus_error", "")
    fails = sum(c.get("verdict") in (FAIL, ERROR) for c in checks.values())
    verdicts = ";".join(f"{k}={c.get('verdict')}" for k, c in checks.items())
    return [spec_id, str(seed), head.get("final_gamma_tilde", ""), head.get("final_dir_gap", ""),
            slack, str(fails), verdicts]


def _sweep_one(spec_path: str):
    spec = load_spec(spec_path)
    art = run_scenario(spec)
    return summary_row(spec.id, spec.seed, read_report(art.report))


def sweep(spec_paths: Sequence, parallelism: int = 1, summary_csv=None) -> List[list]:
    """Run scenarios (up to ``parallelism`` at once); rows come back sorted by scenario id."""
    if parallelism < 1:
        raise ConfigError("parallelism must be positive")
    paths = [str(p) for p in spec_paths]
    if not paths:
        rows = []
    elif parallelism == 1:
        rows = [_sweep_one(p) for p in paths]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(_sweep_one, paths))
    rows.sort(key=lambda r: (r[0], int(r[1])))
    if summary_csv is not None:
        with open(summary_csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SUMMARY_HEADER)
            writer.writerows(rows)
    return rows


def collect_reports(root) -> List[tuple]:
    """(directory, parsed report) for every report under ``root``, sorted by path."""
    root = Path(root)
    found = sorted(root.rglob(REPORT_NAME))
    return [(p.parent, read_report(p)) for p in found]

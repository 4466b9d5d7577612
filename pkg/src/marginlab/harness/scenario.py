"""Scenario files: flat ``key = value`` text with dotted section keys.

Example::

    id = planted_prop1
    seed = 3
    generator = PlantedMargin
    generator.gamma = 0.5
    weights = RandomBox
    weights.M = 10
    predictor = Linear
    train.eta0 = 0.1
    train.max_steps = 100000
    checks = Prop1, Claim1
"""

from __future__ import annotations

import inspect
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

from ..core import LossKind
from ..predictors import HomogeneousMLP, LinearPredictor
from ..trainer import Schedule, TrainConfig
from .generators import GENERATORS, ConfigError, Generated

CHECKS = ("Prop1", "Prop2", "Prop3Path", "Theorem1", "Envelope", "Claim1")
SEED_ENV = "MARGINLAB_SEED"


def parse_kv(text: str, source: str = "<string>") -> Dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _num(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def _floats(text: str) -> List[float]:
    return [float(t) for t in text.replace(",", " ").split()]


@dataclass
class ScenarioSpec:
    id: str
    generator: str
    generator_args: dict = field(default_factory=dict)
    weight_scheme: str = "default"
    weight_args: dict = field(default_factory=dict)
    predictor: str = "Linear"
    mlp_dims: Optional[List[int]] = None
    activation: str = "relu"
    train: TrainConfig = field(default_factory=TrainConfig)
    lambda_schedule: Optional[List[float]] = None
    checks: tuple = ()
    seed: int = 0
    out_dir: Path = Path("runs")
    options: dict = field(default_factory=dict)

    def generate(self, seed: Optional[int] = None) -> Generated:
        fn = GENERATORS[self.generator.lower()]
        try:
            inspect.signature(fn).bind(0, **self.generator_args)
        except TypeError as exc:
            raise ConfigError(f"bad arguments for {self.generator}: {exc}") from exc
        return fn(self.seed if seed is None else seed, **self.generator_args)

    def build_predictor(self, d: int):
        if self.predictor.lower() == "linear":
            return LinearPredictor(d)
        dims = list(self.mlp_dims or [d, 16, 1])
        if dims[0] != d:
            raise ConfigError(f"predictor.dims starts with {dims[0]} but the data has d = {d}")
        return HomogeneousMLP(dims, self.activation)

    def option(self, key: str, default):
        return type(default)(self.options[key]) if key in self.options else default

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return replace(self, seed=seed, train=replace(self.train, seed=seed))


def _train_config(kv: Dict[str, str], seed: int) -> TrainConfig:
    args = {"seed": seed}
    for key, value in kv.items():
        name = key[len("train."):]
        if name == "schedule":
            args[name] = Schedule.parse(value)
        elif name == "loss":
            args[name] = LossKind.parse(value)
        elif name in ("max_steps", "seed"):
            args[name] = int(float(value))
        elif name == "snapshot_every":
            args[name] = None if value.lower() in ("", "none", "pow2") else int(value)
        elif name == "stop_log_risk":
            args[name] = None if value.lower() in ("", "none") else float(value)
        elif name in ("eta0", "lam", "r", "stop_grad_norm", "init_scale"):
            args[name] = float(value)
        else:
            raise ConfigError(f"unknown train option {key!r}")
    return TrainConfig(**args)


def spec_from_mapping(kv: Dict[str, str], base_dir: Path = Path(".")) -> ScenarioSpec:
    kv = dict(kv)
    if "generator" not in kv:
        raise ConfigError("scenario needs a generator")
    gen = kv.pop("generator")
    if gen.lower() not in GENERATORS:
        raise ConfigError(f"unknown generator {gen!r}")
    seed = int(kv.pop("seed", "0"))
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        seed = int(env)
    sid = kv.pop("id", gen.lower())
    checks = tuple(c.strip() for c in kv.pop("checks", "").split(",") if c.strip())
    canon = {c.lower(): c for c in CHECKS}
    bad = [c for c in checks if c.lower() not in canon]
    if bad:
        raise ConfigError(f"unknown checks {bad}")
    checks = tuple(dict.fromkeys(canon[c.lower()] for c in checks))

    gen_args, weight_args, train_kv, options = {}, {}, {}, {}
    weight_scheme, predictor, dims, activation = kv.pop("weights", "default"), kv.pop("predictor", "Linear"), None, "relu"
    lam_sched = None
    out_dir = base_dir / kv.pop("out_dir", f"runs/{sid}")
    for key, value in kv.items():
        if key.startswith("generator."):
            name = key.split(".", 1)[1]
            if name in ("mu", "mu_s", "mu_t", "label_direction"):
                gen_args[name] = _floats(value)
            else:
                gen_args[name] = _num(value)
        elif key.startswith("weights."):
            name = key.split(".", 1)[1]
            weight_args[name] = _floats(value) if name == "values" else float(value)
        elif key == "predictor.dims":
            dims = [int(v) for v in _floats(value)]
        elif key == "predictor.activation":
            activation = value
        elif key.startswith("train."):
            train_kv[key] = value
        elif key == "lambda_schedule":
            lam_sched = _floats(value)
        elif "." in key:
            options[key] = value
        else:
            raise ConfigError(f"unknown key {key!r}")
    if predictor.lower() not in ("linear", "mlp"):
        raise ConfigError(f"unknown predictor {predictor!r}")
    # checks that do not fit the generator are not refused here; they report INAPPLICABLE
    return ScenarioSpec(sid, gen, gen_args, weight_scheme, weight_args, predictor, dims, activation,
                        _train_config(train_kv, seed), lam_sched, checks, seed, out_dir, options)


def load_spec(path) -> ScenarioSpec:
    path = Path(path)
    return spec_from_mapping(parse_kv(path.read_text(), str(path)), path.parent)


def load_sweep_list(path) -> List[Path]:
    """One scenario path per line, relative to the list file; '#' starts a comment."""
    path = Path(path)
    out = []
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append(path.parent / line)
    return out

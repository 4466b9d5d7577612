"""Scenario generation, orchestration and verification."""

from .checks import CHECK_FUNCS, RunState, Verdict, run_checks
from .generators import GENERATORS, ConfigError, Generated, Oracle, make_weights, target_sample
from .runner import RunArtifacts, generate_scenario_data, run_scenario, sweep, verify_scenario
from .scenario import CHECKS, ScenarioSpec, load_spec, load_sweep_list, parse_kv, spec_from_mapping


def generate_data(spec: ScenarioSpec, seed=None) -> Generated:
    """Dataset plus oracle annotations; deterministic in the seed."""
    return spec.generate(seed)

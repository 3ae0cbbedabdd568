"""Discrete-event simulation of off-path spoofing against the resolver."""

from .attacker import AttackerConfig, AttackStrategy, kaminsky_query_name
from .experiment import (
    ExperimentConfig,
    ResultRow,
    run_experiment,
    save_results,
    write_results,
)
from .trial import AttackOutcome, Defense, SimConfig, run_trial

__all__ = [
    "AttackerConfig",
    "AttackStrategy",
    "kaminsky_query_name",
    "Defense",
    "SimConfig",
    "AttackOutcome",
    "run_trial",
    "ExperimentConfig",
    "ResultRow",
    "run_experiment",
    "write_results",
    "save_results",
]

"""Two-stage (Phase I then Phase II) dose-optimization trial simulator."""

from .domain import (Scenario, TrialConfig, UtilityWeights, bundled_scenario,
                     bundled_scenarios, classify_scenario, expected_utility)
from .phase1 import Phase1Design, boin_boundaries
from .phase2 import CutoffSchedule, Hypotheses, Phase2Design, calibrate
from .simulator import ReplicationResult, run_batch, run_trial

__all__ = [
    "Scenario", "TrialConfig", "UtilityWeights", "bundled_scenario", "bundled_scenarios",
    "classify_scenario", "expected_utility", "Phase1Design", "boin_boundaries",
    "CutoffSchedule", "Hypotheses", "Phase2Design", "calibrate", "ReplicationResult",
    "run_batch", "run_trial",
]

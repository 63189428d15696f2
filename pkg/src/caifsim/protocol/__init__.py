"""Protocol roles over a simulated network of CAIF devices."""

from caifsim.protocol.scenarios import ATTACKS, KINDS, ScenarioResult, run_kind

__all__ = ["ATTACKS", "KINDS", "ScenarioResult", "run_kind"]

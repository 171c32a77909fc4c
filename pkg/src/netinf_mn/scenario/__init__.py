"""Scenario language, runner, reports and the command-line front end."""

from netinf_mn.scenario.parser import ParseError, Scenario, parse_scenario, render_scenario
from netinf_mn.scenario.runner import (
    ComparisonTable,
    RunOutput,
    compare_runs,
    resolve_seed,
    run_scenario,
    shape_fingerprint,
)

__all__ = [
    "shipped_scenarios",
    "ComparisonTable",
    "ParseError",
    "RunOutput",
    "Scenario",
    "compare_runs",
    "parse_scenario",
    "render_scenario",
    "resolve_seed",
    "run_scenario",
    "shape_fingerprint",
]


def shipped_scenarios() -> dict:
    """Name -> path of every scenario file bundled with the package."""
    from importlib.resources import files

    root = files("netinf_mn") / "scenarios"
    return {p.name[: -len(".scn")]: p for p in sorted(root.iterdir(), key=lambda p: p.name) if p.name.endswith(".scn")}

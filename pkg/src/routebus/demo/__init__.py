"""Scenario runner wiring agents, routes and services into the demo business process."""

from .allocation import EmptyAgentListError, compute_allocation
from .config import AgentSpec, ContainerSpec, ScenarioConfig
from .runner import Scenario, run_scenario

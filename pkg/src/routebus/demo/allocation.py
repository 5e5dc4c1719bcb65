"""Deterministic account-to-agent allocation.

Every agent runs the same rule over the same inputs, so all agents arrive at
identical views without coordinating: sort both lists, then assign the
account at index ``i`` to the agent at index ``i mod len(agents)``.  The
result is a partition of the accounts (disjoint and covering).
"""

from __future__ import annotations

from typing import Mapping, Sequence


class EmptyAgentListError(ValueError):
    pass


def compute_allocation(
    agents: Sequence[str], accounts: Sequence[str]
) -> Mapping[str, list[str]]:
    if not agents:
        raise EmptyAgentListError("cannot allocate accounts to zero agents")
    ordered_agents = sorted(agents)
    allocation: dict[str, list[str]] = {a: [] for a in ordered_agents}
    for i, account in enumerate(sorted(accounts)):
        allocation[ordered_agents[i % len(ordered_agents)]].append(account)
    return allocation

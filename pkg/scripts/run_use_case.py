#!/usr/bin/env python3
"""Run the email-relevance scenario and narrate what happened.

Uses the built-in default configuration (one container, agents alice and bob,
three seeded users) with a shortened aggregation timeout so the run finishes
in a couple of seconds.  Shows the forwarded mail, the agents' allocation
views, and a membership change after one more user appears.
"""

import time

from routebus.demo import Scenario, ScenarioConfig


def wait_for(predicate, timeout=8.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.05)
    return False


def main() -> int:
    config = ScenarioConfig.default()
    config.aggregate_timeout_ms = 800
    scenario = Scenario(config)
    scenario.start()
    try:
        print("agents ready; seeded users:")
        for user in config.users:
            print(f"  {user['email']}: {user['interests']}")

        wait_for(scenario.forward_events)
        print("\nforwarded mail:")
        for route_id, detail in scenario.forward_events():
            print(f"  {route_id}: {detail}")

        print("\nallocation views (identical across agents):")
        for agent, view in scenario.allocations().items():
            print(f"  {agent}: {view}")

        print("\nadding user d@x (interests: budget) ...")
        scenario.add_user("d@x", "budget")
        wait_for(
            lambda: all(
                view and "d@x" in sum(view.values(), [])
                for view in scenario.allocations().values()
            )
        )
        print("recomputed allocations:")
        for agent, view in scenario.allocations().items():
            print(f"  {agent}: {view}")
    finally:
        scenario.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

#!/usr/bin/env python3
"""Two agent containers talking through the broker bridge.

Container c1 sends a tell to ``c2__bob``; the outbound route extracts the
container id from the receiver name, overrides the broker destination with
it, and c2's inbound route turns the queued exchange back into an agent
message in bob's inbox.
"""

import time

from routebus.agents import AgentMessage
from routebus.demo import Scenario, ScenarioConfig
from routebus.demo.config import AgentSpec, ContainerSpec
from routebus.terms import parse_term, render_term


def main() -> int:
    config = ScenarioConfig(
        containers=[
            ContainerSpec("c1", "static", [AgentSpec("ann")]),
            ContainerSpec("c2", "static", [AgentSpec("bob")]),
        ],
        route_sets={"inter_container"},
    )
    scenario = Scenario(config)
    scenario.build()
    for engine in scenario.engines.values():
        engine.start()
    try:
        sent = AgentMessage(
            "tell", "c1__ann", "c2__bob", parse_term('offer("tickets",2)'), "c1-m1"
        )
        print(f"c1__ann -> c2__bob: {render_term(sent.content)}")
        scenario.containers["c1"].route_local_message(sent)

        bob = scenario.containers["c2"].agents["c2__bob"]
        deadline = time.monotonic() + 4
        while time.monotonic() < deadline and not bob.inbox:
            time.sleep(0.05)
        got = bob.inbox.popleft()
        print(
            f"bob received: illoc_force={got.illoc_force} sender={got.sender} "
            f"content={render_term(got.content)}"
        )
        print("\nbridge events:")
        for record in scenario.log.records():
            if "bridge" in record.route_id:
                print(f"  {record.line()}")
    finally:
        scenario.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

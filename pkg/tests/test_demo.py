import time
from pathlib import Path

import pytest

from routebus.demo.allocation import EmptyAgentListError, compute_allocation
from routebus.demo.config import (
    AgentSpec,
    ConfigError,
    ContainerSpec,
    ScenarioConfig,
    append_record,
    load_records,
)
from routebus.demo.runner import Scenario
from routebus.demo import cli
from routebus.terms import parse_term, render_term


# --- allocation ----------------------------------------------------------------


def test_allocation_modulo_rule():
    alloc = compute_allocation(["a1", "a2"], ["u1", "u2", "u3", "u4"])
    assert alloc == {"a1": ["u1", "u3"], "a2": ["u2", "u4"]}


def test_allocation_single_agent_gets_all():
    alloc = compute_allocation(["only"], ["u1", "u2"])
    assert alloc == {"only": ["u1", "u2"]}


def test_allocation_surplus_agents_get_empty_lists():
    alloc = compute_allocation(["a", "b", "c"], ["u1"])
    assert alloc == {"a": ["u1"], "b": [], "c": []}


def test_allocation_empty_agent_list_rejected():
    with pytest.raises(EmptyAgentListError):
        compute_allocation([], ["u1"])


def test_allocation_sorts_inputs():
    assert compute_allocation(["b", "a"], ["u2", "u1"]) == compute_allocation(
        ["a", "b"], ["u1", "u2"]
    )


# --- config --------------------------------------------------------------------


def test_default_config_is_valid():
    config = ScenarioConfig.default()
    assert config.containers[0].agents[0].local_name == "alice"
    assert config.aggregate_timeout_ms == 2000


def test_unknown_route_set_rejected():
    with pytest.raises(ConfigError):
        ScenarioConfig(containers=[ContainerSpec("c", "static", [])], route_sets={"nope"})


def test_duplicate_agent_names_rejected():
    with pytest.raises(ConfigError):
        ContainerSpec("c", "static", [AgentSpec("a"), AgentSpec("a")])


def test_duplicate_user_emails_rejected():
    with pytest.raises(ConfigError):
        ScenarioConfig(
            containers=[ContainerSpec("c", "static", [])],
            users=[{"email": "a@x"}, {"email": "a@x"}],
        )


def test_record_file_round_trip(tmp_path):
    path = tmp_path / "users.tbl"
    append_record(path, {"email": "a@x", "interests": "budget,planning"})
    append_record(path, {"email": "b@x", "interests": "travel"})
    records = load_records(path)
    assert records == [
        {"email": "a@x", "interests": "budget,planning"},
        {"email": "b@x", "interests": "travel"},
    ]


def test_record_field_may_contain_spaces(tmp_path):
    path = tmp_path / "mail.txt"
    append_record(path, {"subject": "budget review", "body": "see the draft"})
    assert load_records(path) == [{"subject": "budget review", "body": "see the draft"}]


def test_record_rejects_separator_in_value(tmp_path):
    with pytest.raises(ConfigError):
        append_record(tmp_path / "x", {"body": "a|b"})


def write_config(tmp_path) -> Path:
    (tmp_path / "users.tbl").write_text(
        "email=a@x|interests=budget\nemail=b@x|interests=travel\n", encoding="utf-8"
    )
    (tmp_path / "mail.txt").write_text(
        "to=to.share|from=x@corp|subject=budget plan|body=numbers inside\n", encoding="utf-8"
    )
    cfg = tmp_path / "scenario.cfg"
    cfg.write_text(
        "\n".join(
            [
                "[scenario]",
                "route_sets = use_case",
                "aggregate_timeout_ms = 400",
                "resume_delay_ms = 200",
                "",
                "[container:main]",
                "id_mode = static",
                "agents =",
                "    alice relevance",
                "    bob relevance",
                "",
                "[users]",
                "file = users.tbl",
                "",
                "[mail]",
                "file = mail.txt",
            ]
        ),
        encoding="utf-8",
    )
    return cfg


def test_load_config_file(tmp_path):
    config = ScenarioConfig.load(write_config(tmp_path))
    assert [a.local_name for a in config.containers[0].agents] == ["alice", "bob"]
    assert config.aggregate_timeout_ms == 400
    assert config.users[0]["email"] == "a@x"
    assert config.mails[0]["subject"] == "budget plan"


# --- scenario ------------------------------------------------------------------


def wait_for(predicate, timeout=6.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.03)
    return False


@pytest.fixture
def fast_scenario():
    config = ScenarioConfig.default()
    config.aggregate_timeout_ms = 500
    scenario = Scenario(config)
    yield scenario
    scenario.stop()


def test_scenario_forwards_to_keyword_matches(fast_scenario):
    fast_scenario.start()
    assert wait_for(lambda: fast_scenario.forward_events())
    ((route_id, detail),) = fast_scenario.forward_events()
    assert detail == "to=[a@x] subject=budget review"


def test_scenario_allocations_agree(fast_scenario):
    fast_scenario.start()
    views = fast_scenario.allocations()
    assert len(views) == 2
    first, *rest = views.values()
    assert first is not None
    assert all(v == first for v in rest)


def test_registration_dedup_single_node_per_agent(fast_scenario):
    fast_scenario.start()
    children = fast_scenario.coord.get_children("/agents")
    assert len(children) == 2  # one node per agent despite any retries


def test_account_change_updates_allocations(fast_scenario):
    fast_scenario.start()
    fast_scenario.add_user("d@x", "budget")
    assert wait_for(
        lambda: all(
            view is not None and sorted(sum(view.values(), [])) == ["a@x", "b@x", "c@x", "d@x"]
            for view in fast_scenario.allocations().values()
        )
    )


def test_zero_agent_scenario_clean(fast_scenario_config=None):
    config = ScenarioConfig.default()
    config.containers[0].agents = []
    config.aggregate_timeout_ms = 300
    scenario = Scenario(config)
    try:
        scenario.start()
        reason = scenario.wait_quiescent(duration_ms=2500)
        assert scenario.forward_events() == []
        assert reason in ("quiescent", "duration")
    finally:
        scenario.stop()


def test_bridge_scenario_delivers_across_containers():
    from routebus.agents import AgentMessage

    config = ScenarioConfig(
        containers=[
            ContainerSpec("c1", "static", [AgentSpec("ann")]),
            ContainerSpec("c2", "static", [AgentSpec("bob")]),
        ],
        route_sets={"inter_container"},
    )
    scenario = Scenario(config)
    try:
        scenario.build()
        for engine in scenario.engines.values():
            engine.start()
        c1 = scenario.containers["c1"]
        c2 = scenario.containers["c2"]
        msg = AgentMessage("tell", "c1__ann", "c2__bob", parse_term('greet("hello")'), "m1")
        c1.route_local_message(msg)
        bob = c2.agents["c2__bob"]
        assert wait_for(lambda: len(bob.inbox) > 0, timeout=3)
        got = bob.inbox.popleft()
        assert got.illoc_force == "tell"
        assert got.sender == "c1__ann"
        assert render_term(got.content) == 'greet("hello")'
    finally:
        scenario.stop()


def test_run_scenario_returns_one_on_init_failure(capsys):
    from routebus.demo.runner import run_scenario

    config = ScenarioConfig.default()
    config.designated_poller = "no-such-container"
    assert run_scenario(config) == 1
    assert "failed to start" in capsys.readouterr().err


# --- CLI -----------------------------------------------------------------------


def test_cli_run_with_config_writes_log(tmp_path, capsys):
    cfg = write_config(tmp_path)
    log_path = tmp_path / "events.log"
    rc = cli.main(
        ["run", "--config", str(cfg), "--duration-ms", "2500", "--log", str(log_path)]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "forward" in out or "mail forward" in out
    lines = log_path.read_text(encoding="utf-8").splitlines()
    assert any(" forward " in line for line in lines)
    # line format: ts route_id event exchange_id detail
    ts, route_id, event, exchange_id = lines[0].split(" ", 4)[:4]
    float(ts)
    assert event in ("lifecycle", "receive", "send", "forward", "drop", "error", "warning")


def test_cli_inject_mail_appends_record(tmp_path):
    cfg = write_config(tmp_path)
    rc = cli.main(
        [
            "inject-mail",
            "--config",
            str(cfg),
            "--to",
            "to.share",
            "--subject",
            "S",
            "--body",
            "B",
            "--from",
            "me@corp",
        ]
    )
    assert rc == 0
    records = load_records(tmp_path / "mail.txt")
    assert records[-1] == {"to": "to.share", "from": "me@corp", "subject": "S", "body": "B"}


def test_cli_dump_allocations_offline(capsys):
    rc = cli.main(["dump-allocations"])
    assert rc == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out == ["main__alice: a@x,c@x", "main__bob: b@x"]


def test_cli_dump_log_prints_file(tmp_path, capsys):
    path = tmp_path / "events.log"
    path.write_text("1.0 r lifecycle - started\n", encoding="utf-8")
    assert cli.main(["dump-log", "--log", str(path)]) == 0
    assert "lifecycle" in capsys.readouterr().out


def test_cli_missing_config_file_is_an_error(tmp_path, capsys):
    rc = cli.main(["run", "--config", str(tmp_path / "absent.cfg")])
    assert rc == 1
    assert "configuration error" in capsys.readouterr().err

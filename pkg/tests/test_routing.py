import time

import pytest

from routebus.expressions import body, constant, expr, header
from routebus.messages import ExchangePattern, RowSet, new_exchange
from routebus.routing import (
    Aggregate,
    CombineBodyAndHeader,
    IdempotentRepository,
    InvalidTransitionError,
    ListAppend,
    MissingColumnError,
    RouteBuilder,
    RouteConfigError,
    RouteEngine,
    RouteState,
    SetUnion,
    UnknownSchemeError,
    AggregateState,
    split_exchange,
    transform_rows_to_quoted_list,
)
from routebus.expressions import TypeMismatchError


@pytest.fixture
def engine():
    eng = RouteEngine()
    yield eng
    eng.stop()


def drain(queue, timeout=1.0):
    got = []
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        try:
            got.append(queue.get(timeout=0.05))
        except Exception:
            break
    return got


# --- pipeline basics ---------------------------------------------------------


def test_direct_pipeline_set_body(engine):
    rb = RouteBuilder()
    rb.from_("direct:a", route_id="a").set_body(constant("x")).to("buffered:sink")
    engine.add_routes(rb)
    engine.send("direct:a", new_exchange(ExchangePattern.IN_ONLY, "ignored"))
    out = engine._buffer("sink").get(timeout=1)
    assert out.in_msg.body == "x"


def test_in_out_reply_carries_final_headers(engine):
    rb = RouteBuilder()
    rb.from_("direct:q", route_id="q").set_header("result", constant("v"))
    engine.add_routes(rb)
    x = new_exchange(ExchangePattern.IN_OUT, "req")
    engine.send("direct:q", x)
    assert x.out_msg is not None
    assert x.out_msg.headers["result"] == "v"


def test_multicast_sequential_direct_before_buffered(engine):
    seen = []
    rb = RouteBuilder()
    rb.from_("direct:first", route_id="first").process(lambda x: seen.append("first"))
    rb.from_("direct:fan", route_id="fan").to("direct:first", "direct:second")
    rb.from_("direct:second", route_id="second").process(lambda x: seen.append("second"))
    engine.add_routes(rb)
    engine.send("direct:fan", new_exchange())
    assert seen == ["first", "second"]


def test_multicast_failure_does_not_stop_later_destinations(engine):
    seen = []
    rb = RouteBuilder()
    rb.from_("direct:boom", route_id="boom").process(lambda x: 1 / 0)
    rb.from_("direct:ok", route_id="ok").process(lambda x: seen.append("ok"))
    rb.from_("direct:fan", route_id="fan").to("direct:boom", "direct:ok")
    engine.add_routes(rb)
    with pytest.raises(ZeroDivisionError):
        engine._direct["fan"].process_inline(new_exchange())
    assert seen == ["ok"]
    assert engine.log.events(event="error", route_id="fan")


def test_unknown_scheme_rejected_at_start(engine):
    rb = RouteBuilder()
    rb.from_("nosuch:x", route_id="bad")
    with pytest.raises(UnknownSchemeError):
        engine.add_routes(rb)


def test_filter_drops_non_matching(engine):
    rb = RouteBuilder()
    (
        rb.from_("direct:f", route_id="f")
        .filter_equals(header("kind"), "yes")
        .to("buffered:sink")
    )
    engine.add_routes(rb)
    engine.send("direct:f", new_exchange(headers={"kind": "no"}))
    engine.send("direct:f", new_exchange(headers={"kind": "yes"}))
    out = drain(engine._buffer("sink"))
    assert len(out) == 1
    assert out[0].in_msg.headers["kind"] == "yes"


# --- split ---------------------------------------------------------------------


def test_split_children_carry_headers_and_indices():
    x = new_exchange(ExchangePattern.IN_ONLY, ["a", "b", "c"], {"h": "v"})
    children = split_exchange(x, body())
    assert [c.in_msg.body for c in children] == ["a", "b", "c"]
    assert all(c.in_msg.headers["h"] == "v" for c in children)
    assert [c.in_msg.headers["split.index"] for c in children] == [0, 1, 2]
    assert all(c.in_msg.headers["split.size"] == 3 for c in children)


def test_split_empty_list_produces_no_children():
    x = new_exchange(ExchangePattern.IN_ONLY, [])
    assert split_exchange(x, body()) == []


def test_split_non_collection_rejected():
    x = new_exchange(ExchangePattern.IN_ONLY, "text")
    with pytest.raises(TypeMismatchError):
        split_exchange(x, body())


def test_split_rowset_yields_single_row_children():
    rows = RowSet(("email",), [{"email": "a@x"}, {"email": "b@x"}])
    x = new_exchange(ExchangePattern.IN_ONLY, rows)
    children = split_exchange(x, body())
    assert len(children) == 2
    assert children[0].in_msg.body.rows == [{"email": "a@x"}]


# --- aggregation ------------------------------------------------------------------


def test_aggregate_size_list_append():
    step = Aggregate(header("k"), ListAppend(), completion_size=3)
    state = AggregateState(step, ())
    out = []
    for item in ("a", "b", "c"):
        merged = state.offer(new_exchange(body=item, headers={"k": "x"}))
        if merged:
            out.append(merged)
    assert len(out) == 1
    assert out[0].in_msg.body == ["a", "b", "c"]


def test_aggregate_size_one_is_pass_through():
    step = Aggregate(header("k"), ListAppend(), completion_size=1)
    state = AggregateState(step, ())
    merged = state.offer(new_exchange(body="only", headers={"k": "x"}))
    assert merged is not None
    assert merged.in_msg.body == ["only"]


def test_aggregate_dynamic_size_from_header():
    step = Aggregate(header("n"), ListAppend(), completion_size=header("n"))
    state = AggregateState(step, ())
    assert state.offer(new_exchange(body="a", headers={"n": 2})) is None
    merged = state.offer(new_exchange(body="b", headers={"n": 2}))
    assert merged is not None
    assert merged.in_msg.body == ["a", "b"]


def test_aggregate_needs_exactly_one_completion():
    with pytest.raises(RouteConfigError):
        Aggregate(header("k"), ListAppend())
    with pytest.raises(RouteConfigError):
        Aggregate(header("k"), ListAppend(), completion_size=1, completion_timeout_ms=10)


def test_set_union_merges_reply_lists():
    step = Aggregate(header("id"), SetUnion(), completion_size=2)
    state = AggregateState(step, ())
    state.offer(new_exchange(body='["u1@x"]', headers={"id": "1"}))
    merged = state.offer(new_exchange(body='["u1@x","u2@x"]', headers={"id": "1"}))
    assert merged is not None
    assert merged.in_msg.body == ["u1@x", "u2@x"]


def test_set_union_permutation_invariant():
    import random

    replies = ['["b@x"]', '["a@x","c@x"]', '["c@x"]', '["a@x"]']
    rng = random.Random(7)
    results = set()
    for _ in range(50):
        shuffled = replies[:]
        rng.shuffle(shuffled)
        step = Aggregate(header("id"), SetUnion(), completion_size=len(shuffled))
        state = AggregateState(step, ())
        merged = None
        for r in shuffled:
            merged = state.offer(new_exchange(body=r, headers={"id": "1"})) or merged
        results.add(tuple(merged.in_msg.body))
    assert results == {("a@x", "b@x", "c@x")}


def test_combine_body_and_header():
    step = Aggregate(header("id"), CombineBodyAndHeader("to"), completion_size=2)
    state = AggregateState(step, ())
    mail = new_exchange(body="mail text", headers={"id": "1", "subject": "s"})
    summary = new_exchange(body='["u1@x"]', headers={"id": "1", "to": '["u1@x"]'})
    assert state.offer(mail) is None
    merged = state.offer(summary)
    assert merged is not None
    assert merged.in_msg.body == "mail text"
    assert merged.in_msg.headers["to"] == '["u1@x"]'
    assert merged.in_msg.headers["subject"] == "s"


def test_combine_body_and_header_order_insensitive():
    step = Aggregate(header("id"), CombineBodyAndHeader("to"), completion_size=2)
    state = AggregateState(step, ())
    summary = new_exchange(body='["u1@x"]', headers={"id": "1", "to": '["u1@x"]'})
    mail = new_exchange(body="mail text", headers={"id": "1"})
    state.offer(summary)
    merged = state.offer(mail)
    assert merged.in_msg.body == "mail text"
    assert merged.in_msg.headers["to"] == '["u1@x"]'


def test_aggregate_timeout_flush_in_route(engine):
    rb = RouteBuilder()
    (
        rb.from_("direct:agg", route_id="agg")
        .aggregate(header("id"), SetUnion())
        .completion_timeout(150)
        .to("buffered:out")
    )
    engine.add_routes(rb)
    engine.send("direct:agg", new_exchange(body='["u1@x"]', headers={"id": "1"}))
    engine.send("direct:agg", new_exchange(body='["u2@x"]', headers={"id": "1"}))
    t0 = time.monotonic()
    out = engine._buffer("out").get(timeout=2)
    waited = time.monotonic() - t0
    assert out.in_msg.body == ["u1@x", "u2@x"]
    assert waited >= 0.04  # flushed by the tick, not inline


def test_split_then_aggregate_identity_route(engine):
    rb = RouteBuilder()
    (
        rb.from_("direct:sa", route_id="sa")
        .set_header("n", expr("${body.size}"))
        .split(body())
        .aggregate(header("n"), ListAppend())
        .completion_size(header("n"))
        .to("buffered:out")
    )
    engine.add_routes(rb)
    engine.send("direct:sa", new_exchange(body=["p", "q", "r"]))
    out = engine._buffer("out").get(timeout=1)
    assert out.in_msg.body == ["p", "q", "r"]


# --- idempotent consumer --------------------------------------------------------------


def test_idempotent_pass_pass_drop(engine):
    rb = RouteBuilder()
    (
        rb.from_("direct:idem", route_id="idem")
        .idempotent_consumer(header("actor"), IdempotentRepository(100))
        .to("buffered:out")
    )
    engine.add_routes(rb)
    for actor in ("a", "b", "a"):
        engine.send("direct:idem", new_exchange(headers={"actor": actor}))
    out = drain(engine._buffer("out"))
    assert [x.in_msg.headers["actor"] for x in out] == ["a", "b"]
    assert len(engine.log.events(event="drop", route_id="idem")) == 1


def test_idempotent_eviction_lets_old_key_pass():
    repo = IdempotentRepository(2)
    outcomes = []
    for key in ("a", "b", "c", "a"):
        if repo.contains(key):
            outcomes.append("drop")
        else:
            repo.add(key)
            outcomes.append("pass")
    assert outcomes == ["pass", "pass", "pass", "pass"]


def test_idempotent_repo_capacity_bound():
    repo = IdempotentRepository(3)
    for i in range(10):
        repo.add(str(i))
    assert len(repo) == 3


# --- transform --------------------------------------------------------------------


def test_transform_rows_to_quoted_list():
    rows = RowSet(("email",), [{"email": "a@x"}, {"email": "b@x"}])
    x = new_exchange(body=rows)
    transform_rows_to_quoted_list(x, "email")
    assert x.in_msg.body == '["a@x","b@x"]'


def test_transform_empty_rowset():
    x = new_exchange(body=RowSet(("email",), []))
    transform_rows_to_quoted_list(x, "email")
    assert x.in_msg.body == "[]"


def test_transform_missing_column():
    x = new_exchange(body=RowSet(("name",), [{"name": "a"}]))
    with pytest.raises(MissingColumnError):
        transform_rows_to_quoted_list(x, "email")


# --- lifecycle ---------------------------------------------------------------------


def test_suspend_resume_stop_transitions(engine):
    rb = RouteBuilder()
    rb.from_("buffered:src", route_id="r")
    (ctl,) = engine.add_routes(rb)
    assert ctl.state is RouteState.STARTED
    ctl.suspend()
    assert ctl.state is RouteState.SUSPENDED
    with pytest.raises(InvalidTransitionError):
        ctl.suspend()
    ctl.resume()
    assert ctl.state is RouteState.STARTED
    ctl.stop()
    assert ctl.state is RouteState.STOPPED
    with pytest.raises(InvalidTransitionError):
        ctl.resume()
    with pytest.raises(InvalidTransitionError):
        ctl.stop()


def test_suspended_route_emits_nothing_until_resumed(engine):
    rb = RouteBuilder()
    rb.from_("buffered:in", route_id="pipe").to("buffered:out")
    (ctl,) = engine.add_routes(rb)
    engine._buffer("in").put(new_exchange(body="1"))
    assert engine._buffer("out").get(timeout=1).in_msg.body == "1"
    ctl.suspend()
    time.sleep(0.1)
    engine._buffer("in").put(new_exchange(body="2"))
    time.sleep(0.3)
    assert engine._buffer("out").empty()
    ctl.resume()
    assert engine._buffer("out").get(timeout=1).in_msg.body == "2"


def test_pipeline_deterministic_sequence(engine):
    rb = RouteBuilder()
    (
        rb.from_("direct:det", route_id="det")
        .set_header("tag", expr("${body}!"))
        .to("buffered:out")
    )
    engine.add_routes(rb)
    for i in range(20):
        engine.send("direct:det", new_exchange(body=str(i)))
    out = drain(engine._buffer("out"))
    assert [x.in_msg.headers["tag"] for x in out] == [f"{i}!" for i in range(20)]


def test_duplicate_route_id_rejected(engine):
    rb = RouteBuilder()
    rb.from_("direct:x1", route_id="same")
    rb.from_("direct:x2", route_id="same")
    with pytest.raises(RouteConfigError):
        engine.add_routes(rb)


def test_direct_route_survives_stop_and_restart(engine):
    rb = RouteBuilder()
    rb.from_("direct:again", route_id="again").to("buffered:out")
    (ctl,) = engine.add_routes(rb)
    ctl.stop()
    engine.start()
    engine.send("direct:again", new_exchange(body="back"))
    assert engine._buffer("out").get(timeout=1).in_msg.body == "back"


def test_two_routes_cannot_share_a_direct_name(engine):
    rb = RouteBuilder()
    rb.from_("direct:shared", route_id="one")
    rb.from_("direct:shared", route_id="two")
    with pytest.raises(RouteConfigError):
        engine.add_routes(rb)

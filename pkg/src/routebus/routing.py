"""Route definitions and the execution engine.

A route consumes exchanges from one endpoint and runs each through an ordered
pipeline of processors (set-header/set-body, filter, multicast, split,
aggregate, idempotent-consumer, custom hooks), ending at producer endpoints.

Execution model: every started route owns one worker context that pulls from
its consumer endpoint and runs the pipeline to completion, one exchange in
flight per route.  ``direct:`` producers run the target route's pipeline
inline on the caller's context; ``buffered:`` producers enqueue a copy and
return.  Aggregation buckets whose timeout elapses are flushed by a shared
background tick (50 ms granularity) that serialises with the owning route.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from queue import Empty, Queue
from typing import Callable, Optional, Union

from .expressions import (
    Expr,
    eval_expr,
    stringify,
    body_to_term,
    term_to_body,
    TypeMismatchError,
)
from .messages import (
    EndpointUri,
    Exchange,
    ExchangePattern,
    RowSet,
    new_exchange,
    parse_uri,
)
from .terms import ListTerm, Str, parse_term, render_term

logger = logging.getLogger(__name__)

__all__ = [
    "SetHeader",
    "SetBody",
    "FilterEquals",
    "To",
    "Split",
    "Aggregate",
    "IdempotentConsumer",
    "TransformRowsToQuotedList",
    "Custom",
    "ListAppend",
    "SetUnion",
    "CombineBodyAndHeader",
    "IdempotentRepository",
    "RouteDefinition",
    "RouteBuilder",
    "RouteController",
    "RouteState",
    "RouteEngine",
    "EventLog",
    "EventRecord",
    "Component",
    "Consumer",
    "Producer",
    "Delivery",
    "AggregateState",
    "split_exchange",
    "transform_rows_to_quoted_list",
    "UnknownSchemeError",
    "EndpointInitError",
    "InvalidTransitionError",
    "RouteConfigError",
    "MissingColumnError",
    "TICK_SECONDS",
]

# Granularity of the aggregation-timeout tick.
TICK_SECONDS = 0.05

_POLL_SECONDS = 0.02


class UnknownSchemeError(KeyError):
    pass


class EndpointInitError(RuntimeError):
    pass


class InvalidTransitionError(RuntimeError):
    pass


class RouteConfigError(ValueError):
    pass


class MissingColumnError(KeyError):
    pass


# --- processors ----------------------------------------------------------------


@dataclass(frozen=True)
class SetHeader:
    name: str
    expr: Expr


@dataclass(frozen=True)
class SetBody:
    expr: Expr


@dataclass(frozen=True)
class FilterEquals:
    """Pass the exchange only when the expression's text equals ``value``."""

    expr: Expr
    value: str


@dataclass(frozen=True)
class To:
    uris: tuple[str, ...]


@dataclass(frozen=True)
class Split:
    expr: Expr


@dataclass(frozen=True)
class Aggregate:
    correlation: Expr
    strategy: "AggregationStrategy"
    completion_size: Union[int, Expr, None] = None
    completion_timeout_ms: Optional[int] = None

    def __post_init__(self):
        if (self.completion_size is None) == (self.completion_timeout_ms is None):
            raise RouteConfigError("aggregate needs exactly one completion condition")


@dataclass(frozen=True)
class IdempotentConsumer:
    key: Expr
    repo: "IdempotentRepository"
    eager: bool = True


@dataclass(frozen=True)
class TransformRowsToQuotedList:
    """Turn a row-set body into quoted-string list text, e.g. ``["a@x","b@x"]``."""

    column: str


@dataclass(frozen=True)
class Custom:
    name: str
    fn: Callable[[Exchange], None]


Processor = Union[
    SetHeader,
    SetBody,
    FilterEquals,
    To,
    Split,
    Aggregate,
    IdempotentConsumer,
    TransformRowsToQuotedList,
    Custom,
]


# --- aggregation strategies ------------------------------------------------------


class AggregationStrategy:
    def merge(self, exchanges: list[Exchange]) -> Exchange:
        raise NotImplementedError


class ListAppend(AggregationStrategy):
    """Collect the bodies into a list, arrival order preserved; headers from the first."""

    def merge(self, exchanges: list[Exchange]) -> Exchange:
        first = exchanges[0]
        merged = new_exchange(first.pattern, None, first.in_msg.copy().headers)
        merged.in_msg.body = [x.in_msg.copy().body for x in exchanges]
        return merged


class SetUnion(AggregationStrategy):
    """Parse each body as a term list and take the set union of the elements.

    The union is ordered by each element's rendered text, so any permutation
    of the same replies produces an identical merged body.
    """

    def merge(self, exchanges: list[Exchange]) -> Exchange:
        elements: dict[str, object] = {}
        for x in exchanges:
            b = x.in_msg.body
            if isinstance(b, str):
                t = parse_term(b)
                if not isinstance(t, ListTerm):
                    raise TypeMismatchError(f"set-union body is not a list: {b!r}")
                items = t.elements
            elif isinstance(b, list):
                items = tuple(body_to_term(el) for el in b)
            else:
                raise TypeMismatchError(f"set-union body is not a list: {b!r}")
            for el in items:
                elements.setdefault(render_term(el), term_to_body(el))
        first = exchanges[0]
        merged = new_exchange(first.pattern, None, first.in_msg.copy().headers)
        merged.in_msg.body = [elements[k] for k in sorted(elements)]
        return merged


class CombineBodyAndHeader(AggregationStrategy):
    """Combine two messages: body from the one lacking the header, header from the other."""

    def __init__(self, header_name: str):
        self.header_name = header_name

    def merge(self, exchanges: list[Exchange]) -> Exchange:
        lacking = next((x for x in exchanges if self.header_name not in x.in_msg.headers), None)
        having = next((x for x in exchanges if self.header_name in x.in_msg.headers), None)
        base = (lacking or exchanges[0]).copy()
        merged = new_exchange(base.pattern, base.in_msg.body, base.in_msg.headers)
        if having is not None:
            merged.in_msg.headers[self.header_name] = having.copy().in_msg.headers[
                self.header_name
            ]
        return merged


class IdempotentRepository:
    """Insertion-ordered set of seen keys, evicting the oldest beyond capacity."""

    def __init__(self, capacity: int = 100):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._seen: OrderedDict[str, None] = OrderedDict()
        self._lock = threading.Lock()

    def contains(self, key: str) -> bool:
        with self._lock:
            return key in self._seen

    def add(self, key: str) -> None:
        with self._lock:
            self._seen[key] = None
            while len(self._seen) > self.capacity:
                self._seen.popitem(last=False)

    def __len__(self) -> int:
        with self._lock:
            return len(self._seen)


# --- definitions and builder ------------------------------------------------------


@dataclass(frozen=True)
class RouteDefinition:
    route_id: str
    from_uri: EndpointUri
    steps: tuple[Processor, ...] = ()


class RouteBuilder:
    """Fluent construction of route definitions.

    ::

        rb = RouteBuilder()
        (rb.from_("direct:ask", route_id="ask")
           .set_header("receiver", constant("all"))
           .to("agent:message?illoc_force=achieve"))
        engine.add_routes(rb)
    """

    def __init__(self):
        self._routes: list[tuple[str, EndpointUri, list[Processor]]] = []
        self._anon = 0

    def from_(self, uri: str, route_id: Optional[str] = None) -> "RouteBuilder":
        if route_id is None:
            self._anon += 1
            route_id = f"route-{self._anon}"
        self._routes.append((route_id, parse_uri(uri), []))
        return self

    def _add(self, step: Processor) -> "RouteBuilder":
        if not self._routes:
            raise RouteConfigError("call from_() before adding steps")
        self._routes[-1][2].append(step)
        return self

    def set_header(self, name: str, value: Expr) -> "RouteBuilder":
        return self._add(SetHeader(name, value))

    def set_body(self, value: Expr) -> "RouteBuilder":
        return self._add(SetBody(value))

    def filter_equals(self, value: Expr, text: str) -> "RouteBuilder":
        return self._add(FilterEquals(value, text))

    def to(self, *uris: str) -> "RouteBuilder":
        return self._add(To(tuple(uris)))

    def split(self, value: Expr) -> "RouteBuilder":
        return self._add(Split(value))

    def aggregate(self, correlation: Expr, strategy: AggregationStrategy) -> "_AggregateSpec":
        return _AggregateSpec(self, correlation, strategy)

    def idempotent_consumer(
        self, key: Expr, repo: IdempotentRepository, eager: bool = True
    ) -> "RouteBuilder":
        return self._add(IdempotentConsumer(key, repo, eager))

    def transform_rows_to_quoted_list(self, column: str) -> "RouteBuilder":
        return self._add(TransformRowsToQuotedList(column))

    def process(self, fn: Callable[[Exchange], None], name: str = "process") -> "RouteBuilder":
        return self._add(Custom(name, fn))

    def definitions(self) -> list[RouteDefinition]:
        return [RouteDefinition(rid, uri, tuple(steps)) for rid, uri, steps in self._routes]


class _AggregateSpec:
    def __init__(self, builder: RouteBuilder, correlation: Expr, strategy: AggregationStrategy):
        self._builder = builder
        self._correlation = correlation
        self._strategy = strategy

    def completion_size(self, size: Union[int, Expr]) -> RouteBuilder:
        return self._builder._add(Aggregate(self._correlation, self._strategy, size, None))

    def completion_timeout(self, ms: int) -> RouteBuilder:
        return self._builder._add(Aggregate(self._correlation, self._strategy, None, ms))


# --- event log -------------------------------------------------------------------


@dataclass(frozen=True)
class EventRecord:
    ts: float
    route_id: str
    event: str
    exchange_id: str
    detail: str

    def line(self) -> str:
        return f"{self.ts:.6f} {self.route_id} {self.event} {self.exchange_id} {self.detail}"


class EventLog:
    """Append-only structured log: one record per endpoint receive/send,
    processor error, drop, or lifecycle change."""

    def __init__(self):
        self._records: list[EventRecord] = []
        self._lock = threading.Lock()
        self.last_activity = time.monotonic()

    def emit(self, route_id: str, event: str, exchange_id: str = "-", detail: str = "") -> None:
        rec = EventRecord(
            time.time(), route_id, event, exchange_id, detail.replace("\n", " ").replace("\r", " ")
        )
        with self._lock:
            self._records.append(rec)
            self.last_activity = time.monotonic()

    def records(self) -> list[EventRecord]:
        with self._lock:
            return list(self._records)

    def events(self, event: Optional[str] = None, route_id: Optional[str] = None) -> list[EventRecord]:
        return [
            r
            for r in self.records()
            if (event is None or r.event == event) and (route_id is None or r.route_id == route_id)
        ]

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records():
                fh.write(rec.line() + "\n")


# --- endpoint SPI ------------------------------------------------------------------


@dataclass
class Delivery:
    exchange: Exchange
    reply: Optional["_Future"] = None


class _Future:
    """Tiny one-shot result holder (result or exception)."""

    def __init__(self):
        self._event = threading.Event()
        self._value: Optional[Exchange] = None
        self._error: Optional[BaseException] = None

    def set_result(self, value: Exchange) -> None:
        self._value = value
        self._event.set()

    def set_exception(self, exc: BaseException) -> None:
        self._error = exc
        self._event.set()

    def result(self, timeout: Optional[float] = None) -> Exchange:
        if not self._event.wait(timeout):
            raise TimeoutError("no reply within timeout")
        if self._error is not None:
            raise self._error
        assert self._value is not None
        return self._value


class Consumer:
    """Source of deliveries for a route; the route worker polls it.

    Non-pollable consumers (``direct:``) only hook start/stop and are fed
    inline by producers instead of a worker thread.
    """

    pollable = True

    def start(self) -> None:
        pass

    def stop(self) -> None:
        pass

    def poll(self, timeout: float) -> Optional[Delivery]:
        raise NotImplementedError


class Producer:
    """Destination for exchanges; ``process`` may mutate the exchange in place."""

    def process(self, exchange: Exchange) -> None:
        raise NotImplementedError


class Component:
    """Factory for the endpoints of one URI scheme."""

    def create_consumer(self, uri: EndpointUri, route: "RouteService") -> Optional[Consumer]:
        raise EndpointInitError(f"{uri.scheme}: does not support consumers")

    def create_producer(self, uri: EndpointUri, engine: "RouteEngine", route_id: str) -> Producer:
        raise EndpointInitError(f"{uri.scheme}: does not support producers")


class _QueueConsumer(Consumer):
    """Base for push-style endpoints that hand exchanges over through a queue."""

    def __init__(self, maxsize: int = 1024):
        self.queue: Queue[Delivery] = Queue(maxsize=maxsize)

    def offer(self, delivery: Delivery) -> None:
        self.queue.put(delivery)

    def poll(self, timeout: float) -> Optional[Delivery]:
        try:
            return self.queue.get(timeout=timeout)
        except Empty:
            return None


# Engine-internal endpoints.  ``direct:`` invokes the target route inline on
# the caller's context; ``buffered:`` enqueues a copy and returns immediately.


class _DirectComponent(Component):
    def create_consumer(self, uri: EndpointUri, route: "RouteService") -> Optional[Consumer]:
        return _DirectConsumer(uri.path, route)

    def create_producer(self, uri: EndpointUri, engine: "RouteEngine", route_id: str) -> Producer:
        return _DirectProducer(uri.path, engine)


class _DirectConsumer(Consumer):
    pollable = False

    def __init__(self, name: str, route: "RouteService"):
        self.name = name
        self.route = route

    def start(self) -> None:
        self.route.engine._register_direct(self.name, self.route)

    def stop(self) -> None:
        self.route.engine._unregister_direct(self.route)


class _DirectProducer(Producer):
    def __init__(self, name: str, engine: "RouteEngine"):
        self.name = name
        self.engine = engine

    def process(self, exchange: Exchange) -> None:
        target = self.engine._direct.get(self.name)
        if target is None:
            raise EndpointInitError(f"no route consumes direct:{self.name}")
        target.process_inline(exchange)


class _BufferedComponent(Component):
    def create_consumer(self, uri: EndpointUri, route: "RouteService") -> Optional[Consumer]:
        return _BufferedConsumer(route.engine._buffer(uri.path))

    def create_producer(self, uri: EndpointUri, engine: "RouteEngine", route_id: str) -> Producer:
        return _BufferedProducer(engine._buffer(uri.path))


class _BufferedConsumer(Consumer):
    def __init__(self, queue: "Queue[Exchange]"):
        self._queue = queue

    def poll(self, timeout: float) -> Optional[Delivery]:
        try:
            return Delivery(self._queue.get(timeout=timeout))
        except Empty:
            return None


class _BufferedProducer(Producer):
    def __init__(self, queue: "Queue[Exchange]"):
        self._queue = queue

    def process(self, exchange: Exchange) -> None:
        self._queue.put(exchange.copy())


# --- pipeline operations (also usable standalone) -----------------------------------


def split_exchange(x: Exchange, e: Expr) -> list[Exchange]:
    """One child exchange per element of the evaluated collection.

    Children get a deep copy of the headers plus ``split.index`` /
    ``split.size`` headers; the child body is the element.
    """
    value = eval_expr(e, x)
    if isinstance(value, RowSet):
        elements: list = [RowSet(value.columns, [dict(row)]) for row in value.rows]
    elif isinstance(value, list):
        elements = list(value)
    else:
        raise TypeMismatchError(f"split over non-collection value {value!r}")
    children = []
    for i, el in enumerate(elements):
        child = new_exchange(x.pattern, None, x.in_msg.copy().headers)
        child.in_msg.body = el
        child.in_msg.headers["split.index"] = i
        child.in_msg.headers["split.size"] = len(elements)
        children.append(child)
    return children


def transform_rows_to_quoted_list(x: Exchange, column: str) -> Exchange:
    """Replace a row-set body with quoted-string list text, row order preserved."""
    b = x.in_msg.body
    if not isinstance(b, RowSet):
        raise TypeMismatchError(f"body is not a row set: {b!r}")
    if column not in b.columns:
        raise MissingColumnError(column)
    x.in_msg.body = render_term(ListTerm(tuple(Str(row[column]) for row in b.rows)))
    return x


class _Bucket:
    __slots__ = ("first_monotonic", "exchanges")

    def __init__(self):
        self.first_monotonic = time.monotonic()
        self.exchanges: list[Exchange] = []


class AggregateState:
    """Correlation buckets for one aggregate step of one route."""

    def __init__(self, step: Aggregate, tail: tuple[Processor, ...]):
        self.step = step
        self.tail = tail
        self.buckets: dict[str, _Bucket] = {}
        self.lock = threading.Lock()

    def offer(self, x: Exchange) -> Optional[Exchange]:
        key = stringify(eval_expr(self.step.correlation, x))
        with self.lock:
            bucket = self.buckets.setdefault(key, _Bucket())
            bucket.exchanges.append(x)
            if self.step.completion_size is not None:
                size = self.step.completion_size
                if isinstance(size, Expr):
                    size = int(eval_expr(size, x))  # type: ignore[arg-type]
                if len(bucket.exchanges) >= int(size):
                    del self.buckets[key]
                    return self.step.strategy.merge(bucket.exchanges)
        return None

    def flush_expired(self) -> list[Exchange]:
        if self.step.completion_timeout_ms is None:
            return []
        deadline = time.monotonic() - self.step.completion_timeout_ms / 1000.0
        merged = []
        with self.lock:
            for key in [k for k, b in self.buckets.items() if b.first_monotonic <= deadline]:
                bucket = self.buckets.pop(key)
                merged.append(self.step.strategy.merge(bucket.exchanges))
        return merged


# --- route service and controller ----------------------------------------------------


class RouteState(Enum):
    STOPPED = "Stopped"
    STARTED = "Started"
    SUSPENDED = "Suspended"


class RouteService:
    def __init__(self, engine: "RouteEngine", definition: RouteDefinition):
        self.engine = engine
        self.definition = definition
        self.state = RouteState.STOPPED
        self._consumer: Optional[Consumer] = None
        self._producers: dict[str, Producer] = {}
        self._agg_states: dict[int, AggregateState] = {}
        self._exec_lock = threading.RLock()
        self._state_lock = threading.Lock()
        self._worker: Optional[threading.Thread] = None
        self._stopping = threading.Event()

    @property
    def route_id(self) -> str:
        return self.definition.route_id

    # -- lifecycle --

    def start(self) -> None:
        with self._state_lock:
            if self.state is not RouteState.STOPPED:
                raise InvalidTransitionError(f"{self.route_id}: start from {self.state.value}")
            self._init_endpoints()
            self.state = RouteState.STARTED
            self._stopping.clear()
            if self._consumer is not None:
                self._consumer.start()
                if self._consumer.pollable:
                    self._worker = threading.Thread(
                        target=self._poll_loop, name=f"route-{self.route_id}", daemon=True
                    )
                    self._worker.start()
        self.engine.log.emit(self.route_id, "lifecycle", detail="started")

    def suspend(self) -> None:
        with self._state_lock:
            if self.state is not RouteState.STARTED:
                raise InvalidTransitionError(f"{self.route_id}: suspend from {self.state.value}")
            self.state = RouteState.SUSPENDED
        self.engine.log.emit(self.route_id, "lifecycle", detail="suspended")

    def resume(self) -> None:
        with self._state_lock:
            if self.state is not RouteState.SUSPENDED:
                raise InvalidTransitionError(f"{self.route_id}: resume from {self.state.value}")
            self.state = RouteState.STARTED
        self.engine.log.emit(self.route_id, "lifecycle", detail="resumed")

    def stop(self) -> None:
        with self._state_lock:
            if self.state is RouteState.STOPPED:
                raise InvalidTransitionError(f"{self.route_id}: stop from {self.state.value}")
            self.state = RouteState.STOPPED
            self._stopping.set()
            worker = self._worker
            self._worker = None
        if worker is not None:
            worker.join(timeout=2.0)
        if self._consumer is not None:
            self._consumer.stop()
        self.engine.log.emit(self.route_id, "lifecycle", detail="stopped")

    def _init_endpoints(self) -> None:
        if self._consumer is None and not self._producers:
            uri = self.definition.from_uri
            component = self.engine.component(uri.scheme)
            self._consumer = component.create_consumer(uri, self)
            for step in self.definition.steps:
                if isinstance(step, To):
                    for text in step.uris:
                        if text in self._producers:
                            continue
                        uri = parse_uri(text)
                        comp = self.engine.component(uri.scheme)
                        self._producers[text] = comp.create_producer(
                            uri, self.engine, self.route_id
                        )

    # -- execution --

    def _poll_loop(self) -> None:
        while not self._stopping.is_set():
            if self.state is RouteState.SUSPENDED:
                time.sleep(0.01)
                continue
            consumer = self._consumer
            if consumer is None:
                return
            try:
                delivery = consumer.poll(_POLL_SECONDS)
            except Exception:
                logger.exception("route %s: consumer poll failed", self.route_id)
                self.engine.log.emit(self.route_id, "error", detail="consumer poll failed")
                time.sleep(_POLL_SECONDS)
                continue
            if delivery is not None:
                self.process(delivery.exchange, delivery.reply)

    def process(self, exchange: Exchange, reply: Optional[_Future] = None) -> None:
        with self._exec_lock:
            self.engine.log.emit(self.route_id, "receive", exchange.id)
            try:
                final = self._run(exchange, self.definition.steps, 0)
                if final.pattern is ExchangePattern.IN_OUT:
                    final.out_msg = final.in_msg.copy()
                if reply is not None:
                    reply.set_result(final)
            except Exception as exc:
                logger.exception("route %s: exchange %s failed", self.route_id, exchange.id)
                self.engine.log.emit(self.route_id, "error", exchange.id, detail=repr(exc))
                if reply is not None:
                    reply.set_exception(exc)

    def process_inline(self, exchange: Exchange) -> None:
        """Run the pipeline on the caller's context (``direct:`` semantics)."""
        if self.state is not RouteState.STARTED:
            raise EndpointInitError(f"direct target {self.route_id} is {self.state.value}")
        with self._exec_lock:
            self.engine.log.emit(self.route_id, "receive", exchange.id)
            final = self._run(exchange, self.definition.steps, 0)
            if final.pattern is ExchangePattern.IN_OUT:
                final.out_msg = final.in_msg.copy()

    def _run(self, x: Exchange, steps: tuple[Processor, ...], start: int) -> Exchange:
        i = start
        while i < len(steps):
            step = steps[i]
            if isinstance(step, SetHeader):
                x.in_msg.headers[step.name] = eval_expr(step.expr, x)
            elif isinstance(step, SetBody):
                x.in_msg.body = eval_expr(step.expr, x)
            elif isinstance(step, FilterEquals):
                if stringify(eval_expr(step.expr, x)) != step.value:
                    self.engine.log.emit(self.route_id, "drop", x.id, detail="filtered")
                    return x
            elif isinstance(step, TransformRowsToQuotedList):
                transform_rows_to_quoted_list(x, step.column)
            elif isinstance(step, Custom):
                step.fn(x)
            elif isinstance(step, To):
                self._dispatch(step, x)
            elif isinstance(step, Split):
                for child in split_exchange(x, step.expr):
                    self._run(child, steps, i + 1)
                return x
            elif isinstance(step, IdempotentConsumer):
                key = stringify(eval_expr(step.key, x))
                if step.repo.contains(key):
                    self.engine.log.emit(self.route_id, "drop", x.id, detail=f"duplicate {key}")
                    return x
                if step.eager:
                    step.repo.add(key)
                else:
                    out = self._run(x, steps, i + 1)
                    step.repo.add(key)
                    return out
            elif isinstance(step, Aggregate):
                state = self._agg_state(i, steps)
                merged = state.offer(x)
                if merged is None:
                    return x
                x = merged
            else:
                raise RouteConfigError(f"unknown processor {step!r}")
            i += 1
        return x

    def _dispatch(self, step: To, x: Exchange) -> None:
        if len(step.uris) == 1:
            self._send(step.uris[0], x)
            return
        # Multicast: sequential, each destination on a deep copy; a failing
        # destination is logged and fails the exchange after the others ran.
        first_error: Optional[Exception] = None
        for uri in step.uris:
            try:
                self._send(uri, x.copy())
            except Exception as exc:
                logger.exception("route %s: multicast to %s failed", self.route_id, uri)
                self.engine.log.emit(self.route_id, "error", x.id, detail=f"{uri}: {exc!r}")
                if first_error is None:
                    first_error = exc
        if first_error is not None:
            raise first_error

    def _send(self, uri: str, x: Exchange) -> None:
        producer = self._producers.get(uri)
        if producer is None:
            parsed = parse_uri(uri)
            producer = self.engine.component(parsed.scheme).create_producer(
                parsed, self.engine, self.route_id
            )
            self._producers[uri] = producer
        self.engine.log.emit(self.route_id, "send", x.id, detail=uri)
        producer.process(x)

    def _agg_state(self, index: int, steps: tuple[Processor, ...]) -> AggregateState:
        state = self._agg_states.get(index)
        if state is None:
            state = AggregateState(steps[index], steps[index + 1 :])  # type: ignore[arg-type]
            self._agg_states[index] = state
        return state

    def _flush_expired(self) -> None:
        for state in list(self._agg_states.values()):
            for merged in state.flush_expired():
                with self._exec_lock:
                    try:
                        self._run(merged, state.tail, 0)
                    except Exception as exc:
                        logger.exception(
                            "route %s: timeout flush failed", self.route_id
                        )
                        self.engine.log.emit(
                            self.route_id, "error", merged.id, detail=repr(exc)
                        )


class RouteController:
    """Lifecycle handle for one route."""

    def __init__(self, service: RouteService):
        self._service = service

    @property
    def route_id(self) -> str:
        return self._service.route_id

    @property
    def state(self) -> RouteState:
        return self._service.state

    def suspend(self) -> None:
        self._service.suspend()

    def resume(self) -> None:
        self._service.resume()

    def stop(self) -> None:
        self._service.stop()


# --- engine -----------------------------------------------------------------------


class RouteEngine:
    """Holds components and routes; one engine per agent container."""

    def __init__(self, log: Optional[EventLog] = None, name: str = "engine"):
        self.name = name
        self.log = log or EventLog()
        self._components: dict[str, Component] = {
            "direct": _DirectComponent(),
            "buffered": _BufferedComponent(),
        }
        self._services: dict[str, RouteService] = {}
        self._direct: dict[str, RouteService] = {}
        self._buffers: dict[str, Queue] = {}
        self._lock = threading.Lock()
        self._ticker: Optional[threading.Thread] = None
        self._shutdown = threading.Event()

    # -- configuration --

    def add_component(self, scheme: str, component: Component) -> None:
        self._components[scheme] = component

    def component(self, scheme: str) -> Component:
        comp = self._components.get(scheme)
        if comp is None:
            raise UnknownSchemeError(scheme)
        return comp

    def add_routes(self, builder: RouteBuilder, start: bool = True) -> list[RouteController]:
        return [self.run_route(d) if start else self.add_route(d) for d in builder.definitions()]

    def add_route(self, definition: RouteDefinition) -> RouteController:
        with self._lock:
            if definition.route_id in self._services:
                raise RouteConfigError(f"duplicate route id {definition.route_id!r}")
            service = RouteService(self, definition)
            self._services[definition.route_id] = service
        return RouteController(service)

    def run_route(self, definition: RouteDefinition) -> RouteController:
        controller = self.add_route(definition)
        self._ensure_ticker()
        self._services[definition.route_id].start()
        return controller

    def controller(self, route_id: str) -> RouteController:
        return RouteController(self._services[route_id])

    def start(self) -> None:
        self._ensure_ticker()
        for service in list(self._services.values()):
            if service.state is RouteState.STOPPED:
                service.start()

    def stop(self) -> None:
        self._shutdown.set()
        for service in list(self._services.values()):
            if service.state is not RouteState.STOPPED:
                service.stop()
        if self._ticker is not None:
            self._ticker.join(timeout=1.0)
            self._ticker = None

    def stop_route_async(self, route_id: str) -> None:
        """Stop a route from a thread that may be inside that route's pipeline."""
        service = self._services[route_id]
        threading.Thread(target=lambda: service.stop(), daemon=True).start()

    # -- plumbing used by endpoints --

    def send(self, uri_text: str, exchange: Exchange) -> None:
        """Send an exchange straight to a producer endpoint (no owning route)."""
        uri = parse_uri(uri_text)
        producer = self.component(uri.scheme).create_producer(uri, self, "-")
        self.log.emit("-", "send", exchange.id, detail=uri_text)
        producer.process(exchange)

    def _register_direct(self, name: str, route: RouteService) -> None:
        current = self._direct.get(name)
        if current is not None and current is not route:
            raise RouteConfigError(f"direct:{name} already consumed by {current.route_id}")
        self._direct[name] = route

    def _unregister_direct(self, route: RouteService) -> None:
        for name, svc in list(self._direct.items()):
            if svc is route:
                del self._direct[name]

    def _buffer(self, name: str) -> Queue:
        with self._lock:
            q = self._buffers.get(name)
            if q is None:
                q = Queue()
                self._buffers[name] = q
            return q

    def _ensure_ticker(self) -> None:
        if self._ticker is None or not self._ticker.is_alive():
            self._shutdown.clear()
            self._ticker = threading.Thread(
                target=self._tick_loop, name=f"{self.name}-tick", daemon=True
            )
            self._ticker.start()

    def _tick_loop(self) -> None:
        while not self._shutdown.wait(TICK_SECONDS):
            for service in list(self._services.values()):
                if service.state is not RouteState.STOPPED:
                    service._flush_expired()

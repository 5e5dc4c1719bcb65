"""In-process simulated external services and their endpoint components.

* ``broker:queue:NAME`` / ``broker:topic:NAME`` -- message broker.  A queue
  message goes to exactly one consumer; a topic message is copied to every
  current subscriber.  The ``broker.destination`` header overrides the
  destination name in the URI.
* ``coord://SERVER/PATH?...`` -- coordination tree with persistent, ephemeral
  and ephemeral-sequential nodes, sessions, and child watches.
* ``mail:ACCOUNT?delete=&copyTo=`` (consumer) and ``mailto:ACCOUNT``
  (producer) -- mail store with per-account folders.
* ``table:DATASOURCE`` -- table store answering ``SELECT col[, col] FROM t``.
* ``timer:NAME?delay=&period=`` -- emits empty exchanges on a schedule.

All services are safe for concurrent access from route and agent threads.
"""

from __future__ import annotations

import itertools
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from queue import Empty, Queue
from typing import Optional, Sequence, Union

from .expressions import stringify
from .messages import EndpointUri, Exchange, ExchangePattern, RowSet, new_exchange
from .routing import Component, Consumer, Delivery, EventLog, Producer, RouteEngine
from .terms import Compound, ListTerm, Str, TermSyntaxError, parse_term, render_term

logger = logging.getLogger(__name__)

__all__ = [
    "BrokerService",
    "BrokerComponent",
    "CoordService",
    "CoordSession",
    "CoordNode",
    "CreateMode",
    "WatchStream",
    "CoordComponent",
    "MailMessage",
    "MailStore",
    "MailComponent",
    "MailtoComponent",
    "Table",
    "TableStore",
    "TableComponent",
    "TimerComponent",
    "NodeExistsError",
    "NoNodeError",
    "NoParentError",
    "SessionExpiredError",
    "UnknownAccountError",
    "MissingRecipientsError",
    "UnsupportedSqlError",
    "UnknownTableError",
    "UnknownColumnError",
    "DESTINATION_HEADER",
]

# Header that overrides a broker producer's destination name.
DESTINATION_HEADER = "broker.destination"


class NodeExistsError(ValueError):
    pass


class NoNodeError(KeyError):
    pass


class NoParentError(KeyError):
    pass


class SessionExpiredError(RuntimeError):
    pass


class UnknownAccountError(KeyError):
    pass


class MissingRecipientsError(ValueError):
    pass


class UnsupportedSqlError(ValueError):
    pass


class UnknownTableError(KeyError):
    pass


class UnknownColumnError(KeyError):
    pass


# --- message broker ---------------------------------------------------------------


class BrokerService:
    def __init__(self):
        self._queues: dict[str, Queue] = {}
        self._topics: dict[str, list[Queue]] = {}
        self._lock = threading.Lock()

    def queue(self, name: str) -> Queue:
        with self._lock:
            q = self._queues.get(name)
            if q is None:
                q = Queue()
                self._queues[name] = q
            return q

    def send_queue(self, name: str, exchange: Exchange) -> None:
        self.queue(name).put(exchange.copy())

    def subscribe_topic(self, name: str) -> Queue:
        q: Queue = Queue()
        with self._lock:
            self._topics.setdefault(name, []).append(q)
        return q

    def unsubscribe_topic(self, name: str, q: Queue) -> None:
        with self._lock:
            subs = self._topics.get(name, [])
            if q in subs:
                subs.remove(q)

    def send_topic(self, name: str, exchange: Exchange) -> None:
        with self._lock:
            subs = list(self._topics.get(name, []))
        for q in subs:
            q.put(exchange.copy())


def _broker_destination(uri: EndpointUri) -> tuple[str, str]:
    kind, _, name = uri.path.partition(":")
    if kind not in ("queue", "topic") or not name:
        raise ValueError(f"broker destination must be queue:NAME or topic:NAME, got {uri.path!r}")
    return kind, name


class _BrokerQueueConsumer(Consumer):
    def __init__(self, service: BrokerService, name: str):
        self._queue = service.queue(name)

    def poll(self, timeout: float) -> Optional[Delivery]:
        try:
            return Delivery(self._queue.get(timeout=timeout))
        except Empty:
            return None


class _BrokerTopicConsumer(Consumer):
    def __init__(self, service: BrokerService, name: str):
        self._service = service
        self._name = name
        self._queue: Optional[Queue] = None

    def start(self) -> None:
        self._queue = self._service.subscribe_topic(self._name)

    def stop(self) -> None:
        if self._queue is not None:
            self._service.unsubscribe_topic(self._name, self._queue)
            self._queue = None

    def poll(self, timeout: float) -> Optional[Delivery]:
        if self._queue is None:
            return None
        try:
            return Delivery(self._queue.get(timeout=timeout))
        except Empty:
            return None


class _BrokerProducer(Producer):
    def __init__(self, service: BrokerService, kind: str, name: str):
        self._service = service
        self._kind = kind
        self._name = name

    def process(self, exchange: Exchange) -> None:
        name = self._name
        override = exchange.in_msg.headers.get(DESTINATION_HEADER)
        if override is not None:
            name = stringify(override)
        if self._kind == "queue":
            self._service.send_queue(name, exchange)
        else:
            self._service.send_topic(name, exchange)


class BrokerComponent(Component):
    def __init__(self, service: BrokerService):
        self.service = service

    def create_consumer(self, uri: EndpointUri, route) -> Consumer:
        kind, name = _broker_destination(uri)
        if kind == "queue":
            return _BrokerQueueConsumer(self.service, name)
        return _BrokerTopicConsumer(self.service, name)

    def create_producer(self, uri: EndpointUri, engine: RouteEngine, route_id: str) -> Producer:
        kind, name = _broker_destination(uri)
        return _BrokerProducer(self.service, kind, name)


# --- coordination service ------------------------------------------------------------

CreateMode = str  # "PERSISTENT" | "EPHEMERAL" | "EPHEMERAL_SEQUENTIAL"

_SEQ_WIDTH = 10


@dataclass
class CoordNode:
    path: str
    data: str
    mode: CreateMode
    owner_session: Optional[int] = None
    children: dict[str, None] = field(default_factory=dict)
    seq_counter: int = 0


@dataclass
class CoordSession:
    session_id: int
    alive: bool = True
    owned: list[str] = field(default_factory=list)


class WatchStream:
    """Per-consumer stream of child-name lists for one node."""

    def __init__(self, repeat: bool):
        self.repeat = repeat
        self.queue: Queue[list[str]] = Queue()
        self._armed = True

    def push(self, children: list[str]) -> None:
        if not self._armed:
            return
        self.queue.put(children)
        if not self.repeat:
            self._armed = False

    def rearm(self) -> None:
        self._armed = True

    def get(self, timeout: Optional[float] = None) -> Optional[list[str]]:
        try:
            return self.queue.get(timeout=timeout)
        except Empty:
            return None


class CoordService:
    """A tree of named nodes with sessions, ephemerals and child watches.

    Ephemeral-sequential children get a 10-digit zero-padded counter suffix
    assigned per parent, so lexicographic order equals creation order; the
    counter never reuses a number after deletion.
    """

    def __init__(self):
        self._nodes: dict[str, CoordNode] = {"/": CoordNode("/", "", "PERSISTENT")}
        self._sessions: dict[int, CoordSession] = {}
        self._watches: dict[str, list[WatchStream]] = {}
        self._session_seq = itertools.count(1)
        self._lock = threading.RLock()

    def create_session(self) -> CoordSession:
        with self._lock:
            session = CoordSession(next(self._session_seq))
            self._sessions[session.session_id] = session
            return session

    def expire_session(self, session: Union[CoordSession, int]) -> None:
        sid = session.session_id if isinstance(session, CoordSession) else session
        with self._lock:
            state = self._sessions.get(sid)
            if state is None or not state.alive:
                return
            state.alive = False
            owned = list(state.owned)
        for path in owned:
            try:
                self.delete(path)
            except NoNodeError:
                pass

    def _require_session(self, session: Optional[CoordSession]) -> Optional[CoordSession]:
        if session is not None and not session.alive:
            raise SessionExpiredError(f"session {session.session_id} has expired")
        return session

    @staticmethod
    def _parent_of(path: str) -> str:
        parent = path.rsplit("/", 1)[0]
        return parent or "/"

    def create(
        self,
        session: Optional[CoordSession],
        path: str,
        data: str = "",
        mode: CreateMode = "PERSISTENT",
        auto_parents: bool = False,
    ) -> str:
        if not path.startswith("/") or path.endswith("/"):
            raise ValueError(f"bad node path {path!r}")
        self._require_session(session)
        with self._lock:
            parent_path = self._parent_of(path)
            if parent_path not in self._nodes:
                if not auto_parents:
                    raise NoParentError(parent_path)
                self.create(None, parent_path, "", "PERSISTENT", auto_parents=True)
            parent = self._nodes[parent_path]
            if parent.mode != "PERSISTENT":
                raise ValueError(f"ephemeral node {parent_path} cannot have children")
            name = path.rsplit("/", 1)[-1]
            if mode == "EPHEMERAL_SEQUENTIAL":
                name = f"{name}{parent.seq_counter:0{_SEQ_WIDTH}d}"
                parent.seq_counter += 1
                path = f"{parent_path.rstrip('/')}/{name}"
            elif path in self._nodes:
                raise NodeExistsError(path)
            owner = None
            if mode in ("EPHEMERAL", "EPHEMERAL_SEQUENTIAL"):
                if session is None:
                    raise ValueError("ephemeral nodes need an owning session")
                owner = session.session_id
                session.owned.append(path)
            self._nodes[path] = CoordNode(path, data, mode, owner)
            parent.children[name] = None
            self._notify_children(parent_path)
            return path

    def delete(self, path: str) -> None:
        with self._lock:
            node = self._nodes.get(path)
            if node is None:
                raise NoNodeError(path)
            if node.children:
                raise ValueError(f"node {path} still has children")
            del self._nodes[path]
            parent_path = self._parent_of(path)
            parent = self._nodes.get(parent_path)
            if parent is not None:
                parent.children.pop(path.rsplit("/", 1)[-1], None)
                self._notify_children(parent_path)

    def exists(self, path: str) -> bool:
        with self._lock:
            return path in self._nodes

    def get_data(self, path: str) -> str:
        with self._lock:
            node = self._nodes.get(path)
            if node is None:
                raise NoNodeError(path)
            return node.data

    def get_children(self, path: str) -> list[str]:
        with self._lock:
            node = self._nodes.get(path)
            if node is None:
                raise NoNodeError(path)
            return sorted(node.children)

    def watch_children(self, path: str, repeat: bool = True) -> WatchStream:
        """Stream the current child list immediately and on every change."""
        with self._lock:
            if path not in self._nodes:
                raise NoNodeError(path)
            stream = WatchStream(repeat)
            self._watches.setdefault(path, []).append(stream)
            stream.push(self.get_children(path))
            return stream

    def unwatch(self, path: str, stream: WatchStream) -> None:
        with self._lock:
            streams = self._watches.get(path, [])
            if stream in streams:
                streams.remove(stream)

    def _notify_children(self, path: str) -> None:
        children = self.get_children(path) if path in self._nodes else []
        for stream in self._watches.get(path, []):
            stream.push(children)


def _coord_node_path(uri: EndpointUri) -> str:
    # coord://server/a/b has path "//server/a/b"; the server segment names the
    # (single, in-process) service and is otherwise ignored.
    path = uri.path
    if path.startswith("//"):
        rest = path[2:]
        _, _, node = rest.partition("/")
        return "/" + node
    return path if path.startswith("/") else "/" + path


class _CoordWatchConsumer(Consumer):
    def __init__(self, service: CoordService, path: str, repeat: bool):
        self._service = service
        self._path = path
        self._repeat = repeat
        self._stream: Optional[WatchStream] = None

    def start(self) -> None:
        self._stream = self._service.watch_children(self._path, self._repeat)

    def stop(self) -> None:
        if self._stream is not None:
            self._service.unwatch(self._path, self._stream)
            self._stream = None

    def poll(self, timeout: float) -> Optional[Delivery]:
        if self._stream is None:
            return None
        children = self._stream.get(timeout)
        if children is None:
            return None
        return Delivery(new_exchange(ExchangePattern.IN_ONLY, list(children)))


class _CoordCreateProducer(Producer):
    def __init__(self, service: CoordService, session: Optional[CoordSession], path: str, mode: CreateMode):
        self._service = service
        self._session = session
        self._path = path
        self._mode = mode

    def process(self, exchange: Exchange) -> None:
        created = self._service.create(
            self._session,
            self._path,
            stringify(exchange.in_msg.body),
            self._mode,
            auto_parents=True,
        )
        exchange.in_msg.headers["coord.node"] = created


class CoordComponent(Component):
    def __init__(self, service: CoordService, session: Optional[CoordSession] = None):
        self.service = service
        self.session = session

    def create_consumer(self, uri: EndpointUri, route) -> Consumer:
        if not uri.get_bool("listChildren"):
            raise ValueError(f"coord consumer needs listChildren=true: {uri}")
        return _CoordWatchConsumer(
            self.service, _coord_node_path(uri), uri.get_bool("repeat", False)
        )

    def create_producer(self, uri: EndpointUri, engine: RouteEngine, route_id: str) -> Producer:
        if not uri.get_bool("create"):
            raise ValueError(f"coord producer needs create=true: {uri}")
        mode = uri.get("createMode", "PERSISTENT")
        if mode not in ("PERSISTENT", "EPHEMERAL", "EPHEMERAL_SEQUENTIAL"):
            raise ValueError(f"unknown createMode {mode!r}")
        return _CoordCreateProducer(self.service, self.session, _coord_node_path(uri), mode)


# --- mail store -----------------------------------------------------------------------


@dataclass
class MailMessage:
    id: str
    from_addr: str
    subject: str
    to: tuple[str, ...]
    body: str
    unread: bool = True


class MailStore:
    def __init__(self, log: Optional[EventLog] = None):
        self._accounts: dict[str, dict[str, list[MailMessage]]] = {}
        self._seq = itertools.count(1)
        self._lock = threading.Lock()
        self.log = log

    def add_account(self, name: str) -> None:
        with self._lock:
            self._accounts.setdefault(name, {"inbox": []})

    def accounts(self) -> list[str]:
        with self._lock:
            return sorted(self._accounts)

    def deliver(self, to: Sequence[str], from_addr: str, subject: str, body: str) -> list[str]:
        """One copy per recipient inbox; recipient accounts are created on demand."""
        ids = []
        with self._lock:
            for recipient in to:
                folders = self._accounts.setdefault(recipient, {"inbox": []})
                mail = MailMessage(str(next(self._seq)), from_addr, subject, tuple(to), body)
                folders["inbox"].append(mail)
                ids.append(mail.id)
        return ids

    def poll(self, account: str, delete: bool = False, copy_to: Optional[str] = None) -> list[MailMessage]:
        with self._lock:
            folders = self._accounts.get(account)
            if folders is None:
                raise UnknownAccountError(account)
            inbox = folders["inbox"]
            unread = [m for m in inbox if m.unread]
            for mail in unread:
                mail.unread = False
                if copy_to is not None:
                    folders.setdefault(copy_to, []).append(mail)
            if delete:
                folders["inbox"] = [m for m in inbox if m not in unread]
            return list(unread)

    def folder(self, account: str, name: str) -> list[MailMessage]:
        with self._lock:
            folders = self._accounts.get(account)
            if folders is None:
                raise UnknownAccountError(account)
            return list(folders.get(name, []))


class _MailConsumer(Consumer):
    def __init__(self, store: MailStore, account: str, delete: bool, copy_to: Optional[str]):
        self._store = store
        self._account = account
        self._delete = delete
        self._copy_to = copy_to
        self._pending: list[MailMessage] = []

    def poll(self, timeout: float) -> Optional[Delivery]:
        if not self._pending:
            self._pending = self._store.poll(self._account, self._delete, self._copy_to)
        if self._pending:
            mail = self._pending.pop(0)
            exchange = new_exchange(
                ExchangePattern.IN_ONLY,
                mail.body,
                {"from": mail.from_addr, "subject": mail.subject, "id": mail.id},
            )
            return Delivery(exchange)
        time.sleep(timeout)
        return None


def _recipients_from_header(value) -> list[str]:
    if isinstance(value, list):
        return [stringify(v) for v in value]
    text = stringify(value).strip()
    if not text:
        return []
    if text.startswith("["):
        try:
            term = parse_term(text)
        except TermSyntaxError:
            return [p.strip() for p in text.split(",") if p.strip()]
        if isinstance(term, ListTerm):
            return [el.text if isinstance(el, Str) else render_term(el) for el in term.elements]
    return [p.strip() for p in text.split(",") if p.strip()]


class _MailtoProducer(Producer):
    def __init__(self, store: MailStore, engine: RouteEngine, route_id: str):
        self._store = store
        self._engine = engine
        self._route_id = route_id

    def process(self, exchange: Exchange) -> None:
        headers = exchange.in_msg.headers
        recipients = _recipients_from_header(headers.get("to"))
        if not recipients:
            raise MissingRecipientsError("mail producer needs a non-empty 'to' header")
        from_addr = stringify(headers.get("from", ""))
        subject = stringify(headers.get("subject", ""))
        self._store.deliver(recipients, from_addr, subject, stringify(exchange.in_msg.body))
        self._engine.log.emit(
            self._route_id,
            "forward",
            exchange.id,
            detail=f"to=[{','.join(recipients)}] subject={subject}",
        )


class MailComponent(Component):
    """Consumer side: ``mail:ACCOUNT?delete=&copyTo=`` polls unread mail.

    Credential-style parameters (username, password, ...) are accepted and
    ignored.
    """

    def __init__(self, store: MailStore):
        self.store = store

    def create_consumer(self, uri: EndpointUri, route) -> Consumer:
        account = uri.path.lstrip("/")
        return _MailConsumer(
            self.store, account, uri.get_bool("delete"), uri.get("copyTo")
        )


class MailtoComponent(Component):
    def __init__(self, store: MailStore):
        self.store = store

    def create_producer(self, uri: EndpointUri, engine: RouteEngine, route_id: str) -> Producer:
        return _MailtoProducer(self.store, engine, route_id)


# --- table store ----------------------------------------------------------------------


@dataclass
class Table:
    name: str
    columns: tuple[str, ...]
    rows: list[dict[str, str]] = field(default_factory=list)


_SELECT_RE = re.compile(r"^\s*select\s+(?P<cols>\w+(?:\s*,\s*\w+)*)\s+from\s+(?P<table>\w+)\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class _NotifyConfig:
    topic: str
    label: str
    key_column: str


class TableStore:
    def __init__(self, broker: Optional[BrokerService] = None):
        self._tables: dict[str, Table] = {}
        self._broker = broker
        self._notify: dict[str, _NotifyConfig] = {}
        self._lock = threading.Lock()

    def add_table(self, name: str, columns: Sequence[str], rows: Sequence[dict[str, str]] = ()) -> None:
        with self._lock:
            self._tables[name] = Table(name, tuple(columns), [dict(r) for r in rows])

    def configure_notifications(self, table: str, topic: str, label: str, key_column: str) -> None:
        """Publish ``<label>_added("key")`` / ``<label>_removed("key")`` on mutation."""
        self._notify[table] = _NotifyConfig(topic, label, key_column)

    def query(self, sql_text: str) -> RowSet:
        m = _SELECT_RE.match(sql_text)
        if m is None:
            raise UnsupportedSqlError(f"only SELECT col[, col] FROM table is supported: {sql_text!r}")
        columns = [c.strip() for c in m.group("cols").split(",")]
        with self._lock:
            table = self._tables.get(m.group("table"))
            if table is None:
                raise UnknownTableError(m.group("table"))
            for col in columns:
                if col not in table.columns:
                    raise UnknownColumnError(col)
            rows = [{c: row[c] for c in columns} for row in table.rows]
        return RowSet(tuple(columns), rows)

    def rows(self, table_name: str) -> list[dict[str, str]]:
        with self._lock:
            table = self._tables.get(table_name)
            if table is None:
                raise UnknownTableError(table_name)
            return [dict(r) for r in table.rows]

    def mutate(self, table_name: str, op: str, row: dict[str, str]) -> None:
        """Insert or delete a row, then publish the change notification."""
        with self._lock:
            table = self._tables.get(table_name)
            if table is None:
                raise UnknownTableError(table_name)
            if op == "insert":
                table.rows.append(dict(row))
            elif op == "delete":
                table.rows = [r for r in table.rows if not all(r.get(k) == v for k, v in row.items())]
            else:
                raise ValueError(f"unknown table mutation {op!r}")
            notify = self._notify.get(table_name)
        if notify is not None and self._broker is not None:
            suffix = "added" if op == "insert" else "removed"
            descriptor = Compound(
                f"{notify.label}_{suffix}", (Str(row.get(notify.key_column, "")),)
            )
            self._broker.send_topic(
                notify.topic, new_exchange(ExchangePattern.IN_ONLY, render_term(descriptor))
            )

    def update_row(self, table_name: str, key_column: str, key: str, changes: dict[str, str]) -> None:
        with self._lock:
            table = self._tables.get(table_name)
            if table is None:
                raise UnknownTableError(table_name)
            for row in table.rows:
                if row.get(key_column) == key:
                    row.update(changes)


class _TableProducer(Producer):
    def __init__(self, store: TableStore):
        self._store = store

    def process(self, exchange: Exchange) -> None:
        exchange.in_msg.body = self._store.query(stringify(exchange.in_msg.body))


class TableComponent(Component):
    def __init__(self, store: TableStore):
        self.store = store

    def create_producer(self, uri: EndpointUri, engine: RouteEngine, route_id: str) -> Producer:
        return _TableProducer(self.store)


# --- timer ----------------------------------------------------------------------------


class _TimerConsumer(Consumer):
    def __init__(self, delay_ms: int, period_ms: Optional[int]):
        self._delay = delay_ms / 1000.0
        self._period = period_ms / 1000.0 if period_ms is not None else None
        self._next_due: Optional[float] = None
        self._done = False

    def start(self) -> None:
        self._next_due = time.monotonic() + self._delay

    def poll(self, timeout: float) -> Optional[Delivery]:
        if self._done or self._next_due is None:
            time.sleep(timeout)
            return None
        now = time.monotonic()
        if now < self._next_due:
            time.sleep(min(timeout, self._next_due - now))
            if time.monotonic() < self._next_due:
                return None
        if self._period is not None:
            self._next_due += self._period
        else:
            self._done = True
        return Delivery(new_exchange(ExchangePattern.IN_ONLY))


class TimerComponent(Component):
    def create_consumer(self, uri: EndpointUri, route) -> Consumer:
        delay = int(uri.get("delay", "0"))
        if delay < 0:
            raise ValueError("timer delay must be >= 0")
        period_text = uri.get("period")
        period = int(period_text) if period_text else None
        return _TimerConsumer(delay, period)

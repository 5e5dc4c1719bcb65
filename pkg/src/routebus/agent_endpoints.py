"""The ``agent:`` endpoint component bridging agents and routes.

Four endpoint kinds exist, addressed as ``agent:message``, ``agent:action``
(consumers) and ``agent:message``, ``agent:percept`` (producers).  Consumer
endpoints turn messages sent / actions performed by local agents into
exchanges, applying their URI-parameter selectors first; producer endpoints
turn exchanges into agent messages or percepts, with message headers
overriding the URI parameters field by field.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace as dc_replace
from enum import Enum
from typing import Optional, Union

from .agents import (
    AgentContainer,
    AgentId,
    AgentMessage,
    Async,
    ActionMode,
    BROADCAST,
    Persistence,
    Sync,
    UpdateMode,
)
from .expressions import stringify
from .messages import BodyValue, EndpointUri, Exchange, ExchangePattern, new_exchange
from .routing import Component, Consumer, Delivery, Producer, RouteEngine, _Future, _QueueConsumer
from .terms import (
    ActionTerm,
    Atom,
    Compound,
    Number,
    Str,
    Term,
    TermSyntaxError,
    bind_argument,
    parse_term,
    render_term,
)

__all__ = [
    "EndpointKind",
    "AgentEndpointConfig",
    "AgentComponent",
    "consume_agent_message",
    "consume_agent_action",
    "complete_sync_action",
    "produce_agent_message",
    "produce_percept",
    "EndpointConfigError",
    "InvalidRegexError",
    "UnparseableContentError",
    "MissingIllocForceError",
    "MissingResultHeaderError",
]


class EndpointConfigError(ValueError):
    pass


class InvalidRegexError(EndpointConfigError):
    pass


class UnparseableContentError(ValueError):
    pass


class MissingIllocForceError(ValueError):
    pass


class MissingResultHeaderError(KeyError):
    pass


class EndpointKind(Enum):
    MESSAGE_CONSUMER = "message-consumer"
    ACTION_CONSUMER = "action-consumer"
    MESSAGE_PRODUCER = "message-producer"
    PERCEPT_PRODUCER = "percept-producer"


_ALLOWED_PARAMS = {
    EndpointKind.MESSAGE_CONSUMER: {
        "illoc_force",
        "sender",
        "receiver",
        "annotations",
        "match",
        "replace",
        "exchangePattern",
    },
    EndpointKind.ACTION_CONSUMER: {
        "actor",
        "actionName",
        "annotations",
        "match",
        "replace",
        "resultHeaderMap",
        "exchangePattern",
    },
    EndpointKind.MESSAGE_PRODUCER: {"illoc_force", "sender", "receiver", "annotations"},
    EndpointKind.PERCEPT_PRODUCER: {"receiver", "annotations", "persistent", "updateMode"},
}


def split_outside_brackets(text: str, sep: str = ",") -> list[str]:
    """Split on ``sep`` skipping separators nested in parentheses/brackets."""
    parts: list[str] = []
    depth = 0
    buf: list[str] = []
    in_str = False
    for ch in text:
        if ch == '"':
            in_str = not in_str
        if not in_str:
            if ch in "([":
                depth += 1
            elif ch in ")]":
                depth -= 1
            elif ch == sep and depth == 0:
                parts.append("".join(buf))
                buf = []
                continue
        buf.append(ch)
    if buf or parts:
        parts.append("".join(buf))
    return parts


def _expand_groups(template: str, match: "re.Match[str]") -> str:
    """Substitute ``$n`` with captured groups; ``$$`` is a literal dollar."""
    out: list[str] = []
    i = 0
    while i < len(template):
        ch = template[i]
        if ch == "$" and i + 1 < len(template):
            nxt = template[i + 1]
            if nxt == "$":
                out.append("$")
                i += 2
                continue
            if nxt.isdigit():
                j = i + 1
                while j < len(template) and template[j].isdigit():
                    j += 1
                out.append(match.group(int(template[i + 1 : j])) or "")
                i = j
                continue
        out.append(ch)
        i += 1
    return "".join(out)


@dataclass(frozen=True)
class AgentEndpointConfig:
    kind: EndpointKind
    illoc_force: Optional[str] = None
    sender: Optional[str] = None
    receiver: Optional[str] = None
    actor: Optional[str] = None
    action_name: Optional[str] = None
    annotations: tuple[Term, ...] = ()
    match: Optional[str] = None
    replace: Optional[str] = None
    result_header_map: tuple[tuple[str, int], ...] = ()
    persistent: Optional[bool] = None
    update_mode: Optional[str] = None
    exchange_pattern: Optional[ExchangePattern] = None

    def __post_init__(self):
        if self.replace is not None and self.match is None:
            raise EndpointConfigError("replace requires match")
        if self.result_header_map and self.kind is not EndpointKind.ACTION_CONSUMER:
            raise EndpointConfigError("resultHeaderMap applies to action consumers only")
        if (self.persistent is not None or self.update_mode is not None) and (
            self.kind is not EndpointKind.PERCEPT_PRODUCER
        ):
            raise EndpointConfigError("persistent/updateMode apply to percept producers only")
        if self.match is not None:
            try:
                object.__setattr__(self, "_pattern", re.compile(self.match))
            except re.error as exc:
                raise InvalidRegexError(f"bad match pattern {self.match!r}: {exc}") from exc
        else:
            object.__setattr__(self, "_pattern", None)

    @property
    def pattern(self) -> Optional["re.Pattern[str]"]:
        return self._pattern  # type: ignore[attr-defined]

    @classmethod
    def from_uri(cls, uri: EndpointUri, role: str) -> "AgentEndpointConfig":
        if uri.scheme != "agent":
            raise EndpointConfigError(f"not an agent endpoint: {uri}")
        kind = {
            ("message", "consumer"): EndpointKind.MESSAGE_CONSUMER,
            ("action", "consumer"): EndpointKind.ACTION_CONSUMER,
            ("message", "producer"): EndpointKind.MESSAGE_PRODUCER,
            ("percept", "producer"): EndpointKind.PERCEPT_PRODUCER,
        }.get((uri.path, role))
        if kind is None:
            raise EndpointConfigError(f"agent:{uri.path} has no {role} form")
        allowed = _ALLOWED_PARAMS[kind]
        values: dict[str, str] = {}
        for name, value in uri.params:
            if name not in allowed:
                raise EndpointConfigError(f"parameter {name!r} not recognised on agent:{uri.path}")
            values[name] = value
        annotations: tuple[Term, ...] = ()
        if "annotations" in values:
            annotations = tuple(
                parse_term(part.strip())
                for part in split_outside_brackets(values["annotations"])
                if part.strip()
            )
        result_map: tuple[tuple[str, int], ...] = ()
        if "resultHeaderMap" in values:
            pairs = []
            for part in values["resultHeaderMap"].split(","):
                name, _, idx = part.partition(":")
                if not name or not idx.isdigit() or int(idx) < 1:
                    raise EndpointConfigError(f"bad resultHeaderMap entry {part!r}")
                pairs.append((name, int(idx)))
            result_map = tuple(pairs)
        pattern = None
        if "exchangePattern" in values:
            try:
                pattern = ExchangePattern.parse(values["exchangePattern"])
            except ValueError as exc:
                raise EndpointConfigError(str(exc)) from exc
        persistent = None
        if "persistent" in values:
            persistent = values["persistent"].lower() in ("true", "1", "yes")
        return cls(
            kind=kind,
            illoc_force=values.get("illoc_force"),
            sender=values.get("sender"),
            receiver=values.get("receiver"),
            actor=values.get("actor"),
            action_name=values.get("actionName"),
            annotations=annotations,
            match=values.get("match"),
            replace=values.get("replace"),
            result_header_map=result_map,
            persistent=persistent,
            update_mode=values.get("updateMode"),
            exchange_pattern=pattern,
        )


# --- selector checks ---------------------------------------------------------


def _annotations_match(cfg: AgentEndpointConfig, present: tuple[Term, ...]) -> bool:
    return all(ann in present for ann in cfg.annotations)


def _receiver_matches(cfg_receiver: str, msg_receiver: str) -> bool:
    if cfg_receiver == BROADCAST:
        # Only broadcast messages are selected.
        return msg_receiver == BROADCAST
    wanted = [part.strip() for part in cfg_receiver.split(",")]
    return msg_receiver in wanted


def _match_and_replace(cfg: AgentEndpointConfig, rendered: str) -> Optional[str]:
    """Returns the exchange body text, or None when the match selector rejects."""
    if cfg.pattern is None:
        return rendered
    m = cfg.pattern.fullmatch(rendered)
    if m is None:
        return None
    if cfg.replace is None:
        return rendered
    return _expand_groups(cfg.replace, m)


# --- consumer operations -------------------------------------------------------


def consume_agent_message(cfg: AgentEndpointConfig, msg: AgentMessage) -> Optional[Exchange]:
    """Build an exchange for a local agent message, or None when a selector rejects."""
    assert cfg.kind is EndpointKind.MESSAGE_CONSUMER
    if cfg.illoc_force is not None and msg.illoc_force != cfg.illoc_force:
        return None
    if cfg.sender is not None and msg.sender != cfg.sender:
        return None
    if cfg.receiver is not None and not _receiver_matches(cfg.receiver, msg.receiver):
        return None
    if not _annotations_match(cfg, msg.annotations):
        return None
    body = _match_and_replace(cfg, render_term(msg.content))
    if body is None:
        return None
    pattern = cfg.exchange_pattern or ExchangePattern.IN_ONLY
    return new_exchange(
        pattern,
        body,
        {
            "illoc_force": msg.illoc_force,
            "sender": msg.sender,
            "receiver": msg.receiver,
            "annotations": [render_term(a) for a in msg.annotations],
            "msg_id": msg.msg_id,
        },
    )


def consume_agent_action(
    cfg: AgentEndpointConfig, actor: AgentId, term: ActionTerm, mode: ActionMode
) -> Optional[Exchange]:
    """Build an exchange for an action performed by a local agent.

    A synchronous dispatch against an endpoint with no ``resultHeaderMap``
    is a configuration error: the route reply could never be bound back.
    """
    assert cfg.kind is EndpointKind.ACTION_CONSUMER
    if cfg.actor is not None and actor.full_name != cfg.actor:
        return None
    if cfg.action_name is not None and term.functor != cfg.action_name:
        return None
    annotations = getattr(term.literal, "annotations", ())
    if not _annotations_match(cfg, annotations):
        return None
    body = _match_and_replace(cfg, render_term(term.literal))
    if body is None:
        return None
    if isinstance(mode, Sync) and not cfg.result_header_map:
        raise EndpointConfigError(
            f"sync action {term.functor} needs an endpoint with a resultHeaderMap"
        )
    # A synchronous dispatch is a request/reply exchange even when the URI
    # leaves exchangePattern unset.
    if cfg.exchange_pattern is ExchangePattern.IN_OUT or isinstance(mode, Sync):
        pattern = ExchangePattern.IN_OUT
    else:
        pattern = ExchangePattern.IN_ONLY
    return new_exchange(
        pattern,
        body,
        {
            "actor": actor.full_name,
            "annotations": [render_term(a) for a in annotations],
            "actionName": term.functor,
            "params": [render_term(a) for a in term.args],
        },
    )


def _header_to_term(value: BodyValue) -> Term:
    """Result-header conversion: text parses as a term, falling back to a string."""
    if isinstance(value, str):
        try:
            return parse_term(value)
        except TermSyntaxError:
            return Str(value)
    if isinstance(value, (int, float)):
        return Number(float(value))
    if isinstance(value, list):
        try:
            return parse_term(stringify(value))
        except TermSyntaxError:
            return Str(stringify(value))
    raise UnparseableContentError(f"no term form for header value {value!r}")


def complete_sync_action(
    cfg: AgentEndpointConfig, reply: Exchange, term: ActionTerm
) -> ActionTerm:
    """Bind each mapped reply header onto the action term's arguments."""
    headers = (reply.out_msg or reply.in_msg).headers
    bound = term
    for header_name, index in cfg.result_header_map:
        if header_name not in headers:
            raise MissingResultHeaderError(header_name)
        bound = bind_argument(bound, index, _header_to_term(headers[header_name]))
    return bound


# --- producer operations --------------------------------------------------------


def _effective(x: Exchange, header_name: str, cfg_value: Optional[str]) -> Optional[str]:
    if header_name in x.in_msg.headers:
        return stringify(x.in_msg.headers[header_name])
    return cfg_value


def _effective_annotations(x: Exchange, cfg: AgentEndpointConfig) -> tuple[Term, ...]:
    if "annotations" in x.in_msg.headers:
        value = x.in_msg.headers["annotations"]
        if isinstance(value, list):
            texts = [stringify(v) for v in value]
        else:
            texts = [p.strip() for p in split_outside_brackets(stringify(value)) if p.strip()]
        return tuple(parse_term(t) for t in texts)
    return cfg.annotations


def _parse_content(x: Exchange) -> Union[Atom, Compound]:
    text = stringify(x.in_msg.body)
    try:
        term = parse_term(text)
    except TermSyntaxError as exc:
        raise UnparseableContentError(f"body is not a literal: {text!r}") from exc
    if not isinstance(term, (Atom, Compound)):
        raise UnparseableContentError(f"body is not a literal: {text!r}")
    return term


def produce_agent_message(container: AgentContainer, cfg: AgentEndpointConfig, x: Exchange) -> None:
    """Turn an exchange into agent messages for local inboxes.

    Headers override URI parameters field by field; the receiver defaults to
    broadcast and may be a comma-separated recipient list.
    """
    assert cfg.kind is EndpointKind.MESSAGE_PRODUCER
    illoc = _effective(x, "illoc_force", cfg.illoc_force)
    if not illoc:
        raise MissingIllocForceError("neither header nor parameter supplies illoc_force")
    sender = _effective(x, "sender", cfg.sender) or ""
    receiver = _effective(x, "receiver", cfg.receiver) or BROADCAST
    annotations = _effective_annotations(x, cfg)
    content = _parse_content(x)
    msg_id = x.in_msg.headers.get("msg_id")
    recipients = [part.strip() for part in receiver.split(",") if part.strip()]
    for recipient in recipients:
        msg = AgentMessage(
            illoc,
            sender,
            recipient,
            content,
            stringify(msg_id) if msg_id is not None else container.next_msg_id(),
            annotations,
        )
        container.deliver_local(msg)


def produce_percept(container: AgentContainer, cfg: AgentEndpointConfig, x: Exchange) -> None:
    """Turn an exchange into percepts, transient accumulate by default."""
    assert cfg.kind is EndpointKind.PERCEPT_PRODUCER
    receiver = _effective(x, "receiver", cfg.receiver) or BROADCAST
    if "persistent" in x.in_msg.headers:
        persistent = stringify(x.in_msg.headers["persistent"]).lower() in ("true", "1", "yes")
    else:
        persistent = bool(cfg.persistent)
    update_mode_text = _effective(x, "updateMode", cfg.update_mode)
    mode = (
        UpdateMode.REPLACE_SAME_FUNCTOR_ARITY
        if update_mode_text == UpdateMode.REPLACE_SAME_FUNCTOR_ARITY.value
        else UpdateMode.ACCUMULATE
    )
    annotations = _effective_annotations(x, cfg)
    literal = _parse_content(x)
    if annotations:
        literal = dc_replace(literal, annotations=literal.annotations + annotations)
    if receiver == BROADCAST:
        targets: Union[str, list[str]] = BROADCAST
    else:
        targets = [part.strip() for part in receiver.split(",") if part.strip()]
    container.deliver_percept(
        targets,
        literal,
        Persistence.PERSISTENT if persistent else Persistence.TRANSIENT,
        mode,
    )


# --- engine component -------------------------------------------------------------


class _ConsumerBinding:
    """Registered with the container; feeds one route's consumer queue."""

    def __init__(self, container: AgentContainer, cfg: AgentEndpointConfig, sink: _QueueConsumer):
        self.container = container
        self.cfg = cfg
        self.sink = sink

    def offer_message(self, msg: AgentMessage) -> bool:
        exchange = consume_agent_message(self.cfg, msg)
        if exchange is None:
            return False
        self.sink.offer(Delivery(exchange))
        return True

    def offer_action(
        self,
        actor: AgentId,
        term: ActionTerm,
        mode: ActionMode,
        reply: Optional[_Future] = None,
    ) -> Optional[Exchange]:
        exchange = consume_agent_action(self.cfg, actor, term, mode)
        if exchange is None:
            return None
        self.sink.offer(Delivery(exchange, reply))
        return exchange

    def would_match(self, actor: AgentId, term: ActionTerm) -> bool:
        try:
            return consume_agent_action(self.cfg, actor, term, Async()) is not None
        except EndpointConfigError:
            return False

    def complete(self, reply: Exchange, term: ActionTerm) -> ActionTerm:
        return complete_sync_action(self.cfg, reply, term)


class _AgentConsumer(_QueueConsumer):
    def __init__(self, container: AgentContainer, cfg: AgentEndpointConfig):
        super().__init__()
        self.container = container
        self.cfg = cfg
        self.binding = _ConsumerBinding(container, cfg, self)

    def start(self) -> None:
        if self.cfg.kind is EndpointKind.MESSAGE_CONSUMER:
            self.container.register_message_binding(self.binding)
        else:
            self.container.register_action_binding(self.binding)

    def stop(self) -> None:
        self.container.unregister_binding(self.binding)


class _AgentMessageProducer(Producer):
    def __init__(self, container: AgentContainer, cfg: AgentEndpointConfig):
        self.container = container
        self.cfg = cfg

    def process(self, exchange: Exchange) -> None:
        produce_agent_message(self.container, self.cfg, exchange)


class _AgentPerceptProducer(Producer):
    def __init__(self, container: AgentContainer, cfg: AgentEndpointConfig):
        self.container = container
        self.cfg = cfg

    def process(self, exchange: Exchange) -> None:
        produce_percept(self.container, self.cfg, exchange)


class AgentComponent(Component):
    """Endpoint factory bound to one agent container."""

    def __init__(self, container: AgentContainer):
        self.container = container

    def create_consumer(self, uri: EndpointUri, route) -> Consumer:
        cfg = AgentEndpointConfig.from_uri(uri, "consumer")
        return _AgentConsumer(self.container, cfg)

    def create_producer(self, uri: EndpointUri, engine: RouteEngine, route_id: str) -> Producer:
        cfg = AgentEndpointConfig.from_uri(uri, "producer")
        if cfg.kind is EndpointKind.MESSAGE_PRODUCER:
            return _AgentMessageProducer(self.container, cfg)
        return _AgentPerceptProducer(self.container, cfg)

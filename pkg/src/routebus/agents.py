"""Agent container and reactive agents: percept queues, inboxes, cycles, actions.

Agents are deliberately thin: behaviour rules map triggers (startup, a percept
arriving, a message arriving) to host hooks that return effects (send a
message, perform an action, update internal memory).  Queue semantics, agent
naming (``containerId__localName``) and the endpoint contracts are kept rich
enough that a full reasoning engine could be slotted in behind the same
container interface.

Each agent runs on its own thread; inboxes and percept queues take writes from
any endpoint thread and are drained only by the owning agent's cycle.
"""

from __future__ import annotations

import itertools
import logging
import threading
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Union

from .routing import EventLog, _Future
from .terms import (
    ActionTerm,
    Literal,
    Term,
    functor_of,
    args_of,
    render_term,
)

logger = logging.getLogger(__name__)

__all__ = [
    "AgentId",
    "Persistence",
    "UpdateMode",
    "PerceptEntry",
    "AgentMessage",
    "AgentState",
    "AgentContainer",
    "BehaviorRule",
    "OnStartup",
    "OnPercept",
    "OnMessage",
    "SendMessage",
    "PerformAction",
    "UpdateInternal",
    "ActionMode",
    "Sync",
    "Async",
    "DeliveryOutcome",
    "UnknownAgentError",
    "NoMatchingEndpointError",
    "ActionTimeoutError",
    "UnboundVariablesError",
    "CoordinationUnavailableError",
    "BROADCAST",
]

# Reserved receiver name for broadcasts; no agent can carry it because the
# container id is always prepended to local names.
BROADCAST = "all"

DEFAULT_SYNC_TIMEOUT_MS = 5000

# Idle floor for the event-driven cycle.
_CYCLE_WAIT_SECONDS = 0.01


class UnknownAgentError(KeyError):
    pass


class NoMatchingEndpointError(LookupError):
    pass


class ActionTimeoutError(TimeoutError):
    pass


class UnboundVariablesError(ValueError):
    pass


class CoordinationUnavailableError(RuntimeError):
    pass


@dataclass(frozen=True)
class AgentId:
    container_id: str
    local_name: str

    def __post_init__(self):
        if "__" in self.local_name:
            raise ValueError(f"local name {self.local_name!r} contains '__'")
        if self.full_name == BROADCAST:
            raise ValueError(f"agent may not be named {BROADCAST!r}")

    @property
    def full_name(self) -> str:
        return f"{self.container_id}__{self.local_name}"


class Persistence(Enum):
    TRANSIENT = "transient"
    PERSISTENT = "persistent"


class UpdateMode(Enum):
    ACCUMULATE = "accumulate"
    REPLACE_SAME_FUNCTOR_ARITY = "-+"


@dataclass
class PerceptEntry:
    literal: Literal
    persistence: Persistence
    update_mode: UpdateMode
    novel: bool = True


@dataclass(frozen=True)
class AgentMessage:
    illoc_force: str
    sender: str
    receiver: str
    content: Literal
    msg_id: str
    annotations: tuple[Term, ...] = ()


# --- behaviour rules and effects -------------------------------------------------


@dataclass(frozen=True)
class OnStartup:
    pass


@dataclass(frozen=True)
class OnPercept:
    functor: str
    arity: int


@dataclass(frozen=True)
class OnMessage:
    illoc_force: str
    functor: str


Trigger = Union[OnStartup, OnPercept, OnMessage]


@dataclass(frozen=True)
class Sync:
    timeout_ms: int = DEFAULT_SYNC_TIMEOUT_MS


class Async:
    pass


ActionMode = Union[Sync, Async]


@dataclass(frozen=True)
class SendMessage:
    illoc_force: str
    receiver: str
    content: Literal
    annotations: tuple[Term, ...] = ()


@dataclass(frozen=True)
class PerformAction:
    term: ActionTerm
    mode: ActionMode = field(default_factory=Async)
    on_result: Optional[Callable[["AgentState", object], None]] = None


@dataclass(frozen=True)
class UpdateInternal:
    key: str
    value: object


AgentEffect = Union[SendMessage, PerformAction, UpdateInternal]

Hook = Callable[["AgentState", object], Sequence[AgentEffect]]


@dataclass(frozen=True)
class BehaviorRule:
    trigger: Trigger
    hook: Hook
    name: str = "rule"


class DeliveryOutcome(Enum):
    DELIVERED = "Delivered"
    TO_ROUTES = "ToRoutes"


class AgentState:
    """Per-agent queues plus a memory dict for the behaviour hooks."""

    def __init__(self, agent_id: AgentId, behaviors: Sequence[BehaviorRule] = ()):
        self.id = agent_id
        self.behaviors = list(behaviors)
        self.memory: dict[str, object] = {}
        self.inbox: deque[AgentMessage] = deque()
        self.transient: deque[PerceptEntry] = deque()
        self.persistent: list[PerceptEntry] = []
        self.lock = threading.Lock()
        self.signal = threading.Event()
        self.started = False

    @property
    def full_name(self) -> str:
        return self.id.full_name

    # -- writes (any thread) --

    def enqueue_message(self, msg: AgentMessage) -> None:
        with self.lock:
            self.inbox.append(msg)
        self.signal.set()

    def add_percept(self, literal: Literal, persistence: Persistence, mode: UpdateMode) -> None:
        with self.lock:
            if mode is UpdateMode.REPLACE_SAME_FUNCTOR_ARITY:
                self._remove_same_shape(literal)
            entry = PerceptEntry(literal, persistence, mode)
            if persistence is Persistence.TRANSIENT:
                self.transient.append(entry)
            else:
                # Persistent accumulation has set semantics: an identical
                # literal is not stored twice.
                rendered = render_term(literal)
                if any(render_term(e.literal) == rendered for e in self.persistent):
                    return
                self.persistent.append(entry)
        self.signal.set()

    def _remove_same_shape(self, literal: Literal) -> None:
        f, n = functor_of(literal), len(args_of(literal))
        same = lambda e: functor_of(e.literal) == f and len(args_of(e.literal)) == n
        self.transient = deque(e for e in self.transient if not same(e))
        self.persistent = [e for e in self.persistent if not same(e)]

    # -- reads (agent's cycle only) --

    def drain_for_cycle(self) -> tuple[list[PerceptEntry], list[PerceptEntry], list[AgentMessage]]:
        with self.lock:
            transients = list(self.transient)
            self.transient.clear()
            novel = [e for e in self.persistent if e.novel]
            for e in novel:
                e.novel = False
            messages = list(self.inbox)
            self.inbox.clear()
        return transients, novel, messages

    def persistent_snapshot(self) -> list[Literal]:
        with self.lock:
            return [e.literal for e in self.persistent]


class AgentContainer:
    """A process-local group of agents sharing one container id.

    A dynamic container id is obtained by creating an ephemeral-sequential
    node under ``/containers`` in the coordination service; the node name
    becomes the id.  Static ids skip coordination (a session is still opened
    when a coordination service is supplied, so routes created for this
    container can own ephemeral nodes).
    """

    def __init__(
        self,
        container_id: Optional[str] = None,
        coord=None,
        dynamic_id: bool = False,
        direct_delivery: bool = True,
        log: Optional[EventLog] = None,
    ):
        self.coord = coord
        self.session = None
        if dynamic_id:
            if coord is None:
                raise CoordinationUnavailableError("dynamic container id needs a coordination service")
            self.session = coord.create_session()
            path = coord.create(
                self.session, "/containers/container", "", "EPHEMERAL_SEQUENTIAL", auto_parents=True
            )
            self.container_id = path.rsplit("/", 1)[-1]
        else:
            if not container_id:
                raise ValueError("static container id required when dynamic_id is off")
            self.container_id = container_id
            if coord is not None:
                self.session = coord.create_session()
        self.direct_delivery = direct_delivery
        self.log = log or EventLog()
        self.agents: dict[str, AgentState] = {}
        self._message_bindings: list = []
        self._action_bindings: list = []
        self._bindings_lock = threading.Lock()
        self._msg_seq = itertools.count(1)
        self._threads: dict[str, threading.Thread] = {}
        self._running = threading.Event()

    # -- agents --

    def add_agent(self, local_name: str, behaviors: Sequence[BehaviorRule] = ()) -> AgentState:
        agent = AgentState(AgentId(self.container_id, local_name), behaviors)
        if agent.full_name in self.agents:
            raise ValueError(f"duplicate agent {agent.full_name}")
        self.agents[agent.full_name] = agent
        return agent

    def start(self) -> None:
        self._running.set()
        for agent in self.agents.values():
            if agent.full_name in self._threads:
                continue
            t = threading.Thread(
                target=self._agent_loop, args=(agent,), name=f"agent-{agent.full_name}", daemon=True
            )
            self._threads[agent.full_name] = t
            t.start()
        self.log.emit(f"container:{self.container_id}", "lifecycle", detail="started")

    def stop(self) -> None:
        self._running.clear()
        for agent in self.agents.values():
            agent.signal.set()
        for t in self._threads.values():
            t.join(timeout=2.0)
        self._threads.clear()
        self.log.emit(f"container:{self.container_id}", "lifecycle", detail="stopped")

    def _agent_loop(self, agent: AgentState) -> None:
        self.run_cycle(agent)  # fires startup rules first
        while self._running.is_set():
            agent.signal.wait(_CYCLE_WAIT_SECONDS)
            agent.signal.clear()
            if not self._running.is_set():
                return
            self.run_cycle(agent)

    # -- reasoning cycle --

    def run_cycle(self, agent: AgentState) -> list[AgentEffect]:
        """One cycle: startup (first time), then drain queues and fire rules.

        The collected effects are executed before returning; hook errors are
        logged and skip only the offending rule.
        """
        effects: list[AgentEffect] = []
        if not agent.started:
            agent.started = True
            for rule in agent.behaviors:
                if isinstance(rule.trigger, OnStartup):
                    effects.extend(self._fire(agent, rule, None))
        transients, novel_persistents, messages = agent.drain_for_cycle()
        percepts = [e.literal for e in transients] + [e.literal for e in novel_persistents]
        for rule in agent.behaviors:
            trig = rule.trigger
            if isinstance(trig, OnPercept):
                for lit in percepts:
                    if functor_of(lit) == trig.functor and len(args_of(lit)) == trig.arity:
                        effects.extend(self._fire(agent, rule, lit))
            elif isinstance(trig, OnMessage):
                for msg in messages:
                    if msg.illoc_force == trig.illoc_force and functor_of(msg.content) == trig.functor:
                        effects.extend(self._fire(agent, rule, msg))
        self._execute(agent, effects)
        return effects

    def _fire(self, agent: AgentState, rule: BehaviorRule, payload) -> list[AgentEffect]:
        try:
            return list(rule.hook(agent, payload))
        except Exception:
            logger.exception("agent %s: rule %s failed", agent.full_name, rule.name)
            self.log.emit(
                f"container:{self.container_id}",
                "agent-error",
                detail=f"{agent.full_name} rule {rule.name} failed",
            )
            return []

    def _execute(self, agent: AgentState, effects: list[AgentEffect]) -> None:
        for effect in effects:
            try:
                if isinstance(effect, UpdateInternal):
                    agent.memory[effect.key] = effect.value
                elif isinstance(effect, SendMessage):
                    msg = AgentMessage(
                        effect.illoc_force,
                        agent.full_name,
                        effect.receiver,
                        effect.content,
                        self.next_msg_id(),
                        effect.annotations,
                    )
                    self.route_local_message(msg)
                elif isinstance(effect, PerformAction):
                    result = self.perform_action(agent, effect.term, effect.mode)
                    if effect.on_result is not None:
                        effect.on_result(agent, result)
            except Exception:
                logger.exception("agent %s: effect %r failed", agent.full_name, effect)
                self.log.emit(
                    f"container:{self.container_id}",
                    "agent-error",
                    detail=f"{agent.full_name} effect failed: {effect!r}",
                )

    def next_msg_id(self) -> str:
        return f"{self.container_id}-m{next(self._msg_seq)}"

    # -- message routing --

    def route_local_message(self, msg: AgentMessage) -> DeliveryOutcome:
        """Deliver locally when direct delivery applies, else hand to routes."""
        if self.direct_delivery:
            if msg.receiver == BROADCAST:
                for agent in list(self.agents.values()):
                    agent.enqueue_message(msg)
                return DeliveryOutcome.DELIVERED
            if msg.receiver in self.agents:
                self.agents[msg.receiver].enqueue_message(msg)
                return DeliveryOutcome.DELIVERED
        matched = False
        with self._bindings_lock:
            bindings = list(self._message_bindings)
        for binding in bindings:
            if binding.offer_message(msg):
                matched = True
        if not matched:
            self.log.emit(
                f"container:{self.container_id}",
                "deadletter",
                detail=f"unroutable message to {msg.receiver}: {render_term(msg.content)}",
            )
        return DeliveryOutcome.TO_ROUTES

    def deliver_local(self, msg: AgentMessage) -> None:
        """Put a route-produced message into local inboxes (broadcast allowed)."""
        if msg.receiver == BROADCAST:
            for agent in list(self.agents.values()):
                agent.enqueue_message(msg)
            return
        agent = self.agents.get(msg.receiver)
        if agent is None:
            self.log.emit(
                f"container:{self.container_id}",
                "deadletter",
                detail=f"no local agent {msg.receiver}",
            )
            return
        agent.enqueue_message(msg)

    # -- percepts --

    def deliver_percept(
        self,
        receivers: Union[str, Sequence[str]],
        literal: Literal,
        persistence: Persistence = Persistence.TRANSIENT,
        update_mode: UpdateMode = UpdateMode.ACCUMULATE,
    ) -> None:
        if isinstance(receivers, str):
            targets = (
                list(self.agents.values())
                if receivers == BROADCAST
                else [self._require_agent(receivers)]
            )
        else:
            targets = [self._require_agent(name) for name in receivers]
        for agent in targets:
            agent.add_percept(literal, persistence, update_mode)

    def _require_agent(self, full_name: str) -> AgentState:
        agent = self.agents.get(full_name)
        if agent is None:
            raise UnknownAgentError(full_name)
        return agent

    # -- actions --

    def register_message_binding(self, binding) -> None:
        with self._bindings_lock:
            self._message_bindings.append(binding)

    def register_action_binding(self, binding) -> None:
        with self._bindings_lock:
            self._action_bindings.append(binding)

    def unregister_binding(self, binding) -> None:
        with self._bindings_lock:
            for coll in (self._message_bindings, self._action_bindings):
                if binding in coll:
                    coll.remove(binding)

    def perform_action(self, agent: AgentState, term: ActionTerm, mode: ActionMode):
        """Dispatch an action to matching action-consumer endpoints.

        Asynchronous actions must be ground; they are offered to every
        matching endpoint and succeed immediately.  Synchronous actions go to
        the first matching endpoint as a request/reply exchange; the reply's
        mapped headers are bound onto the term's variables.
        """
        with self._bindings_lock:
            bindings = list(self._action_bindings)
        if isinstance(mode, Async):
            if term.free_vars:
                raise UnboundVariablesError(
                    f"async action {render_term(term.literal)} has free variables"
                )
            matched = False
            for binding in bindings:
                if binding.offer_action(agent.id, term, mode) is not None:
                    matched = True
            if not matched:
                raise NoMatchingEndpointError(render_term(term.literal))
            return True
        # Synchronous: first registered matching endpoint wins.
        reply_to = _Future()
        chosen = None
        for binding in bindings:
            exchange = binding.offer_action(agent.id, term, mode, reply_to)
            if exchange is not None:
                chosen = binding
                break
        if chosen is None:
            raise NoMatchingEndpointError(render_term(term.literal))
        remaining = [
            b for b in bindings[bindings.index(chosen) + 1 :] if b.would_match(agent.id, term)
        ]
        if remaining:
            logger.warning(
                "action %s matches %d further endpoints; first registered wins",
                render_term(term.literal),
                len(remaining),
            )
        try:
            reply = reply_to.result(mode.timeout_ms / 1000.0)
        except TimeoutError as exc:
            raise ActionTimeoutError(render_term(term.literal)) from exc
        return chosen.complete(reply, term)

"""Exchange, message and endpoint-URI model shared by all routes and endpoints."""

from __future__ import annotations

import copy
import itertools
import threading
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

__all__ = [
    "BodyValue",
    "RowSet",
    "Message",
    "Exchange",
    "ExchangePattern",
    "EndpointUri",
    "MalformedUriError",
    "new_exchange",
    "parse_uri",
]


class MalformedUriError(ValueError):
    pass


@dataclass
class RowSet:
    """An ordered set of rows; every row maps exactly the same column names to text."""

    columns: tuple[str, ...]
    rows: list[dict[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.columns = tuple(self.columns)
        expected = set(self.columns)
        for row in self.rows:
            if set(row) != expected:
                raise ValueError(f"row {row!r} does not match columns {self.columns}")

    def __len__(self) -> int:
        return len(self.rows)


# A message body (or header value) is plain data: text, a number, a list of
# bodies, a row set from a table query, or nothing.
BodyValue = Union[None, str, int, float, list, RowSet]


class ExchangePattern(Enum):
    IN_ONLY = "InOnly"
    IN_OUT = "InOut"

    @classmethod
    def parse(cls, text: str) -> "ExchangePattern":
        for p in cls:
            if p.value == text:
                return p
        raise ValueError(f"unknown exchange pattern {text!r}")


@dataclass
class Message:
    headers: dict[str, BodyValue] = field(default_factory=dict)
    body: BodyValue = None

    def copy(self) -> "Message":
        return Message(copy.deepcopy(self.headers), copy.deepcopy(self.body))


@dataclass
class Exchange:
    id: str
    pattern: ExchangePattern
    in_msg: Message
    out_msg: Optional[Message] = None

    def copy(self) -> "Exchange":
        """Deep copy for fan-out; the copy keeps the id of the original."""
        return Exchange(
            self.id,
            self.pattern,
            self.in_msg.copy(),
            self.out_msg.copy() if self.out_msg else None,
        )


# Exchange ids are a process-start token plus a monotonic counter, so they are
# stable, comparable text that can serve as correlation keys.  The token keeps
# ids from different processes apart; neither part ever contains ':' or '__'.
_RUN_TOKEN = "x" + uuid.uuid4().hex[:8]
_SEQ = itertools.count(1)
_SEQ_LOCK = threading.Lock()


def new_exchange(
    pattern: ExchangePattern = ExchangePattern.IN_ONLY,
    body: BodyValue = None,
    headers: Optional[dict[str, BodyValue]] = None,
) -> Exchange:
    with _SEQ_LOCK:
        n = next(_SEQ)
    return Exchange(f"{_RUN_TOKEN}-{n}", pattern, Message(dict(headers or {}), body))


# --- endpoint URIs -----------------------------------------------------------

_SCHEME_CHARS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789+.-"

# Only characters that would break the query syntax get percent-encoded.
_RESERVED = {"%", "&", "=", "?", "#", "\n", "\r"}


def _encode(text: str) -> str:
    out = []
    for ch in text:
        if ch in _RESERVED:
            out.append("%{:02X}".format(ord(ch)))
        else:
            out.append(ch)
    return "".join(out)


def _decode(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "%":
            if i + 3 > len(text):
                raise MalformedUriError(f"truncated percent escape in {text!r}")
            try:
                out.append(chr(int(text[i + 1 : i + 3], 16)))
            except ValueError as exc:
                raise MalformedUriError(f"bad percent escape in {text!r}") from exc
            i += 3
        else:
            out.append(ch)
            i += 1
    return "".join(out)


@dataclass(frozen=True)
class EndpointUri:
    """``scheme:path?k1=v1&k2=v2`` with an ordered, repeatable parameter map."""

    scheme: str
    path: str
    params: tuple[tuple[str, str], ...] = ()

    def get(self, name: str, default: Optional[str] = None) -> Optional[str]:
        for k, v in self.params:
            if k == name:
                return v
        return default

    def get_all(self, name: str) -> list[str]:
        return [v for k, v in self.params if k == name]

    def get_bool(self, name: str, default: bool = False) -> bool:
        v = self.get(name)
        if v is None:
            return default
        return v.lower() in ("true", "1", "yes")

    def render(self) -> str:
        text = f"{self.scheme}:{self.path}"
        if self.params:
            text += "?" + "&".join(f"{_encode(k)}={_encode(v)}" for k, v in self.params)
        return text

    def __str__(self) -> str:
        return self.render()


def parse_uri(text: str) -> EndpointUri:
    colon = text.find(":")
    if colon <= 0:
        raise MalformedUriError(f"no scheme in {text!r}")
    scheme = text[:colon]
    if any(ch not in _SCHEME_CHARS for ch in scheme) or not scheme[0].isalpha():
        raise MalformedUriError(f"bad scheme in {text!r}")
    rest = text[colon + 1 :]
    qmark = rest.find("?")
    if qmark < 0:
        return EndpointUri(scheme, rest)
    path = rest[:qmark]
    query = rest[qmark + 1 :]
    params: list[tuple[str, str]] = []
    if query:
        for part in query.split("&"):
            if not part:
                continue
            eq = part.find("=")
            if eq < 0:
                params.append((_decode(part), ""))
            else:
                params.append((_decode(part[:eq]), _decode(part[eq + 1 :])))
    return EndpointUri(scheme, path, tuple(params))

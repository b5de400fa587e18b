"""Canonical serialization for every signed or hashed document.

Format: UTF-8 JSON text, keys sorted lexicographically, no insignificant
whitespace, integers in decimal, byte strings as lowercase hex, enums by
value, sets as sorted arrays. Registered dataclasses carry an ``@type``
tag so distinct document kinds never share an encoding.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
import re
import types
import typing
from collections.abc import Mapping
from functools import lru_cache
from typing import Any, TypeVar

from .errors import SerializationError

T = TypeVar("T")

TYPE_TAG = "@type"
_HEX = re.compile(r"(?:[0-9a-f]{2})*")

_REGISTRY: dict[str, type] = {}


def payload_type(cls: type[T]) -> type[T]:
    """Class decorator registering a dataclass as a serializable document."""
    if not dataclasses.is_dataclass(cls):
        raise TypeError(f"{cls.__name__} is not a dataclass")
    name = cls.__name__
    if _REGISTRY.get(name, cls) is not cls:
        raise TypeError(f"duplicate payload type {name}")
    _REGISTRY[name] = cls
    return cls


def registered_types() -> dict[str, type]:
    return dict(_REGISTRY)


def to_plain(obj: Any) -> Any:
    """Lower ``obj`` to JSON-compatible values under the canonical rules."""
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, enum.Enum):
        return to_plain(obj.value)
    if isinstance(obj, int):
        return obj
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise SerializationError(f"non-finite number {obj!r}")
        return obj
    if isinstance(obj, (bytes, bytearray)):
        return bytes(obj).hex()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        cls = type(obj)
        if _REGISTRY.get(cls.__name__) is not cls:
            raise SerializationError(f"{cls.__name__} is not a registered payload type")
        out = {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        out[TYPE_TAG] = cls.__name__
        return out
    if isinstance(obj, (list, tuple)):
        return [to_plain(x) for x in obj]
    if isinstance(obj, (set, frozenset)):
        items = [to_plain(x) for x in obj]
        return sorted(items, key=_dumps)
    if isinstance(obj, Mapping):
        out = {}
        for k, v in obj.items():
            if isinstance(k, enum.Enum):
                k = k.value
            if not isinstance(k, str):
                raise SerializationError(f"mapping key {k!r} is not a string")
            out[k] = to_plain(v)
        return out
    raise SerializationError(f"cannot serialize {type(obj).__name__}")


def _dumps(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def canonical_bytes(document: Any) -> bytes:
    return _dumps(to_plain(document)).encode("utf-8")


def fields_bytes(cls: type, values: Mapping[str, Any], exclude: frozenset[str] | set[str] = frozenset()) -> bytes:
    """Canonical bytes of a ``cls`` document restricted to the non-excluded fields.

    Used for the signed body of records whose signatures live inside the record.
    """
    plain = {k: to_plain(v) for k, v in values.items() if k not in exclude}
    plain[TYPE_TAG] = cls.__name__
    return _dumps(plain).encode("utf-8")


def _reject_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in pairs:
        if k in out:
            raise SerializationError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _reject_constant(name: str) -> Any:
    raise SerializationError(f"non-finite number {name}")


def parse_json(data: bytes | str) -> Any:
    try:
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
        return json.loads(text, object_pairs_hook=_reject_duplicates, parse_constant=_reject_constant)
    except SerializationError:
        raise
    except (UnicodeDecodeError, ValueError) as exc:
        raise SerializationError(f"invalid document: {exc}") from None


@lru_cache(maxsize=None)
def _hints(cls: type) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def _is_union(hint: Any) -> bool:
    return typing.get_origin(hint) in (typing.Union, types.UnionType)


def from_plain(value: Any, hint: Any) -> Any:
    """Rebuild a typed value from its plain form, guided by a type hint."""
    if hint is Any:
        return value
    if hint is type(None):
        if value is not None:
            raise SerializationError("expected null")
        return None
    if _is_union(hint):
        args = typing.get_args(hint)
        if value is None:
            if type(None) in args:
                return None
            raise SerializationError("unexpected null")
        candidates = [a for a in args if a is not type(None)]
        if len(candidates) == 1:
            return from_plain(value, candidates[0])
        if isinstance(value, dict) and TYPE_TAG in value:
            for cand in candidates:
                if isinstance(cand, type) and cand.__name__ == value[TYPE_TAG]:
                    return from_plain(value, cand)
        raise SerializationError(f"value does not match any of {candidates}")
    origin = typing.get_origin(hint)
    if origin is not None:
        args = typing.get_args(hint)
        if origin is tuple:
            if not isinstance(value, list):
                raise SerializationError("expected array")
            if len(args) == 2 and args[1] is Ellipsis:
                return tuple(from_plain(v, args[0]) for v in value)
            if len(args) != len(value):
                raise SerializationError("tuple arity mismatch")
            return tuple(from_plain(v, a) for v, a in zip(value, args))
        if origin in (frozenset, set):
            if not isinstance(value, list):
                raise SerializationError("expected array")
            return frozenset(from_plain(v, args[0]) for v in value)
        if origin in (dict, Mapping, typing.Mapping):
            if not isinstance(value, dict):
                raise SerializationError("expected object")
            return {from_plain(k, args[0]): from_plain(v, args[1]) for k, v in value.items()}
        if origin is typing.Literal:
            if value not in args:
                raise SerializationError(f"{value!r} not in {args}")
            return value
        raise SerializationError(f"unsupported type hint {hint!r}")
    if hint is bytes:
        if not isinstance(value, str) or not _HEX.fullmatch(value):
            raise SerializationError("expected lowercase hex string")
        return bytes.fromhex(value)
    if hint is bool:
        if not isinstance(value, bool):
            raise SerializationError("expected boolean")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SerializationError("expected integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SerializationError("expected number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise SerializationError("expected string")
        return value
    if isinstance(hint, type) and issubclass(hint, enum.Enum):
        try:
            return hint(value)
        except ValueError:
            raise SerializationError(f"{value!r} is not a valid {hint.__name__}") from None
    if isinstance(hint, type) and dataclasses.is_dataclass(hint):
        return _build(value, hint)
    raise SerializationError(f"unsupported type hint {hint!r}")


def _build(value: Any, cls: type) -> Any:
    if not isinstance(value, dict):
        raise SerializationError(f"expected {cls.__name__} object")
    tag = value.get(TYPE_TAG)
    if tag != cls.__name__:
        raise SerializationError(f"expected {cls.__name__}, found {tag!r}")
    hints = _hints(cls)
    fields = dataclasses.fields(cls)
    known = {f.name for f in fields} | {TYPE_TAG}
    extra = set(value) - known
    if extra:
        raise SerializationError(f"unknown fields {sorted(extra)} for {cls.__name__}")
    kwargs = {}
    derived = {}
    for f in fields:
        if f.name not in value:
            if f.init and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise SerializationError(f"missing field {f.name!r} for {cls.__name__}")
            continue
        decoded = from_plain(value[f.name], hints[f.name])
        if f.init:
            kwargs[f.name] = decoded
        else:
            derived[f.name] = decoded
    try:
        obj = cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise SerializationError(f"invalid {cls.__name__}: {exc}") from None
    for name, decoded in derived.items():
        if getattr(obj, name) != decoded:
            raise SerializationError(f"derived field {name!r} of {cls.__name__} does not match")
    return obj


def load_document(data: bytes | str, cls: type[T] | None = None) -> T:
    """Decode a document leniently (any key order or spacing)."""
    plain = parse_json(data)
    if cls is None:
        if not isinstance(plain, dict) or plain.get(TYPE_TAG) not in _REGISTRY:
            raise SerializationError("document has no known @type")
        cls = _REGISTRY[plain[TYPE_TAG]]
    return from_plain(plain, cls)


def decode_canonical(data: bytes, cls: type[T] | None = None) -> T:
    """Decode ``data`` and insist it is already in canonical form."""
    obj = load_document(data, cls)
    if canonical_bytes(obj) != bytes(data):
        raise SerializationError("document is not in canonical form")
    return obj

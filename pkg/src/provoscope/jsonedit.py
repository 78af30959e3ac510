"""Byte-preserving replacement of one value inside a JSON document.

Unlike a parse/re-serialize cycle, only the targeted value's bytes change;
all surrounding formatting, ordering, and whitespace survive untouched.

Paths address a value with dot-separated segments:

    factors[2].risk          second element of "factors", then its "risk"
    factors[name=Runtime].risk   first element whose "name" equals Runtime
    per_row[id_=3].reason    selectors compare the decoded field as text

A selector directly at the root (``[name=Runtime].risk``) addresses into a
top-level array.
"""

from __future__ import annotations

import json
import re
from typing import Union

_WS = " \t\r\n"
_INT_RE = re.compile(r"-?\d+\Z")

PathOp = tuple  # ("key", name) | ("index", int) | ("match", field, text)


class JsonEditError(Exception):
    pass


class PathNotFound(JsonEditError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"no value at path {path!r}")


def parse_path(path: str) -> list[PathOp]:
    ops: list[PathOp] = []
    i, n = 0, len(path)
    while i < n:
        ch = path[i]
        if ch == ".":
            i += 1
            continue
        if ch == "[":
            end = path.find("]", i)
            if end < 0:
                raise JsonEditError(f"unclosed selector in path {path!r}")
            inner = path[i + 1 : end]
            if _INT_RE.match(inner):
                ops.append(("index", int(inner)))
            else:
                name, sep, value = inner.partition("=")
                if not sep:
                    raise JsonEditError(f"selector {inner!r} is neither an index nor field=value")
                ops.append(("match", name.strip(), value.strip()))
            i = end + 1
            continue
        end = i
        while end < n and path[end] not in ".[":
            end += 1
        ops.append(("key", path[i:end]))
        i = end
    if not ops:
        raise JsonEditError("empty path")
    return ops


def _skip_ws(text: str, i: int) -> int:
    while i < len(text) and text[i] in _WS:
        i += 1
    return i


def _string_end(text: str, i: int) -> int:
    # i at the opening quote
    i += 1
    while i < len(text):
        ch = text[i]
        if ch == "\\":
            i += 2
            continue
        if ch == '"':
            return i + 1
        i += 1
    raise JsonEditError("unterminated string")


def _value_end(text: str, i: int) -> int:
    """End index (exclusive) of the JSON value starting at i."""
    ch = text[i]
    if ch == '"':
        return _string_end(text, i)
    if ch in "{[":
        close = "}" if ch == "{" else "]"
        depth = 0
        while i < len(text):
            ch = text[i]
            if ch == '"':
                i = _string_end(text, i)
                continue
            if ch in "{[":
                depth += 1
            elif ch in "}]":
                depth -= 1
                if depth == 0:
                    if ch != close and depth == 0:
                        raise JsonEditError("mismatched brackets")
                    return i + 1
            i += 1
        raise JsonEditError("unterminated container")
    end = i
    while end < len(text) and text[end] not in ",}]" + _WS:
        end += 1
    if end == i:
        raise JsonEditError(f"no value at offset {i}")
    return end


def _object_items(text: str, i: int):
    """Yield (key, value_start) for the object starting at i."""
    i = _skip_ws(text, i)
    if i >= len(text) or text[i] != "{":
        return
    i = _skip_ws(text, i + 1)
    if i < len(text) and text[i] == "}":
        return
    while True:
        if i >= len(text) or text[i] != '"':
            raise JsonEditError("expected object key")
        key_end = _string_end(text, i)
        key = json.loads(text[i:key_end])
        i = _skip_ws(text, key_end)
        if i >= len(text) or text[i] != ":":
            raise JsonEditError("expected ':' after object key")
        i = _skip_ws(text, i + 1)
        yield key, i
        i = _skip_ws(text, _value_end(text, i))
        if i < len(text) and text[i] == ",":
            i = _skip_ws(text, i + 1)
            continue
        if i < len(text) and text[i] == "}":
            return
        raise JsonEditError("expected ',' or '}' in object")


def _array_items(text: str, i: int):
    """Yield value_start for each element of the array starting at i."""
    i = _skip_ws(text, i)
    if i >= len(text) or text[i] != "[":
        return
    i = _skip_ws(text, i + 1)
    if i < len(text) and text[i] == "]":
        return
    while True:
        yield i
        i = _skip_ws(text, _value_end(text, i))
        if i < len(text) and text[i] == ",":
            i = _skip_ws(text, i + 1)
            continue
        if i < len(text) and text[i] == "]":
            return
        raise JsonEditError("expected ',' or ']' in array")


def _field_as_text(text: str, obj_start: int, field_name: str) -> Union[str, None]:
    for key, value_start in _object_items(text, obj_start):
        if key == field_name:
            raw = text[value_start : _value_end(text, value_start)]
            try:
                return str(json.loads(raw))
            except json.JSONDecodeError:
                return None
    return None


def _navigate(text: str, i: int, ops: list[PathOp], path: str) -> tuple[int, int]:
    i = _skip_ws(text, i)
    if not ops:
        return i, _value_end(text, i)
    op = ops[0]
    if op[0] == "key":
        for key, value_start in _object_items(text, i):
            if key == op[1]:
                return _navigate(text, value_start, ops[1:], path)
        raise PathNotFound(path)
    if op[0] == "index":
        for index, value_start in enumerate(_array_items(text, i)):
            if index == op[1]:
                return _navigate(text, value_start, ops[1:], path)
        raise PathNotFound(path)
    # ("match", field, text)
    for value_start in _array_items(text, i):
        if text[_skip_ws(text, value_start)] != "{":
            continue
        if _field_as_text(text, value_start, op[1]) == op[2]:
            return _navigate(text, value_start, ops[1:], path)
    raise PathNotFound(path)


def replace_value(text: str, path: str, replacement) -> str:
    """Splice `replacement` (JSON-encoded) over the value addressed by path.

    The document must be valid JSON. Raises PathNotFound when the path does
    not resolve. Replacing a value with itself is the identity, which makes
    repeated application idempotent.
    """
    start, end = _navigate(text, _skip_ws(text, 0), parse_path(path), path)
    return text[:start] + json.dumps(replacement) + text[end:]

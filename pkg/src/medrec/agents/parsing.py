"""Lenient-but-bounded JSON extraction from model output."""

from __future__ import annotations

import json
import re
from typing import Any

from ..errors import UnparsableOutput

_FENCE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n?(.*?)```", re.DOTALL)
_TRAILING_COMMA = re.compile(r",(\s*[}\]])")


def _first_object(text: str) -> str | None:
    """Slice of the first balanced top-level ``{...}``, string-literal aware."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_str = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        start = text.find("{", start + 1)
    return None


def repair_json(text: str) -> str:
    """One repair pass: strip markdown fences, cut the first object, drop trailing commas."""
    m = _FENCE.search(text)
    if m:
        text = m.group(1)
    obj = _first_object(text)
    if obj is not None:
        text = obj
    return _TRAILING_COMMA.sub(r"\1", text).strip()


def parse_json_object(text: str) -> dict[str, Any]:
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        try:
            value = json.loads(repair_json(text))
        except json.JSONDecodeError as exc:
            raise UnparsableOutput(f"no JSON object after repair: {exc.msg}", text) from exc
    if not isinstance(value, dict):
        raise UnparsableOutput(f"expected a JSON object, got {type(value).__name__}", text)
    return value

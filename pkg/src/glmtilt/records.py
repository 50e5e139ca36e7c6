"""Deterministic JSON/CSV serialization used by all output files.

Every real number is rendered with 17 significant digits so that a float64
round-trips exactly and repeated runs produce byte-identical files.  The
JSON writer is intentionally hand-rolled: the stdlib encoder does not let
us control float formatting.
"""

from __future__ import annotations

import math
from dataclasses import asdict, is_dataclass
from typing import Any, Iterable


def format_real(x: float) -> str:
    """Render a float with 17 significant digits (lossless for float64)."""
    if isinstance(x, float) and not math.isfinite(x):
        # JSON has no literal for these; keep them greppable.
        return '"%s"' % repr(x)
    return format(float(x), ".17g")


def _render(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    closing_pad = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_real(obj)
    if isinstance(obj, str):
        out = obj.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
        return '"%s"' % out
    if is_dataclass(obj) and not isinstance(obj, type):
        return _render(asdict(obj), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            '%s"%s": %s' % (pad, k, _render(v, indent, level + 1)) for k, v in obj.items()
        )
        return "{\n%s\n%s}" % (items, closing_pad)
    if isinstance(obj, (list, tuple)):
        seq = list(obj)
        if not seq:
            return "[]"
        items = ",\n".join("%s%s" % (pad, _render(v, indent, level + 1)) for v in seq)
        return "[\n%s\n%s]" % (items, closing_pad)
    if hasattr(obj, "item"):  # numpy scalar
        return _render(obj.item(), indent, level)
    if hasattr(obj, "tolist"):  # numpy array
        return _render(obj.tolist(), indent, level)
    raise TypeError(f"cannot serialize {type(obj)!r}")


def dumps_json(obj: Any, indent: int = 2) -> str:
    """JSON text with snake_case keys preserved and 17-digit reals."""
    return _render(obj, indent, 0) + "\n"


def write_json(path, obj: Any) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_json(obj))


def _csv_cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g") if math.isfinite(v) else repr(v)
    if isinstance(v, int):
        return str(v)
    s = str(v)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def write_csv(path, header: Iterable[str], rows: Iterable[Iterable[Any]]) -> None:
    """Comma-separated, header row, LF line endings, UTF-8, 17-digit reals."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(v) for v in row) + "\n")

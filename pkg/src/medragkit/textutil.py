"""Small text and numeric helpers used across stages."""

from __future__ import annotations

import hashlib
import re
from decimal import ROUND_HALF_UP, Decimal


def word_count(text: str | None) -> int:
    """Whitespace-token count; None and blank strings count as zero."""
    if not text:
        return 0
    return len(text.split())


def round_half_up(value: float, places: int = 2) -> float:
    """Decimal round-half-up, e.g. 1.165 -> 1.17 at two places."""
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP))


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


_NUMBERED_ITEM = re.compile(r"(?:(?<=^)|(?<=[\s{;.:)\]]))(\d{1,2})\.(?!\d)")


def parse_numbered_list(text: str) -> list[str]:
    """Split a "{1.2.3....}"-style numbered reply into item strings.

    Items may run together without newlines ("...point one.2. point two"),
    so candidate markers are accepted only when their numbers form the
    consecutive run 1, 2, 3, ... from the start.  Returns [] when no
    leading "1." marker exists.
    """
    body = text.strip()
    if body.startswith("{") and body.endswith("}"):
        body = body[1:-1].strip()
    starts: list[tuple[int, int]] = []  # (char offset, item number)
    expected = 1
    for m in _NUMBERED_ITEM.finditer(body):
        if int(m.group(1)) == expected:
            starts.append((m.start(), expected))
            expected += 1
    if not starts:
        return []
    items: list[str] = []
    for i, (off, num) in enumerate(starts):
        end = starts[i + 1][0] if i + 1 < len(starts) else len(body)
        chunk = body[off:end]
        chunk = chunk[len(f"{num}.") :].strip()
        if chunk:
            items.append(chunk)
    return items

"""SI-prefixed number parsing for hand-written scenario files."""

from __future__ import annotations

import math
import re
from decimal import Decimal

# decimal exponents, so "240 uH" parses to exactly the float 240e-6
PREFIXES = {
    "f": -15, "p": -12, "n": -9, "u": -6, "µ": -6, "μ": -6,
    "m": -3, "k": 3, "K": 3, "M": 6, "G": 9,
}
UNITS = ("Hz", "H", "F", "V", "A", "s", "Ohm", "ohm", "Ω", "W")

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_PATTERN = re.compile(
    rf"^\s*({_NUMBER})\s*([fpnuµμmkKMG]?)\s*({'|'.join(UNITS)})?\s*$"
)
OPEN_WORDS = {"open", "inf", "infinity", "∞"}


def parse_si(value, allow_inf: bool = False) -> float:
    """Parse 31e-6, "31u", "31 uH" or "240~uH" to a float.

    ``allow_inf`` additionally accepts "open"/"inf" (open-circuit loads).
    """
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        out = float(value)
    elif isinstance(value, str):
        text = value.replace("~", " ").strip()
        if text.lower() in OPEN_WORDS:
            out = math.inf
        else:
            m = _PATTERN.match(text)
            if not m:
                raise ValueError(f"cannot parse {value!r} as an SI quantity")
            out = float(Decimal(m.group(1)).scaleb(PREFIXES.get(m.group(2), 0)))
    else:
        raise ValueError(f"expected a number or SI string, got {value!r}")
    if math.isnan(out):
        raise ValueError("NaN is not a valid quantity")
    if math.isinf(out) and not allow_inf:
        raise ValueError(f"infinite value {value!r} not allowed here")
    return out

"""Plain-text LP model rendering and a structural re-parser.

The writer emits CPLEX LP syntax so exported models load into off-the-shelf
solvers.  The parser is intentionally shallow: it recovers variable and row
counts for round-trip checks, not a full model.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field


@dataclass(frozen=True)
class LpRow:
    name: str
    terms: tuple[tuple[int, str], ...]   # (integer coefficient, variable)
    sense: str                           # "<=", ">=", or "="
    rhs: int

    def render(self) -> str:
        if self.sense not in ("<=", ">=", "="):
            raise ValueError(f"bad sense {self.sense!r}")
        parts: list[str] = []
        for coef, var in self.terms:
            if coef == 0:
                continue
            mag = abs(coef)
            body = var if mag == 1 else f"{mag} {var}"
            if not parts:
                parts.append(body if coef > 0 else f"- {body}")
            else:
                parts.append(f"{'+' if coef > 0 else '-'} {body}")
        expr = " ".join(parts) if parts else "0 " + self.terms[0][1] if self.terms else "0"
        return f" {self.name}: {expr} {self.sense} {self.rhs}"


def render_lp(objective: str, rows: list[LpRow], continuous: list[str],
              binaries: list[str], comments: list[str] | None = None) -> str:
    out: list[str] = []
    for c in comments or []:
        out.append(f"\\ {c}")
    out.append("Minimize")
    out.append(f" obj: {objective}")
    out.append("Subject To")
    for row in rows:
        out.append(row.render())
    if continuous:
        out.append("Bounds")
        for v in continuous:
            out.append(f" {v} >= 0")
    if binaries:
        out.append("Binaries")
        for i in range(0, len(binaries), 12):
            out.append(" " + " ".join(binaries[i : i + 12]))
    out.append("End")
    return "\n".join(out) + "\n"


@dataclass
class LpStats:
    objective: str = ""
    row_names: list[str] = field(default_factory=list)
    binaries: set[str] = field(default_factory=set)
    bounded: set[str] = field(default_factory=set)
    variables: set[str] = field(default_factory=set)

    @property
    def num_rows(self) -> int:
        return len(self.row_names)


_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_SECTIONS = {
    "minimize": "objective",
    "subject to": "rows",
    "bounds": "bounds",
    "binaries": "binaries",
    "end": "end",
}


def parse_lp(text: str) -> LpStats:
    """Recover names and counts from LP text produced by ``render_lp``."""
    stats = LpStats()
    section = None
    for raw in text.splitlines():
        line = raw.split("\\")[0].strip()
        if not line:
            continue
        low = line.lower()
        if low in _SECTIONS:
            section = _SECTIONS[low]
            continue
        if section == "objective":
            _, _, expr = line.partition(":")
            stats.objective = expr.strip()
            for tok in re.findall(r"[A-Za-z_][A-Za-z0-9_]*", expr):
                stats.variables.add(tok)
        elif section == "rows":
            name, colon, expr = line.partition(":")
            if not colon:
                raise ValueError(f"row without label: {line!r}")
            stats.row_names.append(name.strip())
            if not re.search(r"(<=|>=|=)", expr):
                raise ValueError(f"row without sense: {line!r}")
            lhs = re.split(r"<=|>=|=", expr)[0]
            for tok in re.findall(r"[A-Za-z_][A-Za-z0-9_]*", lhs):
                stats.variables.add(tok)
        elif section == "bounds":
            for tok in re.findall(r"[A-Za-z_][A-Za-z0-9_]*", line):
                if tok not in ("free",):
                    stats.bounded.add(tok)
                    stats.variables.add(tok)
        elif section == "binaries":
            for tok in line.split():
                if not _NAME.match(tok):
                    raise ValueError(f"bad binary name {tok!r}")
                stats.binaries.add(tok)
                stats.variables.add(tok)
    return stats

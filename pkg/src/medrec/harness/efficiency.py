"""Per-stage call, token and latency accounting averaged over cases."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from ..safety import STAGE_ORDER

FIELDS = ("calls", "in_tokens", "out_tokens", "seconds")


@dataclass
class EfficiencyReport:
    n_cases: int
    stages: dict[str, dict[str, float]] = field(default_factory=dict)  # per-case means

    @property
    def totals(self) -> dict[str, float]:
        """Column sums over stages, so stage rows always add up to the total row."""
        return {f: sum(row[f] for row in self.stages.values()) for f in FIELDS}

    def to_dict(self) -> dict[str, Any]:
        return {
            "nCases": self.n_cases,
            "stages": {s: {f: round(v, 10) for f, v in row.items()} for s, row in self.stages.items()},
            "totals": {f: round(v, 10) for f, v in self.totals.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    def table(self) -> str:
        header = "Stage\tCalls\tInTokens\tOutTokens\tSeconds"
        rows = [
            f"{s}\t{r['calls']:.2f}\t{r['in_tokens']:.1f}\t{r['out_tokens']:.1f}\t{r['seconds']:.3f}"
            for s, r in [*self.stages.items(), ("total", self.totals)]
        ]
        return "\n".join([header, *rows]) + "\n"


def efficiency_from_traces(traces: Iterable[Mapping[str, Any]]) -> EfficiencyReport:
    """Average the per-call records of each trace into one row per stage."""
    sums = {s: dict.fromkeys(FIELDS, 0.0) for s in STAGE_ORDER}
    n = 0
    for trace in traces:
        n += 1
        for call in trace.get("calls", []):
            row = sums.setdefault(call["stage"], dict.fromkeys(FIELDS, 0.0))
            row["calls"] += 1
            row["in_tokens"] += call["in_tokens"]
            row["out_tokens"] += call["out_tokens"]
            row["seconds"] += call["seconds"]
    stages = {s: {f: (v / n if n else 0.0) for f, v in row.items()} for s, row in sums.items()}
    return EfficiencyReport(n, stages)

"""Result tables: one row per (feature-set variant, model) and target, as text or JSON."""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .metrics import ClassificationReport, RegressionReport


class Variant(str, Enum):
    NC = "N-C"
    TEXT = "+T"
    TEXT_NEWS = "+T+Nw"

    @property
    def label(self) -> str:
        return {"N-C": "N-C", "+T": "N-C+T", "+T+Nw": "N-C+T+Nw"}[self.value]


@dataclass(frozen=True)
class EvaluationRow:
    target: str
    variant: Variant
    model: str
    report: ClassificationReport | RegressionReport
    board: str = ""
    split: str = "test"

    def as_dict(self) -> dict:
        return {"board": self.board, "target": self.target, "variant": Variant(self.variant).value,
                "model": self.model, "split": self.split,
                "kind": "classification" if isinstance(self.report, ClassificationReport) else "regression",
                "metrics": self.report.as_dict()}


def _report_from(kind: str, m: dict):
    if kind == "classification":
        return ClassificationReport(m["auc"], m["f1_0"], m["f1_1"], m["support_0"], m["support_1"], m["threshold"])
    return RegressionReport(m["mae"], m["mse"], m["n"])


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def emit_report(rows: Sequence[EvaluationRow], fmt: str = "text") -> str:
    if not rows:
        raise ValueError("nothing to report")
    if fmt in ("json", "machine-readable"):
        return json.dumps({"format_version": 1, "rows": [r.as_dict() for r in rows]}, indent=2, sort_keys=True)
    if fmt not in ("text", "text-table"):
        raise ValueError(f"unknown report format {fmt!r}")
    lines = []
    for kind, columns in (("classification", ("auc", "f1_0", "f1_1", "support_0", "support_1")),
                          ("regression", ("mae", "mse", "n"))):
        subset = [r for r in rows if r.as_dict()["kind"] == kind]
        if not subset:
            continue
        header = ["board", "target", "features", "model", *columns]
        body = [[r.board, r.target, Variant(r.variant).label, r.model,
                 *(_fmt(r.report.as_dict()[c]) for c in columns)] for r in subset]
        widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        lines.append("  ".join("-" * w for w in widths))
        lines.extend("  ".join(str(x).ljust(w) for x, w in zip(row, widths)) for row in body)
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def parse_report(text: str) -> list[EvaluationRow]:
    obj = json.loads(text)
    return [EvaluationRow(r["target"], Variant(r["variant"]), r["model"], _report_from(r["kind"], r["metrics"]),
                          r.get("board", ""), r.get("split", "test")) for r in obj["rows"]]


def leaderboard_rows(board, target: str, variant: Variant, reports: Iterable[tuple[str, object]],
                     board_name: str = "") -> list[EvaluationRow]:
    return [EvaluationRow(target, variant, name, rep, board_name) for name, rep in reports]


def format_gmp_tables(tables, errors: dict | None = None) -> str:
    lines = []
    for t in tables:
        d = t.as_dict()
        lines.append(f"{d['board']} / {d['period']}  (eligible with GMP: {d['eligible_with_gmp']}, "
                     f"table total: {d['table_total']}, alignment: {100 * d['alignment_rate']:.2f}%)")
        lines.append("          " + "  ".join(f"{c:>6}" for c in d["columns"]))
        for label, row in zip(d["rows"], d["counts"]):
            lines.append(f"  {label:<7} " + "  ".join(f"{v:>6}" for v in row))
        lines.append("")
    for name, rep in (errors or {}).items():
        lines.append(f"GMP-implied underpricing {name}: MAE={rep.mae:.3f} MSE={rep.mse:.3f} n={rep.n}")
    return "\n".join(lines).rstrip() + "\n"

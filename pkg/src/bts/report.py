"""Load persisted EvalReports and render result tables."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Optional

from .errors import MissingReport

SLICE_TITLES = {
    "LeftAnterior": "Left Anterior",
    "RightAnterior": "Right Anterior",
    "LeftPosterior": "Left Posterior",
    "RightPosterior": "Right Posterior",
    "LeftLateral": "Left Lateral",
    "RightLateral": "Right Lateral",
}
SCENARIO_ORDER = ["Standard", "BmiInjected", "PartialMetadata", "NoMetadata"]


def load_reports(paths: Iterable[str | Path]) -> list[dict]:
    """Reports from run directories, directories of runs, or report files."""
    reports = []
    for p in paths:
        p = Path(p)
        if p.is_file():
            reports.append(json.loads(p.read_text()))
            continue
        if not p.is_dir():
            raise MissingReport(f"{p} does not exist")
        found = sorted(p.glob("report.json")) + sorted(p.glob("scenario_*.json"))
        if not found:
            found = sorted(p.glob("*/report.json")) + sorted(p.glob("*/scenario_*.json"))
        if not found:
            raise MissingReport(f"no report.json under {p}")
        reports.extend(json.loads(f.read_text()) for f in found)
    # A scenario matrix re-emits the standard run; keep one copy.
    unique, seen = [], set()
    for r in reports:
        key = (r["label"], r["config_hash"])
        if key not in seen:
            seen.add(key)
            unique.append(r)
    return unique


def _pm(agg: dict) -> str:
    return f"{agg['mean']:6.2f} ± {agg['std']:.2f}"


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    fmt = lambda r: "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()  # noqa: E731
    rule = "-" * len(fmt(header))
    return "\n".join([fmt(header), rule, *(fmt(r) for r in rows)])


def _metric_row(r: dict) -> list[str]:
    a = r["aggregate"]
    return [_pm(a["sp"]), _pm(a["se"]), _pm(a["score"])]


def main_table(reports: list[dict]) -> str:
    rows = [
        [r["label"], "CLAP" if r["config"]["model"]["encoder"] == "clap" else "stub", *_metric_row(r)]
        for r in reports
        if r["scenario"] == "Standard" and r["subset"] == "All"
    ]
    return _table(["Method", "Backbone", "Sp (%)", "Se (%)", "Score (%)"], rows)


def _standard(reports, mode: str, subset: str = "All") -> Optional[dict]:
    for r in reports:
        if r["mode"] == mode and r["scenario"] == "Standard" and (mode == "AudioOnly" or r["subset"] == subset):
            return r
    return None


def slice_table(reports: list[dict]) -> str:
    bts, clap = _standard(reports, "Fused"), _standard(reports, "AudioOnly")
    if bts is None or clap is None:
        return "(metadata slices need both a BTS and an Audio-CLAP report)"
    rows = []
    for attr in ("Age", "Sex", "Loc", "Dev"):
        bts_rows = bts["slices"][attr]
        clap_rows = {row["value"]: row for row in clap["slices"][attr]}
        for row in bts_rows:
            name = SLICE_TITLES.get(row["value"], row["value"])
            other = clap_rows.get(row["value"], {})
            if row["absent"] or row["score"] is None or other.get("score") is None:
                rows.append([attr, name, f"{row['ratio']:.2f}", "-", "-", "-"])
                continue
            diff = row["score"] - other["score"]
            rows.append([attr, name, f"{row['ratio']:.2f}", f"{row['score']:.2f}", f"{other['score']:.2f}", f"{diff:.2f}"])
    return _table(["Type", "Class", "Ratio (%)", "BTS", "Audio-CLAP", "Difference"], rows)


def ablation_table(reports: list[dict]) -> str:
    rows = []
    fused = [r for r in reports if r["mode"] == "Fused" and r["scenario"] == "Standard"]
    fused.sort(key=lambda r: (r["subset"] != "All", r["subset"]))
    for r in fused:
        rows.append(["BTS", "(1)" if r["subset"] == "All" else "(2)", r["subset"], *_metric_row(r)])
    clap = _standard(reports, "AudioOnly")
    if clap is not None:
        rows.append(["Audio-CLAP", "(3)", "-", *_metric_row(clap)])
    return _table(["Method", "Setting", "Metadata", "Sp (%)", "Se (%)", "Score (%)"], rows)


def scenario_table(reports: list[dict]) -> str:
    by_scenario = {}
    for r in reports:
        if r["mode"] == "Fused" and r["subset"] == "All":
            by_scenario.setdefault(r["scenario"], r)
    rows = [[by_scenario[s]["label"], *_metric_row(by_scenario[s])] for s in SCENARIO_ORDER if s in by_scenario]
    clap = _standard(reports, "AudioOnly")
    if clap is not None:
        rows.append([clap["label"], *_metric_row(clap)])
    return _table(["Method", "Sp (%)", "Se (%)", "Score (%)"], rows)


def render_all(reports: list[dict]) -> str:
    blocks = [("Main results", main_table(reports))]
    if _standard(reports, "Fused") and _standard(reports, "AudioOnly"):
        blocks.append(("Score by metadata class", slice_table(reports)))
    if len({r["subset"] for r in reports if r["mode"] == "Fused"}) > 1:
        blocks.append(("Metadata ablation", ablation_table(reports)))
    if len({r["scenario"] for r in reports}) > 1:
        blocks.append(("Metadata scenarios", scenario_table(reports)))
    return "\n\n".join(f"== {title} ==\n{body}" for title, body in blocks)

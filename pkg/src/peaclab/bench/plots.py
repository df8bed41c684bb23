from __future__ import annotations

import csv
from pathlib import Path

from .records import read_metrics


def emit_plot_data(run_dirs, metric: str, output, stage: str | None = None, delimiter: str = ",") -> Path:
    """Wide table of one metric: a ``step`` column plus one column per run.

    Steps missing from a run are left blank (outer join). Values are written
    with ``repr`` so they parse back exactly. With ``stage`` only rows of
    that stage are used; otherwise a step seen twice in one run keeps the
    last row.
    """
    columns, series = [], []
    for run_dir in run_dirs:
        rows = [r for r in read_metrics(run_dir) if r["metric"] == metric and (stage is None or r["stage"] == stage)]
        name = rows[0]["run_id"] if rows else Path(run_dir).name
        columns.append(name)
        series.append({int(r["step"]): float(r["value"]) for r in rows})
    steps = sorted(set().union(*[s.keys() for s in series])) if series else []
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    with open(output, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(["step"] + columns)
        for step in steps:
            writer.writerow([step] + [repr(s[step]) if step in s else "" for s in series])
    return output


def read_plot_data(path, delimiter: str = ","):
    """Inverse of :func:`emit_plot_data`: ``(columns, {step: [value or None]})``."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader)
        table = {int(row[0]): [float(x) if x != "" else None for x in row[1:]] for row in reader}
    return header[1:], table

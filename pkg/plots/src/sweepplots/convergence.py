"""Render fraction-recovered-vs-sample-count curves from sweep CSVs.

The input is the experiment harness's aggregate CSV (columns: setting, N,
fraction_exact, fraction_eq_class, algorithm, ...).  Each metric column is
melted into long-form rows and one curve is drawn per group-by key.  No
statistics are computed here; every number plotted comes from the CSV.

Alongside the image, the plotted data series are written to
``<out>.series.csv`` in a deterministic order so that rendering runs can be
compared byte-for-byte (image encoders are not stable; the series file is).
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

METRIC_COLUMNS = ("fraction_exact", "fraction_eq_class")
REQUIRED_COLUMNS = ("setting", "N", "algorithm") + METRIC_COLUMNS


class SchemaError(ValueError):
    """The CSV does not look like a sweep output."""


@dataclass(frozen=True)
class SweepFrame:
    """Long-form sweep rows: (keys, N, metric name, fraction)."""

    columns: tuple[str, ...]
    rows: tuple[dict, ...]

    def curves(self, group_by: tuple[str, ...], metric: str):
        """Deterministically ordered {group key -> [(N, fraction), ...]}."""
        out: dict[tuple, list[tuple[int, float]]] = {}
        for row in self.rows:
            if row["metric"] != metric:
                continue
            key = tuple(str(row[col]) for col in group_by)
            out.setdefault(key, []).append((row["N"], row["fraction"]))
        for key in out:
            out[key].sort()
        return dict(sorted(out.items()))


def load_sweep(path: str | Path) -> SweepFrame:
    """Load and melt a sweep CSV; validates schema and value ranges."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError("empty CSV")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"missing columns: {missing}")
        keys = [c for c in reader.fieldnames if c not in METRIC_COLUMNS]
        rows = []
        for record in reader:
            for metric in METRIC_COLUMNS:
                fraction = float(record[metric])
                if not 0.0 <= fraction <= 1.0:
                    raise SchemaError(f"{metric}={fraction} outside [0, 1]")
                row = {c: record[c] for c in keys}
                row["N"] = int(record["N"])
                row["metric"] = metric
                row["fraction"] = fraction
                rows.append(row)
    frame = SweepFrame(columns=tuple(keys), rows=tuple(rows))
    _validate_monotone_n(frame)
    return frame


def _validate_monotone_n(frame: SweepFrame) -> None:
    seen: dict[tuple, set[int]] = {}
    for row in frame.rows:
        key = (row["setting"], row["algorithm"], row["metric"])
        bucket = seen.setdefault(key, set())
        if row["N"] in bucket:
            raise SchemaError(f"duplicate N={row['N']} within curve {key}")
        bucket.add(row["N"])


def plot_convergence(
    csv_path: str | Path,
    group_by: tuple[str, ...],
    metric: str,
    out_path: str | Path,
) -> Path:
    """One log-x curve per group; writes the image plus a series sidecar."""
    frame = load_sweep(csv_path)
    unknown = [c for c in group_by if c not in frame.columns]
    if unknown:
        raise SchemaError(f"group-by columns not in CSV: {unknown}")
    if metric not in METRIC_COLUMNS:
        raise SchemaError(f"unknown metric {metric!r}")
    curves = frame.curves(tuple(group_by), metric)
    if not curves:
        raise ValueError("selection is empty: nothing to plot")

    out_path = Path(out_path)
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for key, points in curves.items():
        ns = [p[0] for p in points]
        fractions = [p[1] for p in points]
        ax.plot(ns, fractions, marker="o", label=" / ".join(key))
    ax.set_xscale("log")
    ax.set_xlabel("number of samples")
    ax.set_ylabel(metric.replace("_", " "))
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)

    series_path = out_path.with_suffix(out_path.suffix + ".series.csv")
    with open(series_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series", "metric", "N", "fraction"])
        for key, points in curves.items():
            series = "|".join(key)
            for n, fraction in points:
                writer.writerow([series, metric, n, repr(fraction)])
    return out_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sweepplots")
    parser.add_argument("--csv", required=True)
    parser.add_argument(
        "--group-by",
        default="setting,algorithm",
        help="comma-separated CSV columns, one curve per distinct combination",
    )
    parser.add_argument("--metric", default="fraction_exact")
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        plot_convergence(
            args.csv,
            tuple(c.strip() for c in args.group_by.split(",") if c.strip()),
            args.metric,
            args.out,
        )
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

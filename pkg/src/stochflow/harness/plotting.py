"""Long-format plot data and matplotlib figures from reports."""

import csv
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PLOT_COLUMNS = ["series", "x", "y", "yerr", "oracle", "provenance"]


def plot_rows(report):
    """One long-format row per plotted point."""
    out = []
    kind = report.kind
    for r in report.rows:
        if kind == "moment-sweep":
            out.append({"series": f"k={r['k']} {r['estimator']}", "x": math.log2(r["N"]), "y": r["value"],
                        "yerr": r["stderr"], "oracle": r["oracle_value"], "provenance": r["provenance"]})
        elif kind == "drift-table":
            out.append({"series": f"p={r['p']}", "x": math.log2(r["N"]), "y": r["gap_over_sqrtN"],
                        "yerr": 0.0, "oracle": 0.0, "provenance": r["provenance"]})
        elif kind == "estimate-gamma":
            out.append({"series": r["model"], "x": float(len(out)), "y": r["gamma_ext_sq"], "yerr": r["stderr"],
                        "oracle": r.get("exact_value", float("nan")), "provenance": r.get("provenance", "quadrature")})
        elif kind == "diffchain-stats":
            out.append({"series": "pi_origin", "x": float(r["seed"]), "y": r["pi_origin"], "yerr": r["stderr"],
                        "oracle": r["pi_origin_exact"], "provenance": r["provenance"]})
    return out


def _float(v):
    return float(v)


def emit_plot_data(report, out_dir, stem=None):
    """Write <stem>.plot.csv and, when there is data, <stem>.png; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    stem = stem or report.kind
    rows = plot_rows(report)
    csv_path = os.path.join(out_dir, f"{stem}.plot.csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], str) else repr(float(r[c])) for c in PLOT_COLUMNS])
    paths = [csv_path]
    if not rows:
        return paths
    fig, ax = plt.subplots(figsize=(6, 4))
    series = {}
    for r in rows:
        series.setdefault(r["series"], []).append(r)
    for name, pts in series.items():
        xs = [p["x"] for p in pts]
        ys = [_float(p["y"]) for p in pts]
        es = [_float(p["yerr"]) for p in pts]
        ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=name)
        ors = [_float(p["oracle"]) for p in pts]
        if any(math.isfinite(o) for o in ors):
            ax.plot(xs, ors, linestyle="--", color="grey", linewidth=1)
    ax.set_xlabel("log2 N" if report.kind in ("moment-sweep", "drift-table") else "index")
    ax.set_ylabel(report.kind)
    ax.legend(fontsize=7)
    fig.tight_layout()
    png = os.path.join(out_dir, f"{stem}.png")
    fig.savefig(png, dpi=120)
    plt.close(fig)
    paths.append(png)
    return paths

"""Render figures from rfmatch report files.

Every figure is a pure view of the documented CSV/JSON report schemas: the
renderer plots and annotates what the files say and never recomputes a
statistic.  Output is vector (SVG by default).  Invoke as

    plot-reports <kind> --input FILE [--report report.json] --out fig.svg

with kinds: loss-curve, pred-scatter, error-ecdf, impedance-scatter,
tuned-ecdf, evals-ecdf, noise-bars.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

SUPPORTED_SCHEMA = 1
FIGURE_KINDS = (
    "loss-curve",
    "pred-scatter",
    "error-ecdf",
    "impedance-scatter",
    "tuned-ecdf",
    "evals-ecdf",
    "noise-bars",
)

plt.rcParams["svg.hashsalt"] = "plot-reports"


class SchemaError(Exception):
    """Input file does not match the documented report schema."""


@dataclass
class FigureSpec:
    kind: str
    input: str
    out: str
    report: str | None = None  # report.json for annotations, where applicable
    title: str = ""
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}")


def _read_csv(path: str, expected_columns: tuple[str, ...]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != expected_columns:
            raise SchemaError(
                f"{path}: expected columns {expected_columns}, got {reader.fieldnames}"
            )
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _read_report(path: str) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SUPPORTED_SCHEMA:
        raise SchemaError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    return doc


def _styled_axes(title: str, xlabel: str, ylabel: str):
    fig, ax = plt.subplots(figsize=(5.2, 3.6), constrained_layout=True)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    return fig, ax


def build_figure(spec: FigureSpec):
    """Build the matplotlib figure for a spec; returns (figure, annotations).

    `annotations` maps label -> the exact string drawn on the figure, so
    callers can verify annotated numbers against report fields.
    """
    builder = {
        "loss-curve": _loss_curve,
        "pred-scatter": _pred_scatter,
        "error-ecdf": _error_ecdf,
        "impedance-scatter": _impedance_scatter,
        "tuned-ecdf": _tuned_ecdf,
        "evals-ecdf": _evals_ecdf,
        "noise-bars": _noise_bars,
    }[spec.kind]
    return builder(spec)


def render(spec: FigureSpec) -> str:
    """Render a figure spec to its output image file (vector formats)."""
    fig, _ = build_figure(spec)
    fig.savefig(spec.out, metadata={"Date": None} if spec.out.endswith(".svg") else None)
    plt.close(fig)
    return spec.out


def _loss_curve(spec: FigureSpec):
    rows = _read_csv(spec.input, ("epoch", "train_mse", "val_mse"))
    epochs = [int(r["epoch"]) for r in rows]
    fig, ax = _styled_axes(spec.title or "Training and validation loss", "epoch", "MSE")
    ax.semilogy(epochs, [float(r["train_mse"]) for r in rows], label="train")
    ax.semilogy(epochs, [float(r["val_mse"]) for r in rows], label="validation")
    ax.legend()
    return fig, {}


def _pred_scatter(spec: FigureSpec):
    rows = _read_csv(spec.input, ("sample", "dimension", "truth", "predicted"))
    dims = sorted({r["dimension"] for r in rows})
    fig, axes = plt.subplots(2, 4, figsize=(11, 5.4), constrained_layout=True)
    for ax, dim in zip(axes.ravel(), dims):
        mine = [r for r in rows if r["dimension"] == dim]
        truth = [float(r["truth"]) for r in mine]
        pred = [float(r["predicted"]) for r in mine]
        ax.scatter(truth, pred, s=12, facecolors="none", edgecolors="tab:blue",
                   label="truth")
        ax.scatter(truth, pred, s=6, marker="x", color="tab:red", label="predicted")
        lo, hi = min(truth + pred), max(truth + pred)
        ax.plot([lo, hi], [lo, hi], lw=0.6, color="gray")
        ax.set_title(dim, fontsize=9)
        ax.grid(True, alpha=0.3)
    if spec.title:
        fig.suptitle(spec.title)
    return fig, {}


def _error_ecdf(spec: FigureSpec):
    rows = _read_csv(spec.input, ("dimension", "error", "fraction"))
    fig, ax = _styled_axes(spec.title or "Prediction error ECDF", "error", "cumulative fraction")
    for dim in sorted({r["dimension"] for r in rows}):
        mine = [r for r in rows if r["dimension"] == dim]
        ax.step([float(r["error"]) for r in mine], [float(r["fraction"]) for r in mine],
                where="post", label=dim, lw=1.0)
    ax.set_xscale("log")
    ax.legend(fontsize=7, ncols=2)
    return fig, {}


def _impedance_scatter(spec: FigureSpec):
    columns = ("id", "f_hz", "cp_star_f", "cs_star_f", "cp_now_f", "cs_now_f",
               "gin_re", "gin_im", "gl_re", "gl_im", "sigma")
    rows = _read_csv(spec.input, columns)
    r0 = float(spec.options.get("z0", 50.0))
    gl = np.array([complex(float(r["gl_re"]), float(r["gl_im"])) for r in rows])
    z = r0 * (1 + gl) / (1 - gl)  # coordinate transform, not a statistic
    fig, ax = _styled_axes(spec.title or "Mismatched load impedances",
                           "resistance (ohm)", "reactance (ohm)")
    ax.scatter(z.real, z.imag, s=6, alpha=0.5)
    ax.axvline(r0, color="gray", lw=0.6)
    ax.axhline(0.0, color="gray", lw=0.6)
    return fig, {}


def _tuned_ecdf(spec: FigureSpec):
    rows = _read_csv(spec.input, ("strategy", "value", "fraction"))
    annotations: dict[str, str] = {}
    compliance = {}
    threshold = None
    if spec.report:
        report = _read_report(spec.report)
        threshold = report.get("threshold")
        compliance = {s: agg["compliance"] for s, agg in report["strategies"].items()}
    fig, ax = _styled_axes(spec.title or "Tuned reflection magnitude ECDF",
                           "|gamma_in| after tuning", "cumulative fraction")
    for strategy in sorted({r["strategy"] for r in rows}):
        mine = [r for r in rows if r["strategy"] == strategy]
        label = strategy
        if strategy in compliance:
            # the annotated number is read from the report, never recomputed
            annotations[strategy] = f"{strategy}: compliance {compliance[strategy]!r}"
            label = annotations[strategy]
        ax.step([float(r["value"]) for r in mine], [float(r["fraction"]) for r in mine],
                where="post", label=label, lw=1.1)
    if threshold is not None:
        ax.axvline(threshold, color="black", ls="--", lw=0.8)
        annotations["threshold"] = f"threshold {threshold!r}"
        ax.text(threshold, 0.02, annotations["threshold"], rotation=90,
                fontsize=7, va="bottom", ha="right")
    ax.set_xlim(left=0)
    ax.legend(fontsize=7)
    return fig, annotations


def _evals_ecdf(spec: FigureSpec):
    rows = _read_csv(spec.input, ("strategy", "count", "fraction"))
    fig, ax = _styled_axes(spec.title or "Online inference count ECDF",
                           "surrogate evaluations per scenario", "cumulative fraction")
    for strategy in sorted({r["strategy"] for r in rows}):
        mine = [r for r in rows if r["strategy"] == strategy]
        ax.step([float(r["count"]) for r in mine], [float(r["fraction"]) for r in mine],
                where="post", label=strategy, lw=1.1)
    ax.set_xscale("log")
    ax.legend(fontsize=8)
    return fig, {}


def _noise_bars(spec: FigureSpec):
    rows = _read_csv(spec.input, ("sigma", "strategy", "compliance"))
    strategies = sorted({r["strategy"] for r in rows})
    sigmas = sorted({float(r["sigma"]) for r in rows})
    annotations: dict[str, str] = {}
    fig, ax = _styled_axes(spec.title or "Compliance under measurement noise",
                           "noise sigma", "compliance rate")
    width = 0.8 / len(strategies)
    for k, strategy in enumerate(strategies):
        heights = []
        for sigma in sigmas:
            match = [r for r in rows
                     if r["strategy"] == strategy and float(r["sigma"]) == sigma]
            if not match:
                raise SchemaError(f"missing ({sigma}, {strategy}) row in {spec.input}")
            heights.append(float(match[0]["compliance"]))
            annotations[f"{strategy}@{sigma!r}"] = match[0]["compliance"]
        xs = np.arange(len(sigmas)) + (k - (len(strategies) - 1) / 2) * width
        bars = ax.bar(xs, heights, width=width, label=strategy)
        ax.bar_label(bars, labels=[annotations[f"{strategy}@{s!r}"] for s in sigmas],
                     fontsize=6, rotation=90, padding=2)
    ax.set_xticks(np.arange(len(sigmas)), [f"{s:g}" for s in sigmas])
    ax.set_ylim(0, 1.15)
    ax.legend(fontsize=8)
    return fig, annotations


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plot-reports", description=__doc__)
    parser.add_argument("kind", choices=FIGURE_KINDS)
    parser.add_argument("--input", required=True, help="report CSV to plot")
    parser.add_argument("--report", default=None,
                        help="report.json carrying annotations (tuned-ecdf)")
    parser.add_argument("--out", required=True, help="output image path (.svg/.pdf)")
    parser.add_argument("--title", default="")
    parser.add_argument("--z0", type=float, default=50.0,
                        help="reference impedance for impedance-scatter")
    args = parser.parse_args(argv)
    spec = FigureSpec(kind=args.kind, input=args.input, out=args.out,
                      report=args.report, title=args.title,
                      options={"z0": args.z0})
    try:
        render(spec)
    except (SchemaError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

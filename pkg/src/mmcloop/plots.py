"""Deterministic SVG rendering of traces, loci, time series and spectra."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

KINDS = ("trace", "locus", "timeseries", "spectrum")


def _save(fig, path):
    # fixed hash salt and no date keep the file byte-identical between runs
    with matplotlib.rc_context({"svg.hashsalt": "mmcloop", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def emit_plot(data: dict, kind: str, path) -> Path:
    """Render ``data`` as an SVG.

    trace: keys f_hz, re, im. locus: f_hz, re, im. timeseries: t_s, value.
    spectrum: f_hz, magnitude.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {kind}")
    arrays = {k: np.asarray(v, float) for k, v in data.items() if k != "label"}
    if not arrays or any(len(v) == 0 for v in arrays.values()):
        raise ValueError("nothing to plot")
    path = Path(path)
    label = data.get("label", "")
    if kind == "trace":
        fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
        a1.plot(arrays["f_hz"], arrays["re"], lw=0.8)
        a1.set_ylabel("Re[D_L]")
        a2.plot(arrays["f_hz"], arrays["im"], lw=0.8, color="tab:red")
        a2.set_ylabel("Im[D_L]")
        a2.set_xlabel("frequency (Hz)")
        a1.set_title(label)
    elif kind == "locus":
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot(arrays["re"], arrays["im"], lw=0.8)
        ax.plot([-1.0], [0.0], "rx", ms=8, label="-1+0j")
        ax.set_xlabel("Re")
        ax.set_ylabel("Im")
        ax.legend(loc="best")
        ax.set_title(label)
    elif kind == "timeseries":
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot(arrays["t_s"], arrays["value"], lw=0.6)
        ax.set_xlabel("time (s)")
        ax.set_ylabel(label)
    else:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot(arrays["f_hz"], arrays["magnitude"], lw=0.8)
        ax.set_xlabel("frequency (Hz)")
        ax.set_ylabel("amplitude")
        ax.set_title(label)
    fig.tight_layout()
    _save(fig, path)
    return path


def read_csv_columns(path) -> dict:
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} holds no rows")
    out = {}
    for key in rows[0]:
        try:
            out[key] = np.array([float(r[key]) for r in rows])
        except ValueError:
            continue
    return out

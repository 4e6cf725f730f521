"""Command-line entry point: ``mmcloop <subcommand> [options]``."""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, apply_overrides, default_params, load_config, parse_override, to_dict
from .steady_state import SteadyStateError, solve_steady_state

EXIT_OK, EXIT_ANALYSIS, EXIT_USAGE = 0, 1, 2


def _g(x: float) -> str:
    return f"{x:.9g}"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_g(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    out_dir: str
    version: str = __version__
    timestamp: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat())
    files: list = field(default_factory=list)

    def add(self, path: Path):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.files.append({"path": path.name, "sha256": digest})

    def write(self) -> Path:
        path = Path(self.out_dir) / "manifest.json"
        path.write_text(json.dumps(self.__dict__, indent=2, default=str) + "\n")
        return path


class _Run:
    def __init__(self, args, params):
        self.args = args
        self.params = params
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(args.command, to_dict(params), str(self.out))
        self.manifest.config["overrides"] = list(args.set or [])

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        self.manifest.add(path)
        return path

    def plot(self, data, kind, name):
        from .plots import emit_plot

        path = emit_plot(data, kind, self.out / name)
        self.manifest.add(path)


def _params(args):
    p = load_config(args.config) if args.config else default_params()
    items = []
    if getattr(args, "mode", None):
        items.append(("ccc_mode", args.mode))
    items += [parse_override(s) for s in (args.set or [])]
    return apply_overrides(p, items) if items else p


def _floats(text: str) -> list[float]:
    if ":" in text:
        a, b, c = (float(x) for x in text.split(":"))
        return list(a + c * np.arange(int(np.floor((b - a) / c + 1e-9)) + 1))
    return [float(x) for x in text.split(",") if x]


# ---------------------------------------------------------------------------
# subcommands


def cmd_steady(run: _Run):
    ss = solve_steady_state(run.params)
    rows = []
    for end in ("re", "se"):
        for name, val in ss[end].table_row().items():
            rows.append([end, name, float(val.real), float(val.imag), float(abs(val)), float(np.degrees(np.angle(val)))])
    run.write("steady.csv", _csv(["end", "quantity", "re", "im", "mag", "angle_deg"], rows))
    print(f"steady state solved in {ss.iterations} iterations, residual {ss.residual:.3g}")


def _sweep(run: _Run):
    from .impedance import sweep

    a = run.args
    ss = solve_steady_state(run.params)
    return sweep(a.quantity, ss, run.params, a.end, a.f_start, a.f_stop, a.step)


def cmd_sweep(run: _Run):
    fr = _sweep(run)
    run.write("impedance.csv", fr.to_csv())
    print(f"{len(fr)} points, {len(fr.gaps)} gaps")


def cmd_criterion(run: _Run):
    from .criterion import locate_candidates, log_derivative

    tr = log_derivative(_sweep(run))
    run.write("trace.csv", tr.to_csv())
    wins = locate_candidates(tr)
    run.write("windows.csv", _csv(["f_lo", "f_hi", "kind", "im_extremum", "re_slope"],
                                  [[w.f_lo, w.f_hi, w.kind, w.im_extremum, w.re_slope] for w in wins]))
    if run.args.svg:
        run.plot({"f_hz": tr.f_hz, "re": tr.re, "im": tr.im, "label": tr.label}, "trace", "trace.svg")
    for w in wins:
        print(f"{w.kind:15s} {w.f_lo:10.3f} .. {w.f_hi:10.3f} Hz  Im {w.im_extremum:.4g}")


def cmd_identify(run: _Run):
    from .sensitivity import ScanOptions, analyze_point

    a = run.args
    opts = ScanOptions(a.quantity, a.f_start, a.f_stop, a.step, a.fine_step)
    reports, _ = analyze_point(run.params, a.end, opts)
    rows = [[r.mode.f, r.mode.alpha, r.mode.classification, r.mode.provenance,
             r.fit.residual if r.fit else ""] for r in reports]
    run.write("modes.csv", _csv(["f_hz", "alpha", "kind", "method", "residual"], rows))
    for r in reports:
        m = r.mode
        print(f"{m.classification:9s} f = {m.f:.4f} Hz  alpha = {m.alpha:.4g} 1/s  ({m.provenance})")
    if not reports:
        print("no candidate windows")


def cmd_nyquist(run: _Run):
    from .nyquist import LOOPS, eigenloci, terminal_gain

    a = run.args
    ss = solve_steady_state(run.params)
    loops = LOOPS if a.loop == "all" else (a.loop,)
    rows = []
    for loop in loops:
        loc = eigenloci(terminal_gain(ss, run.params, loop, a.f_start, a.f_stop, a.step))
        run.write(f"locus_{loop}.csv", loc.to_csv())
        if a.svg:
            run.plot({"f_hz": loc.f_hz, "re": loc.points.real, "im": loc.points.imag, "label": loop},
                     "locus", f"locus_{loop}.svg")
        rows.append([loop, loc.encirclements])
        print(f"{loop}: {loc.encirclements} encirclements of -1")
    run.write("encirclements.csv", _csv(["loop", "encirclements"], rows))


def _events(run: _Run):
    evs = [(float(e["t"]), e["path"], e["value"]) for e in run.params.extra.get("events", [])]
    for text in run.args.event or []:
        t, rest = text.split(":", 1)
        path, value = parse_override(rest)
        evs.append((float(t), path, value))
    return sorted(evs, key=lambda e: e[0])


def cmd_simulate(run: _Run):
    from .timesim import PROBES, remove_periodic, short_time_fft, simulate

    a = run.args
    probes = a.probe or list(PROBES)
    res = simulate(run.params, _events(run), a.duration, probes, a.dt, a.record_dt)
    for name, ts in res.items():
        run.write(f"ts_{name}.csv", ts.to_csv())
        if a.svg:
            run.plot({"t_s": ts.t, "value": ts.values, "label": name}, "timeseries", f"ts_{name}.svg")
        if a.fft_window:
            sp = short_time_fft(remove_periodic(ts, run.params.f1), a.fft_window)
            run.write(f"fft_{name}.csv", _csv(["f_hz", "magnitude"], zip(sp.f_hz, sp.magnitude)))
            print(f"{name}: dominant {sp.dominant:.2f} Hz")
        if ts.diverged_at is not None:
            print(f"{name}: diverged at {ts.diverged_at:.4f} s")


def cmd_scan(run: _Run):
    from .timesim import frequency_scan

    a = run.args
    f = _floats(a.f)
    z = np.atleast_1d(frequency_scan(run.params, f, a.quantity, a.amplitude, a.settle, a.measure, a.end, a.dt))
    run.write("scan.csv", _csv(["f_hz", "re_ohm", "im_ohm"], [[x, float(v.real), float(v.imag)] for x, v in zip(f, z)]))
    for x, v in zip(f, z):
        print(f"{x:10.3f} Hz  |Z| {abs(v):.5g} ohm  {np.degrees(np.angle(v)):8.2f} deg")


def cmd_sens(run: _Run):
    from .sensitivity import ScanOptions, sweep_parameter

    a = run.args
    opts = ScanOptions(a.quantity, a.f_start, a.f_stop, a.step, a.fine_step)
    rep = sweep_parameter(run.params, a.param, _floats(a.values), a.end, opts, refine=a.refine,
                          progress=lambda pt: print(f"  {pt.value:.6g}: max alpha {pt.max_alpha:.4g}", flush=True))
    run.write("sens.csv", rep.to_csv())
    run.write("boundaries.txt", rep.summary() + "\n")
    print(rep.summary())


def cmd_plot(run: _Run):
    from .plots import emit_plot, read_csv_columns

    a = run.args
    for kind in ("trace", "locus", "timeseries", "spectrum"):
        src = getattr(a, kind)
        if src:
            data = read_csv_columns(src)
            if kind == "timeseries":
                data = {"t_s": data["t_s"], "value": data["value"]}
            data["label"] = Path(src).stem
            target = Path(a.svg_out) if a.svg_out else run.out / (Path(src).stem + ".svg")
            emit_plot(data, kind, target)
            if target.parent == run.out:
                run.manifest.add(target)
            print(target)
            return
    raise ConfigError("plot needs one of --trace, --locus, --timeseries, --spectrum")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mmcloop", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, mode=True, end=True):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--set", action="append", metavar="PATH=VALUE", help="override a parameter (repeatable)")
        p.add_argument("--out", default="out", help="output directory (default ./out)")
        if mode:
            p.add_argument("--mode", choices=("ccsc", "fccc"))
        if end:
            p.add_argument("--end", choices=("re", "se"), default="re")

    def grid(p, start=-150.03, stop=800.0, step=0.5):
        p.add_argument("--quantity", choices=("inner-p", "inner-n", "ac-dm", "dc-cm"), default="inner-n")
        p.add_argument("--f-start", type=float, default=start)
        p.add_argument("--f-stop", type=float, default=stop)
        p.add_argument("--step", type=float, default=step)

    p = sub.add_parser("steady", help="periodic steady state (Fourier coefficients)")
    common(p, end=False)
    p = sub.add_parser("sweep", help="impedance frequency sweep")
    common(p)
    grid(p)
    p = sub.add_parser("criterion", help="log-derivative trace and candidate windows")
    common(p)
    grid(p)
    p.add_argument("--svg", action="store_true")
    p = sub.add_parser("identify", help="criterion plus mode identification")
    common(p)
    grid(p)
    p.add_argument("--fine-step", type=float, default=0.01)
    p = sub.add_parser("nyquist", help="terminal-loop eigenloci")
    common(p, end=False)
    p.add_argument("--loop", choices=("all", "ac-dm-re", "ac-dm-se", "dc-cm"), default="all")
    p.add_argument("--f-start", type=float, default=-2900.0)
    p.add_argument("--f-stop", type=float, default=3000.0)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--svg", action="store_true")
    p = sub.add_parser("simulate", help="time-domain simulation")
    common(p, end=False)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=1e-5)
    p.add_argument("--record-dt", type=float, default=1e-4)
    p.add_argument("--probe", action="append")
    p.add_argument("--event", action="append", metavar="T:PATH=VALUE")
    p.add_argument("--fft-window", type=float, default=0.0)
    p.add_argument("--svg", action="store_true")
    p = sub.add_parser("scan", help="simulated impedance scan")
    common(p)
    p.add_argument("--f", required=True, help="comma list or start:stop:step of f_p in Hz")
    p.add_argument("--quantity", choices=("inner-p", "inner-n", "ac-dm", "dc-cm"), default="inner-n")
    p.add_argument("--amplitude", type=float)
    p.add_argument("--settle", type=float, default=0.6)
    p.add_argument("--measure", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=1e-5)
    p = sub.add_parser("sens", help="parameter sweep of the criterion")
    common(p)
    grid(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma list or start:stop:step")
    p.add_argument("--fine-step", type=float, default=0.01)
    p.add_argument("--refine", action="store_true")
    p = sub.add_parser("plot", help="render a CSV as SVG")
    common(p, mode=False, end=False)
    for kind in ("trace", "locus", "timeseries", "spectrum"):
        p.add_argument(f"--{kind}")
    p.add_argument("--svg-out", help="target SVG path")
    return ap


COMMANDS = {
    "steady": cmd_steady, "sweep": cmd_sweep, "criterion": cmd_criterion, "identify": cmd_identify,
    "nyquist": cmd_nyquist, "simulate": cmd_simulate, "scan": cmd_scan, "sens": cmd_sens, "plot": cmd_plot,
}


def dispatch(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    threads = os.environ.get("MMC_MODES_THREADS")
    if threads:
        os.environ.setdefault("NUMBA_NUM_THREADS", threads)
    try:
        run = _Run(args, _params(args))
    except ConfigError as exc:
        print(f"mmcloop: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"mmcloop: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SteadyStateError, ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"mmcloop: analysis failed: {exc}", file=sys.stderr)
        run.manifest.write()
        return EXIT_ANALYSIS
    run.manifest.write()
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch())

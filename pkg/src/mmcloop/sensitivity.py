"""Parameter sweeps of the inner-loop criterion and stability bounds."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .config import SystemParams, get_path, to_dict
from .criterion import zero_extrema
from .impedance import evaluate
from .mode_id import CRITICAL_ALPHA, Mode, ModeReport, scan_modes
from .steady_state import SteadyStateError, solve_steady_state


@dataclass(frozen=True)
class ScanOptions:
    quantity: str = "inner-n"
    f_start: float = -150.03
    f_stop: float = 800.0
    step: float = 0.5
    fine_step: float = 0.01


@dataclass
class PointResult:
    value: float
    modes: list[Mode] = field(default_factory=list)
    extrema: list[tuple[float, float, float]] = field(default_factory=list)
    error: str = ""

    @property
    def max_alpha(self) -> float:
        """Largest identified growth rate; -inf when no zero was flagged."""
        a = [m.alpha for m in self.modes if m.classification != "critical"]
        if any(m.classification == "critical" for m in self.modes):
            a.append(0.0)
        return max(a) if a else -math.inf

    @property
    def unstable(self) -> bool:
        return self.max_alpha > CRITICAL_ALPHA


@dataclass
class SweepReport:
    parameter: str
    end: str
    points: list[PointResult]
    boundaries: list[tuple[float, float]] = field(default_factory=list)

    @property
    def values(self) -> list[float]:
        return [p.value for p in self.points]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["param_value", "f_hz", "alpha"])
        for pt in self.points:
            for m in pt.modes:
                w.writerow([f"{pt.value:.9g}", f"{m.f:.9g}", f"{m.alpha:.9g}"])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"{self.parameter} ({self.end}): {len(self.points)} points"]
        for pt in self.points:
            state = "error: " + pt.error if pt.error else ("unstable" if pt.unstable else "stable")
            lines.append(f"  {pt.value:.6g}: {state}, max alpha {pt.max_alpha:.4g}")
        for lo, hi in self.boundaries:
            lines.append(f"  boundary in [{lo:.6g}, {hi:.6g}]")
        return "\n".join(lines)


def analyze_point(params: SystemParams, end: str = "re", options: ScanOptions = ScanOptions()
                  ) -> tuple[list[ModeReport], list[tuple[float, float, float]]]:
    """Steady state, inner-loop sweep, criterion and identification at one operating point."""
    ss = solve_steady_state(params)
    fun = lambda f: evaluate(options.quantity, ss, params, end, f)
    trace, reports = scan_modes(fun, options.f_start, options.f_stop, options.step, options.fine_step,
                                label=options.quantity)
    return reports, zero_extrema(trace)


def _point(params: SystemParams, name: str, value: float, end: str, options: ScanOptions) -> PointResult:
    pt = PointResult(float(value))
    try:
        reports, extrema = analyze_point(params.with_overrides({name: float(value)}), end, options)
    except (SteadyStateError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        pt.error = str(exc) or type(exc).__name__
        return pt
    pt.modes = [r.mode for r in reports]
    pt.extrema = extrema
    return pt


def _brackets(points: list[PointResult]) -> list[tuple[int, int]]:
    ok = [i for i, p in enumerate(points) if not p.error]
    out = []
    for a, b in zip(ok, ok[1:]):
        if points[a].unstable != points[b].unstable:
            out.append((a, b))
    return out


def sweep_parameter(params: SystemParams, name: str, values, end: str = "re",
                    options: ScanOptions = ScanOptions(), refine: bool = False,
                    rel_width: float = 0.01, progress=None) -> SweepReport:
    """Run the full pipeline at every value of the parameter at path ``name``.

    Boundaries are the grid intervals where the stability verdict changes;
    with ``refine`` each is bisected down to ``rel_width`` of its midpoint.
    """
    get_path(to_dict(params), name)
    points = []
    for v in values:
        points.append(_point(params, name, v, end, options))
        if progress:
            progress(points[-1])
    report = SweepReport(name, end, points)
    for a, b in _brackets(points):
        lo, hi = points[a], points[b]
        if refine:
            while abs(hi.value - lo.value) > rel_width * abs(0.5 * (hi.value + lo.value)):
                mid = _point(params, name, 0.5 * (lo.value + hi.value), end, options)
                if mid.error:
                    break
                if mid.unstable == lo.unstable:
                    lo = mid
                else:
                    hi = mid
        report.boundaries.append((min(lo.value, hi.value), max(lo.value, hi.value)))
    return report


def forbidden_zone_check(report: SweepReport, im_bound: float) -> list[tuple[float, bool, str]]:
    """Per point: zero signatures must have Im extrema inside (0, im_bound]."""
    out = []
    for pt in report.points:
        if pt.error:
            out.append((pt.value, False, "error"))
            continue
        ims = [im for _, im, _ in pt.extrema]
        if any(im < 0 for im in ims):
            out.append((pt.value, False, "unstable"))
        elif any(im > im_bound for im in ims):
            out.append((pt.value, False, "insufficient margin"))
        else:
            out.append((pt.value, True, "ok"))
    return out

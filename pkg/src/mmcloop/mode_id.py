"""Turn candidate windows of the log-derivative trace into modes."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .criterion import CRITICAL_IM, CandidateWindow, ReImTrace

CRITICAL_ALPHA = 1.0 / CRITICAL_IM
ITER_CAP = 2000


class DegenerateEstimateError(ArithmeticError):
    pass


def classify(alpha: float, threshold: float = CRITICAL_ALPHA) -> str:
    if abs(alpha) <= threshold:
        return "critical"
    return "unstable" if alpha > 0 else "stable"


@dataclass(frozen=True)
class Mode:
    alpha: float
    f: float
    classification: str = ""
    provenance: str = "estimated"

    def __post_init__(self):
        if not self.classification:
            object.__setattr__(self, "classification", classify(self.alpha))

    @property
    def eigenvalue(self) -> complex:
        return complex(self.alpha, 2 * math.pi * self.f)

    def dc_frequency(self, f1: float) -> float:
        """Oscillation frequency seen on DC-side variables."""
        return self.f - f1


@dataclass(frozen=True)
class PairFit:
    zero: Mode
    pole: Mode | None
    residual: float
    iterations: int
    converged: bool
    method: str = ""


def _vertex(f3: np.ndarray, y3: np.ndarray) -> tuple[float, float]:
    """Vertex (x, y) of the parabola through three equally spaced points."""
    h = f3[1] - f3[0]
    y0, y1, y2 = y3
    den = y0 - 2 * y1 + y2
    if den == 0:
        return float(f3[1]), float(y1)
    d = 0.5 * (y0 - y2) / den
    d = float(np.clip(d, -1.0, 1.0))
    return float(f3[1] + d * h), float(y1 - 0.25 * (y0 - y2) * d)


def estimate_single_zero(trace: ReImTrace, window: CandidateWindow, refine: bool = True) -> Mode:
    """Frequency of the Im minimum and alpha = -1/Im there.

    With ``refine`` the minimum is located between samples: for an isolated
    zero 1/Im is exactly quadratic in w, so a parabola through 1/Im at the
    three samples around the minimum gives f_z and -alpha at its vertex.
    """
    lo, hi = window.f_lo, window.f_hi
    if window.kind != "single_zero" and np.isfinite(window.f_flag):
        h = trace.step if np.isfinite(trace.step) else 0.0
        lo, hi = window.f_flag - 2.5 * h, window.f_flag + 2.5 * h
    sel = np.flatnonzero((trace.f_hz >= lo) & (trace.f_hz <= hi) & np.isfinite(trace.im))
    if len(sel) == 0:
        raise DegenerateEstimateError("window holds no samples")
    i = sel[np.argmin(trace.im[sel])]
    im_min = trace.im[i]
    if im_min == 0:
        raise DegenerateEstimateError("degenerate estimate")
    f_z = float(trace.f_hz[i])
    alpha = -1.0 / im_min
    if refine and 0 < i < len(trace) - 1 and np.all(np.isfinite(trace.im[i - 1 : i + 2])):
        y = trace.im[i - 1 : i + 2]
        if np.all(y != 0):
            fv, rv = _vertex(trace.f_hz[i - 1 : i + 2], 1.0 / y)
            if rv != 0:
                f_z, alpha = fv, -rv
    if abs(alpha) > 1.0 / CRITICAL_ALPHA:
        raise DegenerateEstimateError("degenerate estimate")
    return Mode(float(alpha), f_z, provenance="estimated")


# ---------------------------------------------------------------------------
# zero-pole template


def template(x, w: np.ndarray, with_pole: bool = True) -> np.ndarray:
    """Log-derivative of (jw - lambda_z) / (jw - lambda_p); x = (w_z, a_z, w_p, a_p)."""
    wz, az = x[0], x[1]
    out = 1j / (1j * (w - wz) - az)
    if with_pole:
        wp, ap = x[2], x[3]
        out = out - 1j / (1j * (w - wp) - ap)
    return out


def _template_jac(x, w, with_pole=True):
    wz, az = x[0], x[1]
    dz = 1j * (w - wz) - az
    cols = [-1.0 / dz ** 2, 1j / dz ** 2]
    if with_pole:
        wp, ap = x[2], x[3]
        dp = 1j * (w - wp) - ap
        cols += [1.0 / dp ** 2, -1j / dp ** 2]
    return np.column_stack(cols)


def _samples(trace: ReImTrace):
    ok = np.isfinite(trace.re) & np.isfinite(trace.im)
    return 2 * math.pi * trace.f_hz[ok], trace.values[ok]


def pair_objective(x, samples: ReImTrace, with_pole: bool = True) -> float:
    """Sum of squared Re and Im mismatches between template and trace."""
    w, d = _samples(samples)
    r = template(np.asarray(x, float), w, with_pole) - d
    return float(np.sum(r.real ** 2 + r.imag ** 2))


def pair_gradient(x, samples: ReImTrace, with_pole: bool = True) -> np.ndarray:
    w, d = _samples(samples)
    x = np.asarray(x, float)
    r = template(x, w, with_pole) - d
    J = _template_jac(x, w, with_pole)
    return 2 * np.real(np.conj(r) @ J)


def window_samples(trace: ReImTrace, window: CandidateWindow) -> ReImTrace:
    sel = (trace.f_hz >= window.f_lo - 1e-9) & (trace.f_hz <= window.f_hi + 1e-9)
    return ReImTrace(trace.f_hz[sel], trace.re[sel], trace.im[sel], trace.label, trace.step)


def _initial(trace: ReImTrace, window: CandidateWindow, with_pole: bool):
    ests = []
    for fm in window.minima or (window.f_center,):
        h = trace.step if np.isfinite(trace.step) else 0.1
        sub = CandidateWindow(fm - 2.5 * h, fm + 2.5 * h, "single_zero", 0.0, 0.0, fm)
        try:
            ests.append(estimate_single_zero(trace, sub))
        except DegenerateEstimateError:
            continue
    if not ests:
        raise DegenerateEstimateError("no usable minimum in window")
    if not with_pole:
        m = ests[0]
        return np.array([2 * math.pi * m.f, m.alpha])
    if len(ests) < 2:
        m = ests[0]
        return np.array([2 * math.pi * m.f, m.alpha, 2 * math.pi * (m.f + 1.0), -abs(m.alpha)])
    # the dip nearest the flagged minimum is the zero; the other is a pole term
    ff = window.f_flag if np.isfinite(window.f_flag) else window.f_center
    ests.sort(key=lambda m: abs(m.f - ff))
    z, p = ests[0], ests[1]
    return np.array([2 * math.pi * z.f, z.alpha, 2 * math.pi * p.f, -p.alpha])


def fit_zero_pole_pair(trace: ReImTrace, window: CandidateWindow, init=None,
                       method: str = "both", with_pole: bool | None = None) -> PairFit:
    """Fit the zero(-pole) template to the trace samples inside the window."""
    if with_pole is None:
        with_pole = window.kind == "zero_pole_pair"
    data = window_samples(trace, window)
    if len(data) < (8 if with_pole else 4):
        raise ValueError("too few samples in window")
    if init is None:
        x0 = _initial(trace, window, with_pole)
    elif isinstance(init, (tuple, list)) and len(init) and isinstance(init[0], Mode):
        z = init[0]
        x0 = [2 * math.pi * z.f, z.alpha]
        if with_pole:
            pm = init[1]
            x0 += [2 * math.pi * pm.f, pm.alpha]
        x0 = np.array(x0)
    else:
        x0 = np.asarray(init, float)
    if with_pole and abs(x0[0] - x0[2]) < 1e-6 and abs(x0[1] - x0[3]) < 1e-6:
        raise DegenerateEstimateError("pole coincides with zero")
    fun = lambda x: pair_objective(x, data, with_pole)
    jac = lambda x: pair_gradient(x, data, with_pole)
    results = []
    if method in ("both", "nelder-mead"):
        r = minimize(fun, x0, method="Nelder-Mead",
                     options={"xatol": 1e-10, "fatol": 1e-30, "maxiter": ITER_CAP, "maxfev": 4 * ITER_CAP,
                              "adaptive": True})
        results.append(("nelder-mead", r))
    if method in ("both", "bfgs"):
        r = minimize(fun, x0, jac=jac, method="BFGS", options={"gtol": 1e-9, "maxiter": ITER_CAP})
        results.append(("bfgs", r))
    if not results:
        raise ValueError(f"unknown method {method}")
    name, best = min(results, key=lambda nr: nr[1].fun)
    x = best.x
    zero = Mode(float(x[1]), float(x[0] / (2 * math.pi)), provenance="optimized")
    pole = Mode(float(x[3]), float(x[2] / (2 * math.pi)), provenance="optimized") if with_pole else None
    converged = bool(best.success) or np.max(np.abs(jac(x))) < 1e-9
    return PairFit(zero, pole, float(best.fun), int(best.nit), converged, name)


def identify(trace: ReImTrace, windows, fine_trace_fn=None) -> list[tuple[CandidateWindow, Mode, PairFit | None]]:
    """Modes for every window: estimate for single zeros, fit for pairs."""
    out = []
    for w in windows:
        if w.kind == "critical":
            out.append((w, Mode(0.0, w.f_center, "critical", "estimated"), None))
            continue
        tr = fine_trace_fn(w) if fine_trace_fn else trace
        if w.kind == "single_zero":
            out.append((w, estimate_single_zero(tr, w), None))
        else:
            fit = fit_zero_pole_pair(tr, w)
            out.append((w, fit.zero, fit))
    return out


def modes_to_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["f_hz", "alpha", "kind", "method", "residual"])
    for w, m, fit in rows:
        wr.writerow([f"{m.f:.9g}", f"{m.alpha:.9g}", m.classification, m.provenance,
                     f"{fit.residual:.9g}" if fit else ""])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# coarse-to-fine pipeline


@dataclass(frozen=True)
class ModeReport:
    window: CandidateWindow
    mode: Mode
    fit: PairFit | None
    slope_ratio: float  # Re slope * alpha**2 on the fine trace, 1 for a clean isolated zero
    fine: ReImTrace


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    return lo + step * np.arange(int(math.floor((hi - lo) / step + 1e-9)) + 1)


def refine_window(fun, window: CandidateWindow, coarse_step: float, fine_step: float = 0.01,
                  pair_half_width: float = 10.0, pair_step: float = 0.1) -> ModeReport:
    """Re-sample ``fun`` around a coarse candidate and estimate or fit the mode there."""
    from .criterion import _slope, log_derivative_of

    if window.kind == "zero_pole_pair":
        lo, hi = window.f_center - pair_half_width, window.f_center + pair_half_width
        fine = log_derivative_of(fun, _grid(lo, hi, pair_step))
        fit = fit_zero_pole_pair(fine, CandidateWindow(lo, hi, "zero_pole_pair", window.im_extremum,
                                                       window.re_slope, window.f_center, window.minima,
                                                       window.f_flag))
        return ModeReport(window, fit.zero, fit, float("nan"), fine)
    half = max(1.0, 3 * coarse_step)
    f0 = window.f_flag if np.isfinite(window.f_flag) else window.f_center
    fine = log_derivative_of(fun, _grid(f0 - half, f0 + half, fine_step))
    ok = np.isfinite(fine.im)
    if not ok.any():
        raise DegenerateEstimateError("fine trace has no finite samples")
    i = int(np.flatnonzero(ok)[np.argmin(fine.im[ok])])
    sub = CandidateWindow(fine.f_hz[max(i - 2, 0)] - 1e-9, fine.f_hz[min(i + 2, len(fine) - 1)] + 1e-9,
                          "single_zero", float(fine.im[i]), 0.0, float(fine.f_hz[i]))
    mode = estimate_single_zero(fine, sub)
    ratio = _slope(fine.f_hz, fine.re, i, 1) * mode.alpha ** 2
    return ModeReport(window, mode, None, float(ratio), fine)


def scan_modes(fun, f_start: float, f_stop: float, step: float = 0.5, fine_step: float = 0.01,
               label: str = "") -> tuple[ReImTrace, list[ModeReport]]:
    """Coarse log-derivative trace of ``fun`` plus a refined report per candidate window."""
    from .criterion import locate_candidates, log_derivative
    from .impedance import FrequencyResponse

    f = _grid(f_start, f_stop, step)
    vals = np.full(len(f), np.nan, complex)
    for j, x in enumerate(f):
        try:
            vals[j] = fun(x)
        except (ArithmeticError, np.linalg.LinAlgError):
            continue
    trace = log_derivative(FrequencyResponse(f, vals, label))
    reports = []
    for w in locate_candidates(trace):
        if w.kind == "critical":
            m = Mode(0.0, w.f_center, "critical", "estimated")
            reports.append(ModeReport(w, m, None, float("nan"), trace))
            continue
        try:
            rep = refine_window(fun, w, step, fine_step)
        except (DegenerateEstimateError, ValueError):
            continue
        # neighbouring coarse flags often refine to the same zero
        if any(abs(r.mode.f - rep.mode.f) < 2 * fine_step and abs(r.mode.alpha - rep.mode.alpha) < 1e-3 * max(1.0, abs(rep.mode.alpha))
               for r in reports):
            continue
        reports.append(rep)
    return trace, reports

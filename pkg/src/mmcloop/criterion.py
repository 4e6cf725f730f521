"""Logarithmic-derivative stability criterion.

For a frequency response g(w) the log-derivative D(w) = g'(w) / g(w) is a
sum of one term per zero minus one term per pole. A zero at
lambda = alpha + j*w_z contributes j / (j(w - w_z) - alpha), whose
imaginary part dips to -1/alpha at w_z while the real part rises through
zero with slope 1/alpha**2. Right-half-plane zeros of a loop impedance are
the negative-damping modes of the closed loop, so a negative Im minimum
next to a rising Re marks one.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .impedance import FrequencyResponse

CRITICAL_IM = 1e3
PAIR_SPAN_HZ = 10.0
EXTREMUM_HALF_WIDTH = 2
SLOPE_HALF_WIDTH = 3


@dataclass(frozen=True)
class ReImTrace:
    f_hz: np.ndarray
    re: np.ndarray
    im: np.ndarray
    label: str = ""
    step: float = float("nan")
    gaps: tuple = ()

    def __post_init__(self):
        f = np.asarray(self.f_hz, dtype=float)
        if len(f) > 1 and np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        object.__setattr__(self, "f_hz", f)
        object.__setattr__(self, "re", np.asarray(self.re, dtype=float))
        object.__setattr__(self, "im", np.asarray(self.im, dtype=float))

    def __len__(self):
        return len(self.f_hz)

    @property
    def values(self) -> np.ndarray:
        return self.re + 1j * self.im

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["f_hz", "re", "im"])
        for f, r, i in zip(self.f_hz, self.re, self.im):
            w.writerow([f"{f:.9g}", f"{r:.9g}", f"{i:.9g}"])
        return buf.getvalue()


@dataclass(frozen=True)
class CandidateWindow:
    f_lo: float
    f_hi: float
    kind: str
    im_extremum: float
    re_slope: float
    f_center: float = float("nan")
    minima: tuple = field(default=())
    f_flag: float = float("nan")

    def __post_init__(self):
        if not self.f_lo < self.f_hi:
            raise ValueError("window needs f_lo < f_hi")
        if self.kind not in ("single_zero", "zero_pole_pair", "critical"):
            raise ValueError(f"unknown window kind {self.kind}")


def log_derivative(fr: FrequencyResponse) -> ReImTrace:
    """Central-difference d g / d w divided by g, w = 2 pi f."""
    f = fr.f_hz
    g = fr.values
    if len(f) < 3:
        raise ValueError("need at least 3 samples")
    steps = np.diff(f)
    h = float(steps.mean())
    if np.max(np.abs(steps - h)) > 1e-6 * max(h, 1e-12) + 1e-9:
        raise ValueError("log-derivative needs a uniform frequency step")
    dw = 2 * math.pi * h
    dg = np.empty_like(g)
    dg[1:-1] = (g[2:] - g[:-2]) / (2 * dw)
    dg[0] = (g[1] - g[0]) / dw
    dg[-1] = (g[-1] - g[-2]) / dw
    with np.errstate(divide="ignore", invalid="ignore"):
        d = dg / g
    bad = ~np.isfinite(d)
    d[bad] = complex(np.nan, np.nan)
    gaps = tuple(float(x) for x in f[bad])
    return ReImTrace(f, d.real, d.imag, fr.label, h, gaps)


def log_derivative_of(fun, f_hz, h_hz: float = 1e-3, label: str = "") -> ReImTrace:
    """Log-derivative of a callable response on an arbitrary uniform grid.

    ``fun`` maps a frequency in Hz to a complex value. Each sample uses a
    central difference with its own small step ``h_hz``, so the grid
    spacing (the sampling of the trace) and the difference step are
    independent.
    """
    f = np.asarray(f_hz, dtype=float)
    dw = 2 * math.pi * h_hz
    vals = np.full(len(f), complex(np.nan, np.nan))
    for j, x in enumerate(f):
        try:
            g0 = complex(fun(x))
            gp = complex(fun(x + h_hz))
            gm = complex(fun(x - h_hz))
        except (ArithmeticError, np.linalg.LinAlgError):
            continue
        if g0 != 0:
            vals[j] = (gp - gm) / (2 * dw) / g0
    bad = ~np.isfinite(vals)
    step = float(f[1] - f[0]) if len(f) > 1 else float("nan")
    return ReImTrace(f, vals.real, vals.imag, label, step, tuple(float(x) for x in f[bad]))


def _local_extrema(y: np.ndarray, half: int, sign: int) -> list[int]:
    """Indices of strict local minima (sign=+1) or maxima (sign=-1).

    Ties resolve toward the lower frequency.
    """
    z = sign * y
    out = []
    for i in range(len(z)):
        if not np.isfinite(z[i]):
            continue
        lo, hi = max(0, i - half), min(len(z), i + half + 1)
        if hi - lo < 2 * half + 1:
            continue
        left = z[lo:i]
        right = z[i + 1 : hi]
        if np.any(~np.isfinite(left)) or np.any(~np.isfinite(right)):
            continue
        if np.all(z[i] < left) and np.all(z[i] <= right):
            out.append(i)
    return out


def _slope(f: np.ndarray, y: np.ndarray, i: int, half: int) -> float:
    """Least-squares slope of y against w over i +- half samples."""
    lo, hi = max(0, i - half), min(len(f), i + half + 1)
    w = 2 * math.pi * f[lo:hi]
    yy = y[lo:hi]
    ok = np.isfinite(yy)
    if ok.sum() < 2:
        return float("nan")
    w, yy = w[ok], yy[ok]
    wc = w - w.mean()
    return float(np.sum(wc * (yy - yy.mean())) / np.sum(wc * wc))


def locate_candidates(trace: ReImTrace, critical_im: float = CRITICAL_IM,
                      pair_span_hz: float = PAIR_SPAN_HZ) -> list[CandidateWindow]:
    """Windows where an Im minimum coexists with a rising Re."""
    f, re, im = trace.f_hz, trace.re, trace.im
    if len(f) == 0:
        return []
    h = trace.step if np.isfinite(trace.step) else (f[1] - f[0] if len(f) > 1 else 1.0)
    minima = _local_extrema(im, EXTREMUM_HALF_WIDTH, +1)
    maxima = _local_extrema(im, EXTREMUM_HALF_WIDTH, -1)
    pad = SLOPE_HALF_WIDTH * h
    out: list[CandidateWindow] = []
    flagged = []
    rising = set()
    for i in minima:
        slope = _slope(f, re, i, SLOPE_HALF_WIDTH)
        if abs(im[i]) > critical_im:
            out.append(CandidateWindow(f[i] - pad, f[i] + pad, "critical", float(im[i]), slope, float(f[i]), (float(f[i]),), float(f[i])))
            continue
        if slope > 0:
            rising.add(i)
            if im[i] < 0:
                flagged.append((i, slope))
    used = set()
    for i, slope in flagged:
        if i in used:
            continue
        partner = None
        for j in minima:
            # the partner dip must be pole-dominated (falling Re)
            if j == i or j in used or j in rising or abs(f[j] - f[i]) > pair_span_hz:
                continue
            a, b = sorted((i, j))
            if any(a < k < b for k in maxima):
                if partner is None or abs(f[j] - f[i]) < abs(f[partner] - f[i]):
                    partner = j
        if partner is not None:
            a, b = sorted((i, partner))
            used.update((i, partner))
            out.append(CandidateWindow(f[a] - pad, f[b] + pad, "zero_pole_pair", float(im[i]), slope,
                                       float(0.5 * (f[a] + f[b])), (float(f[a]), float(f[b])), float(f[i])))
        else:
            used.add(i)
            out.append(CandidateWindow(f[i] - pad, f[i] + pad, "single_zero", float(im[i]), slope,
                                       float(f[i]), (float(f[i]),), float(f[i])))
    out.sort(key=lambda w: w.f_lo)
    return out



def zero_extrema(trace: ReImTrace) -> list[tuple[float, float, float]]:
    """(f, Im, Re slope) of every Im extremum where Re rises: zero signatures of either sign."""
    f, re, im = trace.f_hz, trace.re, trace.im
    out = []
    for sign in (+1, -1):
        for i in _local_extrema(im, EXTREMUM_HALF_WIDTH, sign):
            slope = _slope(f, re, i, SLOPE_HALF_WIDTH)
            if slope > 0:
                out.append((float(f[i]), float(im[i]), slope))
    out.sort()
    return out

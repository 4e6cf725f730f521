import math

import numpy as np
import pytest

from mmcloop.criterion import CandidateWindow, ReImTrace, locate_candidates, log_derivative_of
from mmcloop.mode_id import (
    DegenerateEstimateError,
    Mode,
    classify,
    estimate_single_zero,
    fit_zero_pole_pair,
    pair_gradient,
    pair_objective,
    scan_modes,
    template,
)


def zp(fz, az, fp=None, ap=None):
    def g(f):
        s = 2j * math.pi * f
        out = s - complex(az, 2 * math.pi * fz)
        if fp is not None:
            out = out / (s - complex(ap, 2 * math.pi * fp))
        return out
    return g


def trace_of(g, lo, hi, step):
    return log_derivative_of(g, np.arange(lo, hi + step / 2, step))


def test_classify():
    assert classify(1.0) == "unstable"
    assert classify(-1.0) == "stable"
    assert classify(1e-4) == "critical"
    assert Mode(0.5, 60.0).dc_frequency(50.0) == 10.0


def test_estimate_between_samples():
    tr = trace_of(zp(100.004, 0.3), 98, 102, 0.01)
    (w,) = locate_candidates(tr)
    m = estimate_single_zero(tr, w)
    assert m.f == pytest.approx(100.004, abs=1e-4)
    assert m.alpha == pytest.approx(0.3, rel=1e-3)


def test_estimate_empty_window():
    tr = trace_of(zp(10.0, 1.0), 9, 11, 0.1)
    with pytest.raises(DegenerateEstimateError):
        estimate_single_zero(tr, CandidateWindow(20.0, 21.0, "single_zero", -1.0, 1.0))


def test_template_is_log_derivative():
    x = np.array([2 * math.pi * 40, 0.7, 2 * math.pi * 43, -1.2])
    g = zp(40, 0.7, 43, -1.2)
    f = np.arange(35.0, 50.0, 0.5)
    tr = log_derivative_of(g, f, h_hz=1e-4)
    assert np.max(np.abs(template(x, 2 * math.pi * f) - tr.values)) < 1e-6


def test_gradient_matches_finite_differences():
    tr = trace_of(zp(40, 0.7, 43, -1.2), 30, 50, 0.1)
    x = np.array([2 * math.pi * 40.2, 0.6, 2 * math.pi * 42.7, -1.0])
    g = pair_gradient(x, tr)
    fd = np.empty(4)
    for j in range(4):
        h = 1e-6 * max(1.0, abs(x[j]))
        e = np.zeros(4)
        e[j] = h
        fd[j] = (pair_objective(x + e, tr) - pair_objective(x - e, tr)) / (2 * h)
    assert np.max(np.abs(g - fd)) / np.max(np.abs(g)) < 1e-5


def test_pair_fit_recovers_parameters():
    tr = trace_of(zp(60.0, 1.5, 61.0, -2.0), 50, 70, 0.1)
    (w,) = [w for w in locate_candidates(tr) if w.kind == "zero_pole_pair"]
    fit = fit_zero_pole_pair(tr, w)
    assert fit.zero.f == pytest.approx(60.0, rel=1e-3)
    assert fit.zero.alpha == pytest.approx(1.5, rel=1e-3)
    assert fit.pole.f == pytest.approx(61.0, rel=1e-3)
    assert fit.pole.alpha == pytest.approx(-2.0, rel=1e-3)


def test_coincident_initial_guess_rejected():
    tr = trace_of(zp(60.0, 1.5, 61.0, -2.0), 50, 70, 0.1)
    w = CandidateWindow(50.0, 70.0, "zero_pole_pair", -1.0, 1.0, 60.0)
    with pytest.raises(DegenerateEstimateError):
        fit_zero_pole_pair(tr, w, init=[1.0, 1.0, 1.0, 1.0])


def test_scan_modes_finds_planted_zero():
    g = zp(123.456, 0.8)
    _, reports = scan_modes(g, 100.03, 150.0, step=0.5)
    assert len(reports) == 1
    m = reports[0].mode
    assert m.f == pytest.approx(123.456, abs=0.01)
    assert m.alpha == pytest.approx(0.8, rel=0.01)
    assert reports[0].slope_ratio == pytest.approx(1.0, rel=0.05)

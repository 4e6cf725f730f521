import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmcloop.criterion import (
    CandidateWindow,
    ReImTrace,
    locate_candidates,
    log_derivative,
    log_derivative_of,
    zero_extrema,
)
from mmcloop.impedance import FrequencyResponse, sweep


def _key(wins):
    return [(w.kind, round(w.f_lo, 9), round(w.f_hi, 9), round(w.im_extremum, 6)) for w in wins]


def planted(f0, alpha, f):
    lam = complex(alpha, 2 * math.pi * f0)
    return 2j * math.pi * np.asarray(f) - lam


def test_analytic_zero_signature():
    f = np.arange(40.0, 60.0, 0.01)
    tr = log_derivative(FrequencyResponse(f, planted(50.0, 2.0, f)))
    i = int(np.argmin(tr.im))
    assert tr.f_hz[i] == pytest.approx(50.0, abs=0.01)
    assert tr.im[i] == pytest.approx(-1 / 2.0, rel=1e-3)
    wins = locate_candidates(tr)
    assert [w.kind for w in wins] == ["single_zero"]
    assert wins[0].re_slope == pytest.approx(1 / 4.0, rel=0.02)


def test_stable_zero_is_an_im_maximum():
    f = np.arange(40.0, 60.0, 0.01)
    tr = log_derivative(FrequencyResponse(f, planted(50.0, -2.0, f)))
    assert locate_candidates(tr) == []
    (fz, im, slope), = zero_extrema(tr)
    assert fz == pytest.approx(50.0, abs=0.01) and im == pytest.approx(0.5, rel=1e-3) and slope > 0


def test_pole_is_not_flagged():
    f = np.arange(40.0, 60.0, 0.01)
    tr = log_derivative(FrequencyResponse(f, 1 / planted(50.0, 2.0, f)))
    assert locate_candidates(tr) == []


def test_critical_window():
    f = np.arange(49.0, 51.0, 0.01)
    tr = log_derivative(FrequencyResponse(f, planted(50.0, 1e-5, f)))
    assert [w.kind for w in locate_candidates(tr)] == ["critical"]


def test_zero_pole_pair_window():
    f = np.arange(40.0, 70.0, 0.1)
    g = planted(52.0, 1.0, f) / planted(55.0, -1.0, f)
    wins = locate_candidates(log_derivative(FrequencyResponse(f, g)))
    assert [w.kind for w in wins] == ["zero_pole_pair"]
    assert wins[0].f_flag == pytest.approx(52.0, abs=0.1)


def test_gaps_become_nan():
    f = np.arange(0.0, 5.0, 1.0)
    g = np.array([1, 2, np.nan, 4, 5], complex)
    tr = log_derivative(FrequencyResponse(f, g))
    assert tr.gaps and not np.isfinite(tr.im[1:4]).any()


def test_nonuniform_grid_rejected():
    with pytest.raises(ValueError):
        log_derivative(FrequencyResponse([0.0, 1.0, 3.0], [1, 2, 3]))


def test_window_validation():
    with pytest.raises(ValueError):
        CandidateWindow(2.0, 1.0, "single_zero", -1.0, 1.0)
    with pytest.raises(ValueError):
        CandidateWindow(1.0, 2.0, "other", -1.0, 1.0)


def test_callable_trace_matches_sampled_trace():
    f = np.arange(45.0, 55.0, 0.01)
    a = log_derivative(FrequencyResponse(f, planted(50.0, 3.0, f)))
    b = log_derivative_of(lambda x: planted(50.0, 3.0, x), f)
    assert np.max(np.abs(a.values[1:-1] - b.values[1:-1])) < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(-math.pi, math.pi), st.floats(0.1, 5), st.floats(-300, 300))
def test_flat_gain_invariance(mag, ang, alpha, f0):
    f = np.arange(f0 - 5, f0 + 5, 0.05)
    g = planted(f0, alpha, f) / planted(f0 + 3.3, -1.0, f)
    a = log_derivative(FrequencyResponse(f, g))
    b = log_derivative(FrequencyResponse(f, mag * np.exp(1j * ang) * g))
    assert np.allclose(a.values, b.values, rtol=1e-9, atol=1e-12)
    assert _key(locate_candidates(a)) == _key(locate_candidates(b))


def test_scaling_factor_invariance_on_model():
    from mmcloop.config import default_params
    from mmcloop.steady_state import solve_steady_state

    p = default_params().with_overrides({"controllers.h_i2.Kp": 0.1})
    ss = solve_steady_state(p)
    ref = {q: sweep(q, ss, p, "re", -150.03, 400, 0.5) for q in ("inner-n", "ac-dm", "dc-cm")}
    wins = {q: locate_candidates(log_derivative(fr)) for q, fr in ref.items()}
    assert wins["inner-n"]
    for q, fr in ref.items():
        for k in (p.k_ac, p.k_dc, 1 / p.k_dc, 0.01):
            scaled = FrequencyResponse(fr.f_hz, fr.values * k)
            assert _key(locate_candidates(log_derivative(scaled))) == _key(wins[q])


def test_trace_csv():
    tr = ReImTrace([0.0, 1.0], [1.0, 2.0], [-1.0, 0.5])
    assert tr.to_csv().splitlines()[0] == "f_hz,re,im"

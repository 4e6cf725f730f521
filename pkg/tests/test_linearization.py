import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmcloop.linearization import control_sensitivities, pll_sensitivity
from mmcloop.config import evaluate_pi


def _mirror(A):
    return np.conj(A[::-1, ::-1])


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-400, 400), st.sampled_from(["re", "se"]))
def test_sensitivities_are_real_operators(ccsc, sigma, f, end):
    p, ss = ccsc
    s = complex(sigma, 2 * np.pi * f + 0.37)
    a = control_sensitivities(ss, p, end, s)
    b = control_sensitivities(ss, p, end, np.conj(s))
    for x, y in ((a.B_i, b.B_i), (a.B_v, b.B_v), (a.B_vdc, b.B_vdc), (a.B_vcap, b.B_vcap)):
        scale = max(1e-30, np.max(np.abs(x.entries)))
        assert np.max(np.abs(_mirror(x.entries) - y.entries)) <= 1e-10 * scale


def test_ccsc_has_no_capacitor_voltage_path(ccsc):
    p, ss = ccsc
    assert np.max(np.abs(control_sensitivities(ss, p, "re", 2j * np.pi * 17).B_vcap.entries)) == 0


def test_fccc_uses_capacitor_voltage(fccc):
    p, ss = fccc
    assert np.max(np.abs(control_sensitivities(ss, p, "re", 2j * np.pi * 17).B_vcap.entries)) > 0


def test_mode_mismatch_rejected(ccsc, fccc):
    with pytest.raises(ValueError):
        control_sensitivities(ccsc[1], fccc[0], "re", 1j)


def test_pll_closed_loop(ccsc):
    p, ss = ccsc
    s = 2j * np.pi * 5
    v1 = 2 * abs(ss["re"].v_v[1]) / p.V_bpk
    h = evaluate_pi(p.controllers.h_PLL, s)
    assert pll_sensitivity(ss, p, s, "re") == pytest.approx(h / (s + v1 * h))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmcloop.criterion import log_derivative_of
from mmcloop.impedance import (
    ImpedanceTable,
    TerminalNetwork,
    evaluate,
    frequency_grid,
    inner_loop_admittance_matrix,
    inner_loop_impedance,
    loop_determinant,
    refine_mode,
    sweep,
    terminal_loop_impedances,
)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-500, 500), st.sampled_from(["re", "se"]), st.sampled_from(["ccsc", "fccc"]))
def test_htm_realness(ccsc, fccc, sigma, f, end, mode):
    p, ss = ccsc if mode == "ccsc" else fccc
    s = complex(sigma, 2 * math.pi * f + 0.123)
    A = inner_loop_admittance_matrix(ss, p, end, s).entries
    B = inner_loop_admittance_matrix(ss, p, end, np.conj(s)).entries
    assert np.max(np.abs(np.conj(A[::-1, ::-1]) - B)) <= 1e-10 * np.max(np.abs(A))


def test_blocked_rows_are_empty(ccsc):
    p, ss = ccsc
    Y = inner_loop_admittance_matrix(ss, p, "re", 2j * math.pi * 13).entries
    n = p.n
    for k in (-3, 3):
        assert np.all(Y[n + k] == 0) and np.all(Y[:, n + k] == 0)


def test_quantities_agree_with_matrix(ccsc):
    p, ss = ccsc
    f_p = 37.3
    s = 2j * math.pi * (f_p - p.f1)
    zp, zn = inner_loop_impedance(ss, p, "re", s)
    zac, zdc = terminal_loop_impedances(ss, p, "re", s)
    assert evaluate("inner-n", ss, p, "re", f_p) == zn
    assert evaluate("inner-p", ss, p, "re", f_p) == zp
    assert evaluate("ac-dm", ss, p, "re", f_p) == zac
    raw = terminal_loop_impedances(ss, p, "re", s, scaled=False)
    assert zac == pytest.approx(p.k_ac * raw[0])
    assert zdc == pytest.approx(p.k_dc * raw[1])


def test_high_frequency_limit_is_arm_inductance(ccsc):
    # far above the control bandwidth the arm reactor dominates: Y ~ -1/(sL)
    p, ss = ccsc
    f_p = 20000.0
    z = evaluate("inner-n", ss, p, "re", f_p)
    w = 2 * math.pi * (f_p + p.f1)
    assert abs(z.imag) == pytest.approx(w * p.mmc["re"].L, rel=0.05)


def test_sweep_records_gaps(ccsc):
    p, ss = ccsc
    fr = sweep("inner-n", ss, p, "re", 40.0, 60.0, 0.5)
    assert 50.0 in fr.gaps
    assert np.isnan(fr.values[fr.f_hz == 50.0]).all()
    with pytest.raises(ValueError):
        sweep("bogus", ss, p, "re", 0, 1, 0.5)


def test_frequency_grid():
    f = frequency_grid(-1.0, 1.0, 0.5)
    assert f.tolist() == [-1.0, -0.5, 0.0, 0.5, 1.0]
    with pytest.raises(ValueError):
        frequency_grid(1.0, 0.0, 0.1)


def test_impedance_table():
    tab = ImpedanceTable.from_function(lambda s: 1 + s * 0.1, [-10.0, 0.0, 10.0])
    assert tab.is_real_symmetric()
    assert tab(2j * math.pi * 5) == pytest.approx(1 + 0.1 * 2j * math.pi * 5)
    with pytest.raises(ValueError):
        tab(2j * math.pi * 20)


def test_table_network_matches_function(ccsc):
    p, ss = ccsc
    zg = p.grid["re"].impedance
    f = np.arange(-400.0, 600.0, 0.25)
    tab = ImpedanceTable.from_function(zg, f)
    net = TerminalNetwork.from_params(p).replace(Z_g={"re": tab})
    a = evaluate("inner-n", ss, p, "re", 77.0)
    b = evaluate("inner-n", ss, p, "re", 77.0, net=net)
    assert b == pytest.approx(a, rel=1e-9)


def test_refined_root_sits_at_log_derivative_minimum():
    from mmcloop.config import default_params
    from mmcloop.steady_state import solve_steady_state

    p = default_params(n=6).with_overrides({"controllers.h_i2.Kp": 0.1})
    ss = solve_steady_state(p)
    s0 = complex(20.0, 2 * math.pi * (74.6 - p.f1))
    lam = refine_mode(ss, p, "re", s0)
    assert abs(np.exp(loop_determinant(ss, p, "re", lam))) < 1e-6 * abs(np.exp(loop_determinant(ss, p, "re", s0)))
    f_root = lam.imag / (2 * math.pi) + p.f1
    tr = log_derivative_of(lambda x: evaluate("inner-n", ss, p, "re", x), np.arange(f_root - 1, f_root + 1, 0.01))
    i = int(np.nanargmin(tr.im))
    assert tr.f_hz[i] == pytest.approx(f_root, abs=0.05)
    assert -1 / tr.im[i] == pytest.approx(lam.real, rel=0.05)

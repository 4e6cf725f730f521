import time

import numpy as np
import pytest

from mmcloop.config import default_params
from mmcloop.steady_state import (
    SteadyStateError,
    jacobian,
    reconstruct,
    residuals,
    solve_steady_state,
    unknowns_of,
)


def test_converges_fast(ccsc):
    p, _ = ccsc
    t0 = time.perf_counter()
    ss = solve_steady_state(p)
    assert time.perf_counter() - t0 < 1.0
    assert ss.residual < 1e-9


def test_structural_zeros(ccsc, fccc):
    for end in ("re", "se"):
        assert ccsc[1][end].i[2] == 0
        assert fccc[1][end].v[2] == 0


def test_vectors_are_real_signals(ccsc):
    for end in ("re", "se"):
        for name in ("m", "i", "v", "v_w", "v_v", "i_g"):
            assert getattr(ccsc[1][end], name).is_conjugate_symmetric(1e-12)


def test_pcc_reference(ccsc):
    for end in ("re", "se"):
        v1 = ccsc[1][end].v_v[1]
        assert abs(v1.imag) < 1e-6 * abs(v1) and v1.real > 0


def test_dc_current_balance(ccsc):
    _, ss = ccsc
    # the two converters share the DC bus: equal and opposite arm DC currents
    assert ss["re"].i[0] == pytest.approx(-ss["se"].i[0], rel=1e-9)


def test_jacobian_matches_finite_differences(ccsc):
    p, ss = ccsc
    x = unknowns_of(ss) * (1 + 1e-3 * np.cos(np.arange(len(unknowns_of(ss)))))
    J = jacobian(x, p)
    Jfd = np.empty_like(J)
    for j in range(len(x)):
        h = 1e-6 * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        Jfd[:, j] = (residuals(x + e, p) - residuals(x - e, p)) / (2 * h)
    assert np.max(np.abs(J - Jfd)) / np.max(np.abs(J)) < 1e-5


def test_reconstruct_matches_coefficients(ccsc):
    p, ss = ccsc
    t = np.linspace(0, 0.02, 50, endpoint=False)
    wave = reconstruct(ss, p, "re", t)["i"]
    assert np.mean(wave) == pytest.approx(ss["re"].i[0].real, rel=1e-9)


def test_nonconvergence_reported():
    with pytest.raises(SteadyStateError):
        solve_steady_state(default_params(), max_iter=0)

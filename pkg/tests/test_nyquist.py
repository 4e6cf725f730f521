import math

import numpy as np
import pytest

from mmcloop.impedance import FrequencyResponse
from mmcloop.nyquist import (
    LOOPS,
    eigenloci,
    open_loop_gain,
    terminal_gain,
    terminal_partition,
    winding_number,
)


def circle(center, radius, turns=1, n=400):
    th = np.linspace(0, 2 * math.pi * turns, n * abs(turns) + 1)
    return center + radius * np.exp(1j * np.sign(turns) * np.abs(th))


def test_winding_trivial_cases():
    assert winding_number(circle(-1, 0.5)) == 1
    assert winding_number(circle(-1, 0.5, -1)) == -1
    assert winding_number(circle(-1, 0.5, 2)) == 2
    assert winding_number(circle(3, 0.5)) == 0
    assert winding_number(np.array([0.0 + 0j])) == 0
    assert winding_number(np.array([np.nan, 1.0, np.nan])) == 0


def test_open_loop_gain_gaps():
    f = np.array([0.0, 1.0, 2.0])
    g = open_loop_gain(FrequencyResponse(f, [1, 2, 3]), FrequencyResponse(f, [1, 0, 2]))
    assert g.gaps == (1.0,)
    assert g.values[2] == 1.5
    with pytest.raises(ValueError):
        open_loop_gain(FrequencyResponse(f, [1, 2, 3]), FrequencyResponse(f[:2], [1, 2]))


def test_eigenloci_closes_path():
    pts = circle(-1, 0.3)[:-1]  # open path, closed by eigenloci
    loc = eigenloci(FrequencyResponse(np.linspace(-1, 1, len(pts)), pts))
    assert loc.encirclements == 1
    assert loc.to_csv().splitlines()[0] == "f_hz,re,im"


def test_dc_partition_matches_admittances(ccsc):
    from mmcloop.impedance import dc_terminal_admittance

    p, ss = ccsc
    src, load = terminal_partition(ss, p, "dc-cm", 87.3)
    s = 2j * math.pi * (87.3 - p.f1)
    assert src == pytest.approx(1 / dc_terminal_admittance(ss, p, "se", s))
    assert load == pytest.approx(1 / dc_terminal_admittance(ss, p, "re", s))
    with pytest.raises(ValueError):
        terminal_partition(ss, p, "nope", 10.0)


@pytest.mark.parametrize("loop", LOOPS)
def test_base_case_terminal_loops_do_not_encircle(ccsc, loop):
    p, ss = ccsc
    loc = eigenloci(terminal_gain(ss, p, loop, -1000, 1000, 2.0))
    assert loc.encirclements == 0

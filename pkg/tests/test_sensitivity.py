import pytest

from mmcloop.config import ConfigError, default_params
from mmcloop.mode_id import Mode
from mmcloop.sensitivity import (
    PointResult,
    ScanOptions,
    SweepReport,
    forbidden_zone_check,
    sweep_parameter,
)

FAST = ScanOptions("inner-n", 60.03, 90.0, 0.5, 0.01)


def test_point_verdicts():
    assert not PointResult(1.0).unstable
    assert PointResult(1.0, [Mode(0.5, 70.0)]).unstable
    assert not PointResult(1.0, [Mode(-0.5, 70.0)]).unstable


def test_forbidden_zone_examples():
    rep = SweepReport("x", "re", [
        PointResult(1.0, extrema=[(70.0, 0.5, 1.0)]),
        PointResult(2.0, extrema=[(70.0, -0.5, 1.0)]),
        PointResult(3.0, extrema=[(70.0, 5.0, 1.0)]),
        PointResult(4.0, error="boom"),
    ])
    verdicts = forbidden_zone_check(rep, im_bound=1.0)
    assert [v[1:] for v in verdicts] == [(True, "ok"), (False, "unstable"), (False, "insufficient margin"),
                                         (False, "error")]


def test_unknown_parameter():
    with pytest.raises(ConfigError):
        sweep_parameter(default_params(), "controllers.h_x.Kp", [1.0])


def test_low_gain_boundary_is_bracketed():
    rep = sweep_parameter(default_params(), "controllers.h_i2.Kp", [0.1, 0.8], options=FAST)
    assert [p.unstable for p in rep.points] == [True, False]
    assert rep.boundaries == [(0.1, 0.8)]
    assert rep.points[0].modes[0].f == pytest.approx(74.6, abs=0.5)
    assert "boundary in" in rep.summary()
    assert rep.to_csv().splitlines()[0] == "param_value,f_hz,alpha"


def test_refined_boundary_is_narrow():
    rep = sweep_parameter(default_params(), "controllers.h_i2.Kp", [0.1, 0.8], options=FAST, refine=True,
                          rel_width=0.1)
    lo, hi = rep.boundaries[0]
    assert hi - lo <= 0.1 * (hi + lo) / 2 + 1e-12
    assert 0.1 <= lo < hi <= 0.8

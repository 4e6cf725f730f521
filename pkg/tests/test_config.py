import json

import pytest

from mmcloop.config import (
    ConfigError,
    PiParams,
    apply_overrides,
    default_params,
    evaluate_pi,
    from_dict,
    load_config,
    parse_override,
    to_dict,
)


def test_defaults_round_trip():
    p = default_params()
    assert from_dict(to_dict(p)) == p


def test_derived_quantities():
    p = default_params()
    assert p.w1 == pytest.approx(2 * 3.141592653589793 * 50)
    assert p.k_ac == pytest.approx(1 / 3)
    assert p.k_dc == pytest.approx(p.a / 2)


def test_override_paths():
    p = apply_overrides(default_params(), ["controllers.h_i2.Kp=2.2", ("ccc_mode", "fccc")])
    assert p.controllers.h_i2.Kp == 2.2
    assert p.ccc_mode == "fccc"
    with pytest.raises(ConfigError):
        apply_overrides(default_params(), ["controllers.h_i9.Kp=1"])


def test_parse_override():
    assert parse_override("a.b=1.5") == ("a.b", 1.5)
    assert parse_override("ccc_mode=fccc") == ("ccc_mode", "fccc")
    with pytest.raises(ConfigError):
        parse_override("novalue")


@pytest.mark.parametrize("path,value", [
    ("mmc_re.L", 0.0), ("mmc_se.C_sm", -1e-3), ("base.f_1", 0.0), ("truncation_n", 1),
    ("ccc_mode", "other"), ("delays.T_d_re", -1e-6),
])
def test_invariants_rejected(path, value):
    with pytest.raises(ConfigError):
        apply_overrides(default_params(), [(path, value)])


def test_pi_evaluation():
    pi = PiParams(2.0, 0.5)
    s = 3j
    assert evaluate_pi(pi, s) == pytest.approx(2.0 + 1 / (0.5 * s))
    with pytest.raises(ConfigError):
        evaluate_pi(pi, 0)


def test_load_config_keeps_events(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"ccc_mode": "fccc", "events": [{"t": 0.1, "path": "x", "value": 1}]}))
    p = load_config(path)
    assert p.ccc_mode == "fccc"
    assert p.extra["events"][0]["t"] == 0.1

import numpy as np
import pytest

from mmcloop.plots import KINDS, emit_plot, read_csv_columns


def data_for(kind):
    x = np.linspace(0, 1, 50)
    if kind == "trace":
        return {"f_hz": x, "re": np.sin(x), "im": np.cos(x), "label": "t"}
    if kind == "locus":
        return {"f_hz": x, "re": np.cos(6 * x), "im": np.sin(6 * x), "label": "l"}
    if kind == "timeseries":
        return {"t_s": x, "value": np.sin(9 * x), "label": "v"}
    return {"f_hz": x, "magnitude": np.abs(np.sin(9 * x)), "label": "s"}


@pytest.mark.parametrize("kind", KINDS)
def test_svg_is_byte_identical(tmp_path, kind):
    a = emit_plot(data_for(kind), kind, tmp_path / "a.svg")
    b = emit_plot(data_for(kind), kind, tmp_path / "b.svg")
    assert a.read_bytes() == b.read_bytes()


def test_empty_data_rejected(tmp_path):
    with pytest.raises(ValueError):
        emit_plot({"f_hz": [], "re": [], "im": []}, "trace", tmp_path / "x.svg")
    with pytest.raises(ValueError):
        emit_plot(data_for("trace"), "nope", tmp_path / "x.svg")


def test_read_csv_columns(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("f_hz,re,im\n1,2,3\n4,5,6\n")
    cols = read_csv_columns(path)
    assert cols["re"].tolist() == [2.0, 5.0]

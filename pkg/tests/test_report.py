import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from structiso import report
from structiso.errors import ParseError
from structiso.solver import IsolationResult

floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(arrays(float, 5, elements=floats), arrays(float, 5, elements=floats),
       arrays(bool, 5))
def test_monitor_round_trip(t2, spe, flagged):
    text = report.format_monitor(t2, spe, 1.5, 0.25, flagged)
    back = report.parse_monitor(text)
    assert np.array_equal(back["t2"], t2 + 0.0)
    assert np.array_equal(back["spe"], spe + 0.0)
    assert np.array_equal(back["flagged"], flagged)
    assert np.array_equal(back["sample_index"], np.arange(5))


def test_negative_zero_prints_as_zero():
    assert report.format_monitor([-0.0], [0.0], 1.0, 1.0, [False]).splitlines()[1].startswith("0,0.0,")


@given(arrays(float, 4, elements=floats), st.sets(st.integers(0, 3)))
def test_contributions_round_trip(f, active):
    names = ["a", "b", "c", "d"]
    text = report.format_contributions(names, f, np.abs(f), np.ones(4), active)
    back = report.parse_contributions(text)
    assert back["variable"] == names
    assert np.array_equal(back["f"], f + 0.0)
    assert set(np.flatnonzero(back["active"])) == active


def test_summary_round_trip():
    items = [("lambda", 0.1 + 0.2), ("active", [1, 7]), ("qualified", True), ("family", "tree")]
    back = report.parse_summary(report.format_summary(items))
    assert back == {"lambda": repr(0.1 + 0.2), "active": "1;7", "qualified": "1", "family": "tree"}


def test_samples_round_trip(rng):
    res = [IsolationResult(rng.standard_normal(3), (), 0.0, 1, True, 0.0, 0.0, 0.0, lam=0.5)
           for _ in range(2)]
    text = report.format_samples([4, 9], ["a", "b", "c"], res, [0.1, 2.0], 1.0)
    back = report.parse_samples(text)
    assert back["variable_names"] == ["a", "b", "c"]
    assert np.array_equal(back["sample_index"], [4, 9])
    assert np.array_equal(back["f"], [r.f for r in res])


@pytest.mark.parametrize("parser, text", [
    (report.parse_monitor, ""),
    (report.parse_monitor, "sample_index,t2\n"),
    (report.parse_monitor, "sample_index,t2,spe,t2_limit,spe_limit,flagged\n0,x,1,1,1,0\n"),
    (report.parse_contributions, "index,variable,f,contribution,frequency,active\n0,a,1\n"),
    (report.parse_samples, "a,b\n"),
])
def test_parse_errors(parser, text):
    with pytest.raises(ParseError):
        parser(text)


def test_parse_error_location():
    text = "sample_index,t2,spe,t2_limit,spe_limit,flagged\n0,1,1,1,1,0\n1,1,bad,1,1,0\n"
    with pytest.raises(ParseError) as exc:
        report.parse_monitor(text, source="r.csv")
    assert (exc.value.row, exc.value.column) == (3, 3)


def test_bars():
    out = report.render_bars(["x1", "x10"], [1.0, -0.5], width=10, marks=[0]).splitlines()
    assert out[0] == " x1 * |##########| 1"
    assert out[1] == "x10   |#####     | 0.5"


def test_bars_all_zero():
    assert "|" + " " * 4 + "|" in report.render_bars(["a"], [0.0], width=4)


def test_figures(tmp_path):
    from structiso.plotting import plot_contributions, plot_monitoring

    a = plot_monitoring(np.array([1.0, 20.0]), np.array([0.1, 3.0]), 10.0, 1.0,
                        tmp_path / "m.png", start=1)
    b = plot_contributions(["a", "b"], [0.0, 2.0], [1], tmp_path / "c.png", title="t")
    assert a.read_bytes()[:4] == b.read_bytes()[:4] == b"\x89PNG"
    again = plot_contributions(["a", "b"], [0.0, 2.0], [1], tmp_path / "d.png", title="t")
    assert again.read_bytes() == b.read_bytes()

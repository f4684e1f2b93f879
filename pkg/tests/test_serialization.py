import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dppsnn.point_process import SpikeTrain
from dppsnn.serialization import (ParseError, params_from_dict, params_to_dict, read_config, read_params,
                                  read_trains, train_from_line, train_to_line, write_config, write_params,
                                  write_trains)

from conftest import small_params

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@st.composite
def trains(draw):
    D = draw(st.integers(1, 4))
    gaps = draw(st.lists(st.floats(1e-12, 10.0), min_size=0, max_size=12))
    times = np.cumsum(gaps)
    horizon = float(times[-1] * 2 + 1.0) if len(times) else draw(st.floats(0.1, 100.0))
    marks = np.array(draw(st.lists(st.lists(finite, min_size=D, max_size=D),
                                   min_size=len(times), max_size=len(times)))).reshape(len(times), D)
    return SpikeTrain(times, marks, horizon)


@given(trains())
def test_train_round_trip_is_bit_exact(tr):
    back = train_from_line(train_to_line(tr), tr.dim)
    assert back.horizon == tr.horizon
    np.testing.assert_array_equal(back.times, tr.times)
    np.testing.assert_array_equal(back.marks, tr.marks)


def test_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    items = [SpikeTrain(np.sort(rng.uniform(0, 5, 4)), rng.random((4, 3)), 5.0), SpikeTrain.empty(3, 5.0)]
    path = tmp_path / "t.jsonl"
    write_trains(path, items)
    raw = path.read_bytes()
    assert b"\r" not in raw and raw.count(b"\n") == 2
    back = read_trains(path, dim=3)
    assert len(back) == 2 and len(back[1]) == 0
    np.testing.assert_array_equal(back[0].marks, items[0].marks)


def test_non_finite_values_rejected():
    with pytest.raises(ValueError):
        train_to_line(SpikeTrain([1.0], [[np.nan]], 2.0, validate=False))


@pytest.mark.parametrize("bad", ['{"horizon": 1.0}', "[1, 2]", '{"horizon": 1.0, "events": [[0.5]]}',
                                 "not json", '{"horizon": 1.0, "events": [[0.5, [1, 0]]]}'])
def test_parse_error_names_line(tmp_path, bad):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"horizon": 1.0, "events": [[0.5, [1.0]]]}\n\n' + bad + "\n")
    with pytest.raises(ParseError, match=r"bad\.jsonl:3"):
        read_trains(path, dim=1)


def test_empty_train_needs_dimension():
    with pytest.raises(ValueError):
        train_from_line('{"horizon": 1.0, "events": []}')


def test_params_round_trip(tmp_path):
    p = small_params()
    path = tmp_path / "p.json"
    write_params(path, p)
    q = read_params(path)
    np.testing.assert_array_equal(q.flat(), p.flat())
    np.testing.assert_array_equal(q.kernel_centers, p.kernel_centers)
    assert (q.amplitude, q.observable) == (p.amplitude, p.observable)
    assert params_from_dict(params_to_dict(p)).flat().tolist() == p.flat().tolist()


def test_params_errors(tmp_path):
    path = tmp_path / "p.json"
    path.write_text('{"u_bar": [0.0]}')
    with pytest.raises(ParseError):
        read_params(path)
    path.write_text("{")
    with pytest.raises(ParseError):
        read_params(path)


def test_config_round_trip_and_errors(tmp_path):
    path = tmp_path / "c.cfg"
    write_config(path, {"D": 6, "observable": (0, 1), "temperature": 0.3})
    assert read_config(path) == {"D": "6", "observable": "0,1", "temperature": "0.3"}
    path.write_text("# comment\nD = 4  # trailing\n\nbroken line\n")
    with pytest.raises(ParseError, match=r"c\.cfg:4"):
        read_config(path)
    path.write_text(" = 3\n")
    with pytest.raises(ParseError, match=":1"):
        read_config(path)

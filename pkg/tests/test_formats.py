import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from superbunch import formats
from superbunch.detection import PhotonStream
from superbunch.formats import FormatError
from superbunch.light import IntensityTrace
from superbunch.statistics import CorrelationFunction, CountHistogram


def test_text_timetags_parse():
    s = formats.timetags_from_text("0\n1000\n2000\n")
    assert np.allclose(s.timestamps, [0, 1e-9, 2e-9], atol=0)
    assert len(s) == 3


def test_text_timetags_out_of_order_names_line():
    with pytest.raises(FormatError, match="line 3"):
        formats.timetags_from_text("0\n2000\n1000\n")
    with pytest.raises(FormatError, match="line 2"):
        formats.timetags_from_text("0\nabc\n")


def test_binary_timetags_rejects_bad_input():
    with pytest.raises(FormatError):
        formats.timetags_from_bytes(b"XXXX")
    s = PhotonStream([1e-9, 2e-9], 1, (0, 3e-9))
    data = bytearray(formats.timetags_to_bytes(s))
    with pytest.raises(FormatError):
        formats.timetags_from_bytes(bytes(data[:-1]))
    # swap the two records
    data[18:26], data[26:34] = data[26:34], data[18:26]
    with pytest.raises(FormatError, match="record 1"):
        formats.timetags_from_bytes(bytes(data))


def test_binary_header_layout():
    s = PhotonStream([1e-9], 7, (0, 2e-9))
    data = formats.timetags_to_bytes(s)
    assert data[:4] == b"SBTT"
    assert int.from_bytes(data[4:8], "little") == 1
    assert int.from_bytes(data[8:10], "little") == 7
    assert int.from_bytes(data[10:18], "little") == 1
    assert int.from_bytes(data[18:26], "little") == 1000


@settings(max_examples=40, deadline=None)
@given(
    ps=st.lists(st.integers(0, 10**13), max_size=200, unique=True),
    channel=st.integers(0, 65535),
    fmt=st.sampled_from(["text", "binary"]),
)
def test_timetag_round_trip(tmp_path_factory, ps, channel, fmt):
    ps = np.sort(np.array(ps, dtype=np.int64))
    end = int(ps[-1]) + 5 if ps.size else 10
    s = PhotonStream(ps * 1e-12, channel, (0.0, end * 1e-12))
    path = tmp_path_factory.mktemp("tt") / "tags"
    formats.write_timetags(path, s, fmt)
    back = formats.read_timetags(path)
    assert np.array_equal(np.rint(back.timestamps / 1e-12).astype(np.int64), ps)
    assert back.channel_id == channel
    assert formats.read_timetags(path) == back
    if fmt == "text":
        assert back == s


def test_trace_round_trips(tmp_path):
    tr = IntensityTrace(1e-7, np.random.default_rng(0).exponential(1e5, 1000))
    formats.write_trace(tmp_path / "t.sbit", tr, "binary")
    assert formats.read_trace(tmp_path / "t.sbit") == tr
    formats.write_trace(tmp_path / "t.csv", tr, "csv")
    back = formats.read_trace(tmp_path / "t.csv")
    assert np.array_equal(back.samples, tr.samples)
    assert back.dt == pytest.approx(tr.dt, rel=1e-12)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t_seconds,intensity_hz"


def test_trace_import_validates():
    with pytest.raises(FormatError):
        formats.trace_from_csv("t,x\n0,1\n")
    with pytest.raises(ValueError):
        formats.trace_from_csv("t_seconds,intensity_hz\n0,1\n1,-2\n")
    tr = IntensityTrace(1.0, [1.0, 2.0])
    data = formats.trace_to_bytes(tr)
    assert data[:4] == b"SBIT" and len(data) == 24 + 16
    with pytest.raises(FormatError):
        formats.trace_from_bytes(data[:-3])


def test_histogram_and_correlation_csv():
    h = CountHistogram(5e-6, [3, 1])
    assert formats.histogram_to_csv(h) == "n,count,probability\n0,3,0.75\n1,1,0.25\n"
    cf = CorrelationFunction(1.0, [-1.0, 0.0, 1.0], [1.0, 2.0, 1.0], [0.1, 0.2, 0.1])
    lines = formats.correlation_to_csv(cf).splitlines()
    assert lines[0] == "lag_seconds,g2,stderr" and lines[2] == "0.0,2.0,0.2"


def test_json_handles_nonfinite_and_numpy(tmp_path):
    formats.write_json(tmp_path / "x.json", {"b": np.float64(np.inf), "a": np.int64(3), "c": np.array([1.5])})
    doc = json.loads((tmp_path / "x.json").read_text())
    assert doc == {"a": 3, "b": "inf", "c": [1.5]}
    assert list((tmp_path).iterdir()) == [tmp_path / "x.json"]

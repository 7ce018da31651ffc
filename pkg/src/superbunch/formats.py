"""File formats for traces, time tags, histograms, correlations and reports.

Binary layouts (all little-endian):

* trace ``SBIT``: magic, version u32, dt f64 (seconds), count u64, count x f64
* time tags ``SBTT``: magic, version u32, channel u16, count u64, count x u64 picoseconds
"""
from __future__ import annotations

import io
import json
import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .detection import PhotonStream
from .light import IntensityTrace
from .statistics import CorrelationFunction, CountHistogram

TRACE_MAGIC = b"SBIT"
TAGS_MAGIC = b"SBTT"
VERSION = 1
PS = 1e-12


class FormatError(ValueError):
    pass


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    atomic_write(path, dumps_json(obj))


# ---------------------------------------------------------------------------
# intensity traces


def trace_to_csv(trace: IntensityTrace) -> str:
    buf = io.StringIO()
    buf.write("t_seconds,intensity_hz\n")
    for t, x in zip(trace.times.tolist(), trace.samples.tolist()):
        buf.write(f"{t!r},{x!r}\n")
    return buf.getvalue()


def trace_from_csv(text: str) -> IntensityTrace:
    lines = text.strip().splitlines()
    if not lines or lines[0].strip() != "t_seconds,intensity_hz":
        raise FormatError("line 1: expected header 't_seconds,intensity_hz'")
    t, x = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            a, b = line.split(",")
            t.append(float(a))
            x.append(float(b))
        except ValueError as exc:
            raise FormatError(f"line {lineno}: cannot parse {line!r}") from exc
    if not x:
        raise FormatError("trace has no samples")
    t = np.array(t)
    if t.size == 1:
        raise FormatError("a single-row CSV does not determine dt")
    dt = (t[-1] - t[0]) / (t.size - 1)
    if not np.allclose(np.diff(t), dt, rtol=1e-6, atol=0):
        raise FormatError("time column is not uniformly sampled")
    return IntensityTrace(dt, np.array(x), origin=t[0])


def trace_to_bytes(trace: IntensityTrace) -> bytes:
    head = TRACE_MAGIC + struct.pack("<IdQ", VERSION, trace.dt, len(trace))
    return head + trace.samples.astype("<f8").tobytes()


def trace_from_bytes(data: bytes) -> IntensityTrace:
    if data[:4] != TRACE_MAGIC:
        raise FormatError("not an SBIT trace file")
    version, dt, count = struct.unpack_from("<IdQ", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported SBIT version {version}")
    body = data[24:]
    if len(body) != 8 * count:
        raise FormatError(f"expected {count} samples, found {len(body) // 8}")
    return IntensityTrace(dt, np.frombuffer(body, dtype="<f8").astype(np.float64))


# ---------------------------------------------------------------------------
# time tags


def _to_ps(ts: np.ndarray) -> np.ndarray:
    ps = np.rint(ts / PS)
    if np.any(ps < 0):
        raise FormatError("time tags must be nonnegative")
    return ps.astype(np.uint64)


def timetags_to_text(stream: PhotonStream) -> str:
    """One integer picosecond tag per line after ``#`` header lines."""
    start, end = _to_ps(np.array(stream.span))
    lines = [f"# channel={stream.channel_id}", f"# span_ps={int(start)},{int(end)}"]
    lines += [str(int(v)) for v in _to_ps(stream.timestamps)]
    return "\n".join(lines) + "\n"


def timetags_from_text(text: str) -> PhotonStream:
    channel = 0
    span = None
    values = []
    prev = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            try:
                if key.strip() == "channel":
                    channel = int(val)
                elif key.strip() == "span_ps":
                    s, e = val.split(",")
                    span = (int(s) * PS, int(e) * PS)
            except ValueError as exc:
                raise FormatError(f"line {lineno}: bad header {line!r}") from exc
            continue
        try:
            v = int(line)
        except ValueError as exc:
            raise FormatError(f"line {lineno}: not an integer picosecond timestamp: {line!r}") from exc
        if v < 0:
            raise FormatError(f"line {lineno}: negative timestamp")
        if prev is not None and v <= prev:
            raise FormatError(f"line {lineno}: timestamp {v} is not after previous {prev}")
        prev = v
        values.append(v)
    ts = np.array(values, dtype=np.int64) * PS
    return _stream(ts, channel, span)


def _stream(ts, channel, span):
    if span is None:
        span = (float(ts[0]), float(ts[-1])) if ts.size else (0.0, 0.0)
    try:
        return PhotonStream(ts, channel, span)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def timetags_to_bytes(stream: PhotonStream) -> bytes:
    head = TAGS_MAGIC + struct.pack("<IHQ", VERSION, stream.channel_id, len(stream))
    return head + _to_ps(stream.timestamps).astype("<u8").tobytes()


def timetags_from_bytes(data: bytes) -> PhotonStream:
    if data[:4] != TAGS_MAGIC:
        raise FormatError("not an SBTT time-tag file")
    version, channel, count = struct.unpack_from("<IHQ", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported SBTT version {version}")
    body = data[18:]
    if len(body) != 8 * count:
        raise FormatError(f"expected {count} tags, found {len(body) // 8}")
    ps = np.frombuffer(body, dtype="<u8")
    if ps.size > 1 and np.any(np.diff(ps.astype(np.int64)) <= 0):
        bad = int(np.nonzero(np.diff(ps.astype(np.int64)) <= 0)[0][0]) + 1
        raise FormatError(f"record {bad}: timestamp is not after the previous one")
    return _stream(ps.astype(np.int64) * PS, channel, None)


def read_timetags(path, fmt: str | None = None) -> PhotonStream:
    path = Path(path)
    if fmt is None:
        with open(path, "rb") as fh:
            fmt = "binary" if fh.read(4) == TAGS_MAGIC else "text"
    if fmt == "binary":
        return timetags_from_bytes(path.read_bytes())
    if fmt == "text":
        return timetags_from_text(path.read_text())
    raise FormatError(f"unknown time-tag format {fmt!r}")


def write_timetags(path, stream: PhotonStream, fmt: str = "text") -> None:
    if fmt == "binary":
        atomic_write(path, timetags_to_bytes(stream))
    elif fmt == "text":
        atomic_write(path, timetags_to_text(stream))
    else:
        raise FormatError(f"unknown time-tag format {fmt!r}")


def read_trace(path, fmt: str | None = None) -> IntensityTrace:
    path = Path(path)
    if fmt is None:
        with open(path, "rb") as fh:
            fmt = "binary" if fh.read(4) == TRACE_MAGIC else "csv"
    if fmt == "binary":
        return trace_from_bytes(path.read_bytes())
    if fmt == "csv":
        return trace_from_csv(path.read_text())
    raise FormatError(f"unknown trace format {fmt!r}")


def write_trace(path, trace: IntensityTrace, fmt: str = "csv") -> None:
    if fmt == "binary":
        atomic_write(path, trace_to_bytes(trace))
    elif fmt == "csv":
        atomic_write(path, trace_to_csv(trace))
    else:
        raise FormatError(f"unknown trace format {fmt!r}")


# ---------------------------------------------------------------------------
# estimator outputs


def histogram_to_csv(hist: CountHistogram) -> str:
    p = hist.probabilities.tolist()
    rows = ["n,count,probability"]
    for n, (c, q) in enumerate(zip(hist.counts.tolist(), p)):
        c_str = str(int(c)) if float(c).is_integer() else repr(float(c))
        rows.append(f"{n},{c_str},{q!r}")
    return "\n".join(rows) + "\n"


def correlation_to_csv(cf: CorrelationFunction) -> str:
    rows = ["lag_seconds,g2,stderr"]
    rows += [f"{t!r},{v!r},{e!r}" for t, v, e in zip(cf.lags.tolist(), cf.values.tolist(), cf.stderr.tolist())]
    return "\n".join(rows) + "\n"

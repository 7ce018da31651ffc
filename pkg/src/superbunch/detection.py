"""Photon detection: inhomogeneous Poisson sampling and detector effects."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .light import IntensityTrace

CHUNK_SAMPLES = 2**16


@dataclass(frozen=True, eq=False)
class PhotonStream:
    """Sorted arrival times (seconds) recorded on one channel over ``span``."""

    timestamps: np.ndarray
    channel_id: int = 0
    span: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=np.float64).ravel()
        start, end = (float(x) for x in self.span)
        if end < start:
            raise ValueError(f"span end {end} precedes start {start}")
        if ts.size:
            if np.any(np.diff(ts) <= 0):
                bad = int(np.nonzero(np.diff(ts) <= 0)[0][0]) + 1
                raise ValueError(f"timestamps not strictly increasing at index {bad}")
            if ts[0] < start or ts[-1] > end:
                raise ValueError("timestamps fall outside the stream span")
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "span", (start, end))
        object.__setattr__(self, "channel_id", int(self.channel_id))

    def __len__(self):
        return self.timestamps.size

    def __eq__(self, other):
        if not isinstance(other, PhotonStream):
            return NotImplemented
        return (
            self.channel_id == other.channel_id
            and self.span == other.span
            and np.array_equal(self.timestamps, other.timestamps)
        )

    @property
    def duration(self) -> float:
        return self.span[1] - self.span[0]

    @property
    def rate(self) -> float:
        return len(self) / self.duration if self.duration > 0 else float("nan")

    def with_channel(self, channel_id: int) -> "PhotonStream":
        return PhotonStream(self.timestamps, channel_id, self.span)


@dataclass(frozen=True)
class DetectorParams:
    dead_time: float = 35e-9
    jitter_rms: float = 0.35e-9
    efficiency: float = 1.0
    dark_rate: float = 0.0

    def __post_init__(self):
        if self.dead_time < 0:
            raise ValueError("dead_time must be nonnegative")
        if self.jitter_rms < 0:
            raise ValueError("jitter_rms must be nonnegative")
        if not 0 <= self.efficiency <= 1:
            raise ValueError("efficiency must lie in [0, 1]")
        if self.dark_rate < 0:
            raise ValueError("dark_rate must be nonnegative")


def seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(int(seed.integers(2**63)))
    return np.random.SeedSequence(seed)


def _thin_chunk(samples, t0, dt, efficiency, seed):
    lam_max = efficiency * samples.max()
    if lam_max == 0:
        return np.empty(0)
    rng = np.random.default_rng(seed)
    span = samples.size * dt
    n = rng.poisson(lam_max * span)
    u = np.sort(rng.uniform(0.0, span, n))
    k = np.minimum((u / dt).astype(np.int64), samples.size - 1)
    keep = rng.uniform(0.0, lam_max, n) < efficiency * samples[k]
    return t0 + u[keep]


def sample_arrivals(
    trace: IntensityTrace,
    efficiency: float = 1.0,
    seed=None,
    *,
    channel_id: int = 0,
    chunk_samples: int = CHUNK_SAMPLES,
    workers: int = 1,
) -> PhotonStream:
    """Inhomogeneous Poisson arrivals with rate ``efficiency * I(t)``.

    Thinning runs per chunk of ``chunk_samples`` against the chunk maximum.
    Every chunk draws from its own child seed, so the result does not depend
    on ``workers``.
    """
    if not 0 <= efficiency <= 1:
        raise ValueError("efficiency must lie in [0, 1]")
    n = len(trace)
    starts = list(range(0, n, chunk_samples))
    seeds = seed_sequence(seed).spawn(len(starts))

    def run(i):
        lo = starts[i]
        hi = min(lo + chunk_samples, n)
        return _thin_chunk(trace.samples[lo:hi], trace.origin + lo * trace.dt, trace.dt, efficiency, seeds[i])

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(starts))))
    else:
        parts = [run(i) for i in range(len(starts))]
    ts = np.concatenate(parts) if parts else np.empty(0)
    return PhotonStream(ts, channel_id, (trace.origin, trace.end))


@numba.njit(cache=True)
def _dead_time_mask(ts, dead_time):
    keep = np.zeros(ts.size, dtype=np.bool_)
    if ts.size == 0:
        return keep
    keep[0] = True
    last = ts[0]
    for i in range(1, ts.size):
        if ts[i] - last >= dead_time:
            keep[i] = True
            last = ts[i]
    return keep


def apply_dead_time(stream: PhotonStream, dead_time: float) -> PhotonStream:
    """Non-paralyzable dead time; an event exactly ``dead_time`` after the last kept one survives."""
    if dead_time < 0:
        raise ValueError("dead_time must be nonnegative")
    if dead_time == 0 or len(stream) < 2:
        return stream
    keep = _dead_time_mask(stream.timestamps, float(dead_time))
    return PhotonStream(stream.timestamps[keep], stream.channel_id, stream.span)


def apply_jitter(stream: PhotonStream, jitter_rms: float, seed=None) -> PhotonStream:
    if jitter_rms < 0:
        raise ValueError("jitter_rms must be nonnegative")
    if jitter_rms == 0 or len(stream) == 0:
        return stream
    rng = np.random.default_rng(seed_sequence(seed))
    ts = np.sort(stream.timestamps + rng.normal(0.0, jitter_rms, len(stream)))
    span = (min(stream.span[0], ts[0]), max(stream.span[1], ts[-1]))
    return PhotonStream(ts, stream.channel_id, span)


def beam_split(
    stream: PhotonStream, p_transmit: float = 0.5, seed=None, channels=(1, 2)
) -> tuple[PhotonStream, PhotonStream]:
    """Route each event independently to ``channels[0]`` with probability ``p_transmit``."""
    if not 0 <= p_transmit <= 1:
        raise ValueError("p_transmit must lie in [0, 1]")
    rng = np.random.default_rng(seed_sequence(seed))
    to_first = rng.random(len(stream)) < p_transmit
    ts = stream.timestamps
    return (
        PhotonStream(ts[to_first], channels[0], stream.span),
        PhotonStream(ts[~to_first], channels[1], stream.span),
    )


def thin(stream: PhotonStream, keep_probability: float, seed=None) -> PhotonStream:
    kept, _ = beam_split(stream, keep_probability, seed, (stream.channel_id, -1))
    return kept


def add_dark_counts(stream: PhotonStream, dark_rate: float, seed=None) -> PhotonStream:
    if dark_rate < 0:
        raise ValueError("dark_rate must be nonnegative")
    if dark_rate == 0:
        return stream
    rng = np.random.default_rng(seed_sequence(seed))
    start, end = stream.span
    dark = rng.uniform(start, end, rng.poisson(dark_rate * (end - start)))
    ts = np.union1d(stream.timestamps, dark)
    return PhotonStream(ts, stream.channel_id, stream.span)


def detect(stream: PhotonStream, detector: DetectorParams, seed=None) -> PhotonStream:
    """Dark counts, then dead time on true arrival times, then timing jitter."""
    dark_seed, jitter_seed = seed_sequence(seed).spawn(2)
    out = add_dark_counts(stream, detector.dark_rate, dark_seed)
    out = apply_dead_time(out, detector.dead_time)
    return apply_jitter(out, detector.jitter_rms, jitter_seed)

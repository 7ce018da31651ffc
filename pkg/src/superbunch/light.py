"""Stochastic intensity traces for pseudothermal and superbunching light.

The source is built in three stages that mirror the optical bench:

* a rotating-groundglass speckle field, modelled as a circular complex
  Gaussian process whose intensity autocorrelation decays on ``coherence_time``;
* an electro-optic intensity modulator between crossed polarizers, driven by a
  band-limited Gaussian noise voltage;
* an optional unscattered (coherent) component added to the speckle field.

The superbunching intensity is the pointwise product of the modulator
transmission and the (possibly mixed) speckle intensity.

Timescale convention: ``coherence_time`` and ``correlation_time`` are the
timescales of the *intensity* correlation, i.e. the normalised intensity
autocovariance of a speckle trace is ``exp(-(tau/coherence_time)**2)`` for the
Gaussian shape. The underlying field correlation is therefore
``exp(-tau**2 / (2 coherence_time**2))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np
from scipy import fft as sp_fft

Shape = Literal["gaussian", "exponential"]

# lags beyond which the correlation is treated as exactly zero in the embedding
_CORR_FLOOR = 1e-13


@dataclass(frozen=True, eq=False)
class IntensityTrace:
    """Uniformly sampled, nonnegative intensity record in photons/second.

    The trace is interpreted as piecewise constant: sample ``k`` holds on
    ``[origin + k*dt, origin + (k+1)*dt)``. ``field`` optionally carries the
    complex amplitude with ``|field|**2 == samples``; it is attached by the
    speckle generator so the coherent-mixing stage can work at field level.
    """

    dt: float
    samples: np.ndarray
    origin: float = 0.0
    field: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("trace needs at least one sample")
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("trace contains non-finite samples")
        if np.any(samples < 0):
            raise ValueError("intensity samples must be nonnegative")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "origin", float(self.origin))
        if self.field is not None:
            fld = np.array(self.field, dtype=np.complex128)
            if fld.shape != samples.shape:
                raise ValueError("field and samples must have the same length")
            fld.setflags(write=False)
            object.__setattr__(self, "field", fld)

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, IntensityTrace):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.origin == other.origin
            and np.array_equal(self.samples, other.samples)
        )

    @property
    def duration(self) -> float:
        return self.samples.size * self.dt

    @property
    def end(self) -> float:
        return self.origin + self.duration

    @property
    def times(self) -> np.ndarray:
        return self.origin + self.dt * np.arange(self.samples.size)

    @property
    def mean(self) -> float:
        return float(self.samples.mean())

    def g2(self) -> float:
        """Sample ``<I^2>/<I>^2`` (nan for an all-zero trace)."""
        m = self.samples.mean()
        if m == 0:
            return float("nan")
        return float(np.mean(self.samples**2) / m**2)

    def scaled(self, factor: float) -> "IntensityTrace":
        fld = None if self.field is None else self.field * np.sqrt(factor)
        return IntensityTrace(self.dt, self.samples * factor, self.origin, fld)


@dataclass(frozen=True)
class SpeckleParams:
    coherence_time: float
    mean_intensity: float
    shape: Shape = "gaussian"

    def __post_init__(self):
        if not self.coherence_time > 0:
            raise ValueError("coherence_time must be positive")
        if not self.mean_intensity >= 0:
            raise ValueError("mean_intensity must be nonnegative")
        _check_shape(self.shape)


@dataclass(frozen=True)
class ModulationParams:
    """Electro-optic modulator driven by Gaussian noise.

    ``v_pp`` is mapped to six standard deviations of the drive voltage.
    """

    correlation_time: float
    v_pp: float
    v_pi: float = 8.0
    bias_phase: float = np.pi / 6
    shape: Shape = "gaussian"

    def __post_init__(self):
        if not self.correlation_time > 0:
            raise ValueError("correlation_time must be positive")
        if not self.v_pp >= 0:
            raise ValueError("v_pp must be nonnegative")
        if not self.v_pi > 0:
            raise ValueError("v_pi must be positive")
        _check_shape(self.shape)

    @property
    def phase_std(self) -> float:
        """Standard deviation of the optical phase offset ``pi v / (2 v_pi)``."""
        return np.pi * (self.v_pp / 6.0) / (2.0 * self.v_pi)


@dataclass(frozen=True)
class MixParams:
    coherent_fraction: float = 0.0
    model: Literal["field", "intensity"] = "field"

    def __post_init__(self):
        if not 0.0 <= self.coherent_fraction <= 1.0:
            raise ValueError(f"coherent_fraction must lie in [0, 1], got {self.coherent_fraction}")
        if self.model not in ("field", "intensity"):
            raise ValueError(f"unknown mixing model {self.model!r}")


def _check_shape(shape):
    if shape not in ("gaussian", "exponential"):
        raise ValueError(f"unknown correlation shape {shape!r}")


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# stationary Gaussian processes


def field_correlation(shape: Shape, timescale: float) -> Callable[[np.ndarray], np.ndarray]:
    """Field correlation whose squared modulus decays on ``timescale``."""
    _check_shape(shape)
    if shape == "gaussian":
        return lambda t: np.exp(-0.5 * (np.asarray(t) / timescale) ** 2)
    return lambda t: np.exp(-0.5 * np.abs(np.asarray(t)) / timescale)


def drive_correlation(shape: Shape, timescale: float) -> Callable[[np.ndarray], np.ndarray]:
    _check_shape(shape)
    if shape == "gaussian":
        return lambda t: np.exp(-((np.asarray(t) / timescale) ** 2))
    return lambda t: np.exp(-np.abs(np.asarray(t)) / timescale)


def _support(corr, dt: float) -> int:
    """Number of lags (in samples) before ``corr`` drops below the floor."""
    lag = 1
    while corr(lag * dt) > _CORR_FLOOR:
        lag *= 2
    lo, hi = lag // 2, lag
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if corr(mid * dt) > _CORR_FLOOR:
            lo = mid
        else:
            hi = mid
    return hi


def gaussian_process_pair(n: int, dt: float, corr, rng) -> tuple[np.ndarray, np.ndarray]:
    """Two independent zero-mean stationary Gaussian processes on a grid.

    Circulant embedding: the covariance is wrapped on a periodic grid long
    enough that every lag inside the first ``n`` samples is represented
    exactly, then sampled with one complex FFT. Real and imaginary parts of
    the result are independent draws with covariance ``corr(lag)``.
    """
    rng = _rng(rng)
    support = _support(corr, dt)
    # the wrapped kernel must have decayed by the midpoint of the circle
    m = sp_fft.next_fast_len(max(n + support, 2 * support), real=False)
    for _ in range(8):
        k = np.arange(m)
        c = corr(np.minimum(k, m - k) * dt)
        lam = sp_fft.fft(c).real
        if lam.min() >= -1e-8 * lam.max():
            break
        m = sp_fft.next_fast_len(2 * m, real=False)
    else:
        raise RuntimeError("circulant embedding is not nonnegative definite")
    np.clip(lam, 0.0, None, out=lam)
    w = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    z = sp_fft.fft(np.sqrt(lam / m) * w)
    return z.real[:n].copy(), z.imag[:n].copy()


def _grid(duration: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not duration >= dt:
        raise ValueError(f"duration {duration} is shorter than dt {dt}")
    return int(np.floor(duration / dt + 1e-9))


# ---------------------------------------------------------------------------
# generators


def gen_speckle_intensity(params: SpeckleParams, duration: float, dt: float, seed=None) -> IntensityTrace:
    """Pseudothermal intensity ``|E(t)|^2`` with exponential marginal."""
    if dt > params.coherence_time / 10 * (1 + 1e-9):
        raise ValueError(
            f"dt={dt:g} s too coarse for coherence_time={params.coherence_time:g} s (need dt <= tau/10)"
        )
    n = _grid(duration, dt)
    if params.mean_intensity == 0:
        return IntensityTrace(dt, np.zeros(n), field=np.zeros(n, dtype=complex))
    x, y = gaussian_process_pair(n, dt, field_correlation(params.shape, params.coherence_time), seed)
    fld = np.sqrt(params.mean_intensity / 2.0) * (x + 1j * y)
    return IntensityTrace(dt, fld.real**2 + fld.imag**2, field=fld)


def gen_modulation_intensity(params: ModulationParams, duration: float, dt: float, seed=None) -> IntensityTrace:
    """Transmission ``sin^2(pi v / (2 v_pi) + bias)`` of the noise-driven modulator."""
    if dt > params.correlation_time / 10 * (1 + 1e-9):
        raise ValueError(
            f"dt={dt:g} s too coarse for correlation_time={params.correlation_time:g} s (need dt <= tau/10)"
        )
    n = _grid(duration, dt)
    if params.v_pp == 0:
        return IntensityTrace(dt, np.full(n, np.sin(params.bias_phase) ** 2))
    v, _ = gaussian_process_pair(n, dt, drive_correlation(params.shape, params.correlation_time), seed)
    phase = params.phase_std * v + params.bias_phase
    return IntensityTrace(dt, np.sin(phase) ** 2)


def mix_coherent_background(speckle: IntensityTrace, params: MixParams, seed=None) -> IntensityTrace:
    """Add an unscattered laser component carrying ``coherent_fraction`` of the power.

    Field model: ``|alpha + sqrt(1-eps) E|^2`` with ``|alpha|^2 = eps <I>``; the
    phase of ``alpha`` is drawn from ``seed``. Intensity model:
    ``eps <I> + (1-eps) I``. The output mean equals the input mean.
    """
    eps = params.coherent_fraction
    m = speckle.mean
    if eps == 0 or m == 0:
        return speckle
    if params.model == "intensity":
        return IntensityTrace(speckle.dt, eps * m + (1 - eps) * speckle.samples, speckle.origin)
    if speckle.field is None:
        raise ValueError("field-level mixing needs a trace produced by gen_speckle_intensity")
    phi = _rng(seed).uniform(0, 2 * np.pi)
    fld = np.sqrt(eps * m) * np.exp(1j * phi) + np.sqrt(1 - eps) * speckle.field
    out = fld.real**2 + fld.imag**2
    scale = m / out.mean()
    return IntensityTrace(speckle.dt, out * scale, speckle.origin, fld * np.sqrt(scale))


def multiply_traces(a: IntensityTrace, b: IntensityTrace) -> IntensityTrace:
    if len(a) != len(b) or not np.isclose(a.dt, b.dt, rtol=1e-12, atol=0):
        raise ValueError(
            f"traces are on different grids: ({len(a)} x {a.dt:g}) vs ({len(b)} x {b.dt:g})"
        )
    return IntensityTrace(a.dt, a.samples * b.samples, a.origin)


# ---------------------------------------------------------------------------
# closed forms used by calibration


def mixed_g2(coherent_fraction: float, model: str = "field") -> float:
    """Zero-lag g2 of speckle plus a coherent component."""
    eps = coherent_fraction
    if model == "field":
        return 2.0 - eps**2
    if model == "intensity":
        return 1.0 + (1.0 - eps) ** 2
    raise ValueError(f"unknown mixing model {model!r}")


def solve_coherent_fraction(target_g2: float, model: str = "field") -> float:
    if not 1.0 <= target_g2 <= 2.0:
        raise ValueError("coherent mixing reaches g2 only in [1, 2]")
    if model == "field":
        return float(np.sqrt(2.0 - target_g2))
    if model == "intensity":
        return float(1.0 - np.sqrt(target_g2 - 1.0))
    raise ValueError(f"unknown mixing model {model!r}")


def modulation_moments(params: ModulationParams) -> tuple[float, float]:
    """``(<T>, <T^2>)`` of the modulator transmission over the Gaussian drive."""
    s2 = params.phase_std**2
    c2 = np.cos(2 * params.bias_phase)
    c4 = np.cos(4 * params.bias_phase)
    e_cos = c2 * np.exp(-2 * s2)
    e_cos_sq = 0.5 * (1 + c4 * np.exp(-8 * s2))
    return 0.5 * (1 - e_cos), 0.25 * (1 - 2 * e_cos + e_cos_sq)


def modulation_g2(params: ModulationParams) -> float:
    m1, m2 = modulation_moments(params)
    return float(m2 / m1**2)


# ---------------------------------------------------------------------------
# trace diagnostics


def intensity_g2(trace: IntensityTrace, n_blocks: int = 50) -> tuple[float, float]:
    """Sample g2(0) with a delete-one-block jackknife standard error."""
    x = trace.samples
    if n_blocks < 2 or x.size < n_blocks:
        raise ValueError("need at least two blocks with one sample each")
    usable = x.size - x.size % n_blocks
    blocks = x[:usable].reshape(n_blocks, -1)
    s1 = blocks.sum(axis=1)
    s2 = (blocks**2).sum(axis=1)
    per = blocks.shape[1]
    total_n = usable
    value = (s2.sum() / total_n) / (s1.sum() / total_n) ** 2
    n_loo = total_n - per
    loo = ((s2.sum() - s2) / n_loo) / ((s1.sum() - s1) / n_loo) ** 2
    var = (n_blocks - 1) / n_blocks * np.sum((loo - loo.mean()) ** 2)
    return float(value), float(np.sqrt(var))


def intensity_autocorrelation(trace: IntensityTrace, max_lag: int) -> np.ndarray:
    """Normalised ``<I(t) I(t+k dt)> / <I>^2`` for ``k = 0..max_lag``.

    Each lag is averaged over the ``n - k`` available products.
    """
    x = trace.samples
    n = x.size
    if max_lag >= n:
        raise ValueError("max_lag must be shorter than the trace")
    m = sp_fft.next_fast_len(2 * n, real=True)
    f = sp_fft.rfft(x, m)
    acf = sp_fft.irfft(f * np.conj(f), m)[: max_lag + 1]
    acf /= n - np.arange(max_lag + 1)
    return acf / x.mean() ** 2


def correlation_time_estimate(trace: IntensityTrace, max_lag: int) -> float:
    """Lag where the normalised intensity autocovariance first falls to 1/e."""
    cov = intensity_autocorrelation(trace, max_lag) - 1.0
    cov = cov / cov[0]
    below = np.nonzero(cov <= np.exp(-1))[0]
    if below.size == 0:
        raise ValueError("autocovariance never reaches 1/e within max_lag")
    k = below[0]
    # linear interpolation between k-1 and k
    y0, y1 = cov[k - 1], cov[k]
    frac = (y0 - np.exp(-1)) / (y0 - y1)
    return float((k - 1 + frac) * trace.dt)

"""Photon-number distributions, factorial-moment g2 and HBT correlation estimators."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numba
import numpy as np
from scipy import special, stats

from .detection import PhotonStream

Pmf = Callable[[float, np.ndarray], np.ndarray]


class UndefinedStatisticError(ValueError):
    """Raised when an estimator is undefined for the given data (e.g. zero mean)."""


# ---------------------------------------------------------------------------
# count histograms


@dataclass(frozen=True, eq=False)
class CountHistogram:
    """Empirical photon-number distribution over fixed-width windows.

    ``counts[n]`` is the number of windows holding exactly ``n`` photons. Counts
    are normally integers; analytic distributions may be represented with
    fractional weights, in which case ``n_windows`` is their sum.
    """

    window_width: float
    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.float64).ravel()
        if c.size == 0:
            c = np.zeros(1)
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ValueError("window counts must be finite and nonnegative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    def __eq__(self, other):
        if not isinstance(other, CountHistogram):
            return NotImplemented
        a, b = self.counts, other.counts
        size = max(a.size, b.size)
        return self.window_width == other.window_width and np.array_equal(
            np.pad(a, (0, size - a.size)), np.pad(b, (0, size - b.size))
        )

    @property
    def n_windows(self) -> float:
        return float(self.counts.sum())

    @property
    def n(self) -> np.ndarray:
        return np.arange(self.counts.size)

    @property
    def probabilities(self) -> np.ndarray:
        total = self.counts.sum()
        if total == 0:
            raise UndefinedStatisticError("histogram is empty")
        return self.counts / total

    @property
    def mean(self) -> float:
        return float(np.dot(self.n, self.counts) / self.counts.sum())

    @property
    def counts_per_n(self) -> dict[int, float]:
        return {int(n): float(c) for n, c in enumerate(self.counts) if c > 0}

    @classmethod
    def from_window_counts(cls, window_counts, window_width: float) -> "CountHistogram":
        window_counts = np.asarray(window_counts, dtype=np.int64)
        return cls(window_width, np.bincount(window_counts) if window_counts.size else np.zeros(1))

    @classmethod
    def from_pmf(cls, probabilities, n_windows: float = 1.0, window_width: float = 1.0) -> "CountHistogram":
        return cls(window_width, np.asarray(probabilities, dtype=float) * n_windows)


def window_edges(start: float, T: float, n_windows: int, stride: Optional[float] = None) -> np.ndarray:
    stride = T if stride is None else stride
    return start + stride * np.arange(n_windows)


def count_windows(
    stream: PhotonStream,
    T: float,
    n_windows: int,
    *,
    start: Optional[float] = None,
    stride: Optional[float] = None,
) -> CountHistogram:
    """Histogram of photon counts in half-open windows ``[t, t+T)``.

    Windows tile the stream contiguously from ``start`` (default: span start).
    A ``stride`` larger than ``T`` leaves gaps between windows.
    """
    return CountHistogram.from_window_counts(
        window_counts(stream, T, n_windows, start=start, stride=stride), T
    )


def window_counts(stream, T, n_windows, *, start=None, stride=None) -> np.ndarray:
    if not T > 0:
        raise ValueError("window width must be positive")
    if n_windows < 1:
        raise ValueError("need at least one window")
    stride = T if stride is None else float(stride)
    if stride < T:
        raise ValueError("stride must be at least the window width")
    start = stream.span[0] if start is None else float(start)
    needed = start + (n_windows - 1) * stride + T
    if start < stream.span[0] or needed > stream.span[1] * (1 + 1e-12) + 1e-15:
        raise ValueError(
            f"stream span {stream.span} cannot hold {n_windows} windows of {T:g} s from {start:g}"
        )
    lo = window_edges(start, T, n_windows, stride)
    ts = stream.timestamps
    return np.searchsorted(ts, lo + T, side="left") - np.searchsorted(ts, lo, side="left")


def _factorial_g2(weights: np.ndarray) -> float:
    n = np.arange(weights.size)
    total = weights.sum()
    m1 = np.dot(n, weights) / total
    if m1 == 0:
        raise UndefinedStatisticError("g2 is undefined for a histogram with zero mean")
    m2 = np.dot(n * (n - 1), weights) / total
    return float(m2 / m1**2)


def g2_from_histogram(
    hist: CountHistogram,
    method: Literal["delta", "bootstrap"] = "delta",
    *,
    n_boot: int = 1000,
    seed=None,
) -> tuple[float, float]:
    """Factorial-moment estimate ``<n(n-1)>/<n>^2`` and its standard error.

    The delta-method error treats windows as independent multinomial draws.
    ``method="bootstrap"`` resamples windows instead.
    """
    p = hist.probabilities
    value = _factorial_g2(p)
    n = np.arange(p.size)
    N = hist.n_windows
    if method == "delta":
        A = np.dot(n * (n - 1), p)
        B = np.dot(n, p)
        grad = n * (n - 1) / B**2 - 2 * A * n / B**3
        var = (np.dot(p, grad**2) - np.dot(p, grad) ** 2) / N
        return value, float(np.sqrt(max(var, 0.0)))
    if method == "bootstrap":
        rng = np.random.default_rng(seed)
        draws = rng.multinomial(int(round(N)), p, size=n_boot).astype(float)
        m1 = draws @ n
        ok = m1 > 0
        m2 = draws @ (n * (n - 1))
        boot = m2[ok] * N / m1[ok] ** 2
        return value, float(np.std(boot, ddof=1))
    raise ValueError(f"unknown error method {method!r}")


# ---------------------------------------------------------------------------
# reference distributions


def geometric_pmf(mean: float, n) -> np.ndarray:
    """Bose-Einstein law ``mean^n / (1+mean)^(n+1)``."""
    if mean < 0:
        raise ValueError("mean must be nonnegative")
    n = np.asarray(n)
    if mean == 0:
        return np.where(n == 0, 1.0, 0.0)
    return np.exp(n * np.log(mean) - (n + 1) * np.log1p(mean))


def poisson_pmf(mean: float, n) -> np.ndarray:
    if mean < 0:
        raise ValueError("mean must be nonnegative")
    n = np.asarray(n)
    if mean == 0:
        return np.where(n == 0, 1.0, 0.0)
    return np.exp(n * np.log(mean) - mean - special.gammaln(n + 1))


def truncated_pmf(pmf: Pmf, mean: float, tol: float = 1e-12, n_max: int = 100_000) -> np.ndarray:
    """Weights up to the first ``n`` where the cumulative mass exceeds ``1 - tol``, renormalised."""
    size = 64
    while True:
        w = np.asarray(pmf(mean, np.arange(size)), dtype=float)
        cum = np.cumsum(w)
        hit = np.nonzero(cum >= 1 - tol)[0]
        if hit.size:
            w = w[: hit[0] + 1]
            return w / w.sum()
        if size >= n_max:
            raise ValueError("pmf mass does not converge within n_max")
        size *= 4


def chisquare_gof(hist: CountHistogram, pmf: Pmf, min_expected: float = 5.0, fitted_params: int = 1):
    """Pearson goodness-of-fit of ``hist`` against ``pmf`` at the empirical mean.

    Bins are pooled from the tail until every expected count reaches
    ``min_expected``; the final bin collects ``n >= k``.
    Returns ``(statistic, dof, p_value)``.
    """
    N = hist.n_windows
    mean = hist.mean
    obs = hist.counts
    ref = truncated_pmf(pmf, mean)
    size = max(obs.size, ref.size)
    obs = np.pad(obs, (0, size - obs.size))
    exp = np.pad(ref, (0, size - ref.size)) * N
    # pool the tail into a single ">= k" bin
    k = size
    while k > 1 and exp[k - 1 :].sum() < min_expected:
        k -= 1
    o = np.append(obs[: k - 1], obs[k - 1 :].sum())
    e = np.append(exp[: k - 1], N - exp[: k - 1].sum())
    while e.size > 1 and e[-1] < min_expected:
        o = np.append(o[:-2], o[-2:].sum())
        e = np.append(e[:-2], e[-2:].sum())
    stat = float(np.sum((o - e) ** 2 / e))
    dof = int(o.size - 1 - fitted_params)
    if dof < 1:
        raise UndefinedStatisticError("too few populated bins for a goodness-of-fit test")
    return stat, dof, float(stats.chi2.sf(stat, dof))


# ---------------------------------------------------------------------------
# tail metrics


@dataclass
class TailMetrics:
    kl_divergence: float
    kl_infinite: bool
    chi2: float
    chi2_bins: int
    mean: float
    n_windows: float
    tail_ratio: dict[int, float] = field(default_factory=dict)
    tail_significance: dict[int, float] = field(default_factory=dict)
    tail_counts: dict[int, float] = field(default_factory=dict)
    tail_reference: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kl_divergence": self.kl_divergence,
            "kl_infinite": self.kl_infinite,
            "chi2": self.chi2,
            "chi2_bins": self.chi2_bins,
            "mean": self.mean,
            "n_windows": self.n_windows,
            "tail_ratio": {str(k): v for k, v in self.tail_ratio.items()},
            "tail_significance": {str(k): v for k, v in self.tail_significance.items()},
            "tail_counts": {str(k): v for k, v in self.tail_counts.items()},
            "tail_reference": {str(k): v for k, v in self.tail_reference.items()},
        }


def tail_metrics(hist: CountHistogram, reference: Pmf = geometric_pmf, ks=(3, 4, 5, 6)) -> TailMetrics:
    """Compare ``hist`` with ``reference`` evaluated at the empirical mean.

    Tail significance is ``(k_emp - N p_ref) / sqrt(N p_emp (1 - p_emp))``,
    the excess over the reference in units of the binomial counting error of
    the measured tail count.
    """
    N = hist.n_windows
    if N == 0:
        raise UndefinedStatisticError("histogram is empty")
    mean = hist.mean
    p_emp = hist.probabilities
    ref_support = truncated_pmf(reference, mean).size
    size = max(p_emp.size, ref_support)
    n = np.arange(size)
    p_ref = np.asarray(reference(mean, n), dtype=float)
    p_e = np.pad(p_emp, (0, size - p_emp.size))

    nz = p_e > 0
    if np.any(p_ref[nz] == 0):
        kl, kl_inf = float("inf"), True
    else:
        kl, kl_inf = float(np.sum(p_e[nz] * np.log(p_e[nz] / p_ref[nz]))), False

    union = nz | (p_ref > 0)
    o = p_e[union] * N
    e = p_ref[union] * N
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(e > 0, (o - e) ** 2 / e, np.where(o > 0, np.inf, 0.0))
    chi2 = float(terms.sum())

    out = TailMetrics(kl, kl_inf, chi2, int(union.sum()), mean, N)
    for k in ks:
        emp = float(p_e[k:].sum())
        # tail mass by direct summation keeps precision for tiny tails
        tail_n = np.arange(k, max(size, k + 1) + 200)
        ref = float(np.sum(reference(mean, tail_n)))
        out.tail_counts[k] = emp * N
        out.tail_reference[k] = ref
        out.tail_ratio[k] = emp / ref if ref > 0 else float("inf")
        sigma = np.sqrt(N * emp * (1 - emp))
        out.tail_significance[k] = float((emp - ref) * N / sigma) if sigma > 0 else 0.0
    return out


# ---------------------------------------------------------------------------
# coincidence correlation


@dataclass(frozen=True, eq=False)
class CorrelationFunction:
    """Normalised ``g2(t1 - t2)`` on symmetric bins centred at ``k * lag_bin_width``."""

    lag_bin_width: float
    lags: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    counts: Optional[np.ndarray] = None
    normalization: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("lags", "values", "stderr", "counts", "normalization"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=np.float64)
                v.setflags(write=False)
                object.__setattr__(self, name, v)
        if not (self.lags.shape == self.values.shape == self.stderr.shape):
            raise ValueError("lags, values and stderr must align")
        if np.any(self.values < 0):
            raise ValueError("g2 values must be nonnegative")
        if self.lags.size and not np.allclose(self.lags, -self.lags[::-1], rtol=0, atol=1e-9 * self.lag_bin_width):
            raise ValueError("lag grid must be symmetric about zero")

    @property
    def half_bins(self) -> int:
        return (self.lags.size - 1) // 2

    def rebin(self, factor: int) -> "CorrelationFunction":
        """Merge ``factor`` (odd) adjacent bins, keeping one bin centred on zero lag."""
        if factor < 1 or factor % 2 == 0:
            raise ValueError("rebin factor must be a positive odd integer")
        if self.counts is None or self.normalization is None:
            raise ValueError("rebinning needs raw counts and normalisation")
        if factor == 1:
            return self
        K = self.half_bins
        h = (factor - 1) // 2
        K2 = (K - h) // factor
        centre = np.arange(-K2, K2 + 1) * factor + K
        idx = centre[:, None] + np.arange(-h, h + 1)[None, :]
        c = self.counts[idx].sum(axis=1)
        norm = self.normalization[idx].sum(axis=1)
        return _correlation_from_counts(c, norm, self.lag_bin_width * factor)

    def zero_lag(self, half_width: float) -> tuple[float, float]:
        """Pooled ``g2`` over bins with ``|lag| <= half_width``, with Poisson error."""
        if self.counts is None or self.normalization is None:
            sel = np.abs(self.lags) <= half_width + 1e-12 * self.lag_bin_width
            w = 1 / self.stderr[sel] ** 2
            return float(np.sum(w * self.values[sel]) / w.sum()), float(np.sqrt(1 / w.sum()))
        sel = np.abs(self.lags) <= half_width + 1e-12 * self.lag_bin_width
        c = self.counts[sel].sum()
        norm = self.normalization[sel].sum()
        return float(c / norm), float(np.sqrt(c) / norm)


def _correlation_from_counts(counts, norm, bin_width) -> CorrelationFunction:
    K = (counts.size - 1) // 2
    lags = np.arange(-K, K + 1) * bin_width
    return CorrelationFunction(
        bin_width, lags, counts / norm, np.sqrt(counts) / norm, counts=counts, normalization=norm
    )


@numba.njit(cache=True)
def _coincidence_sweep(t1, t2, bin_width, K):
    """Histogram ``t1[i] - t2[j]`` into ``2K+1`` bins with a moving lower pointer on ``t2``."""
    hist = np.zeros(2 * K + 1, dtype=np.int64)
    reach = (K + 1) * bin_width
    lo = 0
    n2 = t2.size
    for i in range(t1.size):
        a = t1[i]
        while lo < n2 and t2[lo] < a - reach:
            lo += 1
        j = lo
        while j < n2 and t2[j] <= a + reach:
            k = int(np.floor((a - t2[j]) / bin_width + 0.5)) + K
            if 0 <= k < 2 * K + 1:
                hist[k] += 1
            j += 1
    return hist


def coincidence_counts(t1: np.ndarray, t2: np.ndarray, bin_width: float, K: int, workers: int = 1) -> np.ndarray:
    """Raw coincidence histogram; splitting ``t1`` across workers merges to the same integers."""
    t1 = np.ascontiguousarray(t1, dtype=np.float64)
    t2 = np.ascontiguousarray(t2, dtype=np.float64)
    if workers <= 1 or t1.size < 2 * workers:
        return _coincidence_sweep(t1, t2, bin_width, K)
    parts = np.array_split(t1, workers)
    with ThreadPoolExecutor(workers) as pool:
        hists = list(pool.map(lambda p: _coincidence_sweep(p, t2, bin_width, K), parts))
    return np.sum(hists, axis=0)


def coincidence_histogram(
    s1: PhotonStream,
    s2: PhotonStream,
    bin: float = 165e-12,
    max_lag: float = 20e-6,
    *,
    normalization: Literal["accidental", "baseline"] = "accidental",
    baseline_fraction: float = 0.2,
    workers: int = 1,
) -> CorrelationFunction:
    """Start-multistop correlation ``g2(t1 - t2)`` of two detector streams.

    Only events inside the overlap of the two spans take part. With
    ``"accidental"`` normalisation bin ``k`` is divided by
    ``r1 r2 bin (T_overlap - |lag_k|)``, the expected count for independent
    streams; ``"baseline"`` divides by the mean raw count in the outer
    ``baseline_fraction`` of the lag range on each side.
    """
    if not bin > 0:
        raise ValueError("bin width must be positive")
    if max_lag < 10 * bin:
        raise ValueError("max_lag must span at least ten bins")
    start = max(s1.span[0], s2.span[0])
    end = min(s1.span[1], s2.span[1])
    overlap = end - start
    if overlap <= 0:
        raise ValueError("streams do not overlap in time")
    K = int(round(max_lag / bin))
    a = s1.timestamps[(s1.timestamps >= start) & (s1.timestamps <= end)]
    b = s2.timestamps[(s2.timestamps >= start) & (s2.timestamps <= end)]
    counts = coincidence_counts(a, b, bin, K, workers).astype(np.float64)
    lags = np.arange(-K, K + 1) * bin
    if normalization == "accidental":
        if a.size == 0 or b.size == 0:
            raise UndefinedStatisticError("a stream has no events in the overlap")
        norm = a.size * b.size / overlap**2 * bin * (overlap - np.abs(lags))
    elif normalization == "baseline":
        far = np.abs(lags) >= (1 - baseline_fraction) * K * bin
        level = counts[far].mean()
        if level == 0:
            raise UndefinedStatisticError("no coincidences in the baseline region")
        norm = np.full(counts.size, level)
    else:
        raise ValueError(f"unknown normalisation {normalization!r}")
    return _correlation_from_counts(counts, norm, bin)

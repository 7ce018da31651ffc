"""Two-timescale model for superbunching correlation functions.

    g2(tau) = [1 + a f(tau / tau_m)] * [1 + b f(tau / tau_g)]

with ``f(x) = exp(-x^2)`` (gaussian) or ``exp(-|x|)`` (exponential). Fitted
by weighted least squares with a Levenberg-Marquardt damped Gauss-Newton
iteration; ``a, b >= 0`` and the timescales are kept positive by working in
``log tau``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Literal, Optional

import numpy as np

from .statistics import CorrelationFunction

PARAMS = ("a", "b", "tau_m", "tau_g")


class FitError(RuntimeError):
    pass


@dataclass
class FitResult:
    a: float
    b: float
    tau_m: float
    tau_g: float
    stderr: dict = field(default_factory=dict)
    covariance: Optional[list] = None
    residual_norm: float = float("nan")
    chi2: float = float("nan")
    dof: int = 0
    iterations: int = 0
    shape: str = "gaussian"

    @property
    def g2_zero(self) -> float:
        return (1 + self.a) * (1 + self.b)

    @property
    def g2_zero_stderr(self) -> float:
        if self.covariance is None:
            return float("nan")
        cov = np.asarray(self.covariance)[:2, :2]
        grad = np.array([1 + self.b, 1 + self.a])
        return float(np.sqrt(grad @ cov @ grad))

    def curve(self, lags) -> np.ndarray:
        return two_timescale_model(np.asarray(lags), self.a, self.b, self.tau_m, self.tau_g, self.shape)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["g2_zero"] = self.g2_zero
        d["g2_zero_stderr"] = self.g2_zero_stderr
        return d


def _envelope(x, shape):
    if shape == "gaussian":
        return np.exp(-(x**2))
    if shape == "exponential":
        return np.exp(-np.abs(x))
    raise ValueError(f"unknown envelope {shape!r}")


def two_timescale_model(lags, a, b, tau_m, tau_g, shape="gaussian"):
    return (1 + a * _envelope(lags / tau_m, shape)) * (1 + b * _envelope(lags / tau_g, shape))


def _model_and_jacobian(lags, theta, shape):
    """Model and Jacobian with respect to ``(a, b, log tau_m, log tau_g)``."""
    a, b, ltm, ltg = theta
    xm = lags / np.exp(ltm)
    xg = lags / np.exp(ltg)
    em = _envelope(xm, shape)
    eg = _envelope(xg, shape)
    fm = 1 + a * em
    fg = 1 + b * eg
    if shape == "gaussian":
        dem = 2 * xm**2 * em
        deg = 2 * xg**2 * eg
    else:
        dem = np.abs(xm) * em
        deg = np.abs(xg) * eg
    J = np.column_stack([em * fg, fm * eg, a * dem * fg, fm * b * deg])
    return fm * fg, J


def _covariance(J, w):
    """Inverse of ``J^T W J``; directions the data cannot constrain get infinite variance."""
    H = J.T @ (J * w[:, None])
    evals, evecs = np.linalg.eigh(H)
    tol = 1e-10 * max(evals.max(), 1e-300)
    inv = np.where(evals > tol, 1.0 / np.where(evals > tol, evals, 1.0), np.inf)
    cov = np.zeros_like(H)
    for lam_inv, v in zip(inv, evecs.T):
        if np.isinf(lam_inv):
            hit = np.abs(v) > 1e-6
            cov[np.ix_(hit, hit)] = np.inf
        else:
            cov += lam_inv * np.outer(v, v)
    return cov


def fit_two_timescale(
    cf: CorrelationFunction,
    init: Optional[FitResult] = None,
    *,
    shape: Literal["gaussian", "exponential"] = "gaussian",
    max_iter: int = 500,
    xtol: float = 1e-13,
) -> FitResult:
    lags = np.asarray(cf.lags, dtype=float)
    y = np.asarray(cf.values, dtype=float)
    err = np.asarray(cf.stderr, dtype=float)
    if lags.size < 20:
        raise FitError("need at least 20 lag bins")
    # empty bins carry no usable Poisson error; give them the smallest nonzero one
    if np.any(err <= 0):
        pos = err[err > 0]
        if pos.size == 0:
            raise FitError("all bins have zero uncertainty")
        err = np.where(err > 0, err, pos.min())
    w = 1 / err**2

    chi2_flat = float(np.sum(w * (y - 1) ** 2))
    if np.ptp(y) == 0 or chi2_flat <= lags.size + 3 * np.sqrt(2 * lags.size):
        raise FitError("correlation function is statistically flat; nothing to fit")

    if init is None:
        span = np.max(np.abs(lags))
        init = FitResult(a=0.3, b=max(float(y[np.argmin(np.abs(lags))]) / 1.3 - 1, 0.1),
                         tau_m=span / 15, tau_g=span / 4)
    theta = np.array([max(init.a, 0.0), max(init.b, 0.0), np.log(init.tau_m), np.log(init.tau_g)])

    def cost(th):
        m, _ = _model_and_jacobian(lags, th, shape)
        return float(np.sum(w * (y - m) ** 2))

    lam = 1e-3
    c = cost(theta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        m, J = _model_and_jacobian(lags, theta, shape)
        r = y - m
        H = J.T @ (J * w[:, None])
        g = J.T @ (w * r)
        diag = np.diag(H).copy()
        diag[diag == 0] = 1.0
        improved = False
        for _ in range(60):
            try:
                step = np.linalg.solve(H + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = theta + step
            trial[:2] = np.maximum(trial[:2], 0.0)
            ct = cost(trial)
            if ct <= c:
                improved = True
                break
            lam *= 10
        if not improved:
            converged = True
            break
        delta = np.max(np.abs(trial - theta) / (np.abs(theta) + 1e-12))
        small_change = c - ct <= 1e-15 * max(c, 1e-300)
        theta, c = trial, ct
        lam = max(lam / 10, 1e-12)
        if delta < xtol or (small_change and c == 0):
            converged = True
            break
    if not converged:
        raise FitError(f"no convergence after {max_iter} iterations")

    a, b, ltm, ltg = theta
    # a vanished component has no meaningful timescale; the survivor is the speckle term
    if (b == 0 and a > 0) or (a > 0 and b > 0 and ltm > ltg):
        a, b, ltm, ltg = b, a, ltg, ltm
        theta = np.array([a, b, ltm, ltg])

    m, J = _model_and_jacobian(lags, theta, shape)
    # invert in (a, b, log tau) where the curvature is well scaled, then map to tau
    scale = np.array([1.0, 1.0, np.exp(ltm), np.exp(ltg)])
    cov = _covariance(J, w) * np.outer(scale, scale)
    dof = lags.size - 4
    chi2 = float(np.sum(w * (y - m) ** 2))
    stderr = {name: float(np.sqrt(cov[i, i])) for i, name in enumerate(PARAMS)}
    return FitResult(
        a=float(a), b=float(b), tau_m=float(np.exp(ltm)), tau_g=float(np.exp(ltg)),
        stderr=stderr, covariance=cov.tolist(), residual_norm=float(np.sqrt(np.sum((y - m) ** 2))),
        chi2=chi2, dof=dof, iterations=it, shape=shape,
    )

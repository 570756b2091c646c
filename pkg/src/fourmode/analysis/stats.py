"""Bootstrap errors and weighted Gaussian fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from ..errors import FitError, InsufficientStatisticsError

MIN_RESAMPLES = 100
MAX_UNDEFINED_FRACTION = 0.10


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    sigma: float
    n_resamples: int
    resamples: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.sigma is not None and np.any(np.asarray(self.sigma) < 0):
            raise ValueError("sigma must be >= 0")
        if self.n_resamples < MIN_RESAMPLES:
            raise ValueError(f"n_resamples must be >= {MIN_RESAMPLES}")

    def __iter__(self):
        yield self.value
        yield self.sigma


def _n_items(data) -> int:
    if hasattr(data, "n_shots"):
        return data.n_shots
    return len(data)


def _take(data, idx):
    if hasattr(data, "take") and not isinstance(data, np.ndarray):
        return data.take(idx)
    return np.asarray(data)[idx]


def _evaluate(statistic, *args):
    try:
        value = np.asarray(statistic(*args), dtype=float)
    except (InsufficientStatisticsError, ZeroDivisionError, FloatingPointError):
        return None
    if not np.all(np.isfinite(value)):
        return None
    return value


def bootstrap(statistic, data, n_resamples: int = 1000, seed=0, weighted: bool = False) -> EstimateWithError:
    """Shot-resampling bootstrap of ``statistic(data)``.

    ``data`` is an array whose first axis runs over shots, or a Dataset.
    Resamples on which the statistic is undefined (raises
    InsufficientStatisticsError, or returns a non-finite value) are dropped;
    more than 10 % of them is a failure.  ``statistic`` may return a vector,
    in which case ``value`` and ``sigma`` are arrays.

    With ``weighted=True`` the statistic is called as ``statistic(data,
    weights)``, where ``weights`` counts how often each shot was drawn,
    instead of on a copied resample.  Both modes draw the same resamples for
    a given seed; the weighted one avoids copying large count arrays.
    """
    if n_resamples < MIN_RESAMPLES:
        raise ValueError(f"n_resamples must be >= {MIN_RESAMPLES}")
    n = _n_items(data)
    value = _evaluate(statistic, data, np.ones(n)) if weighted else _evaluate(statistic, data)
    if value is None:
        raise InsufficientStatisticsError("statistic undefined on the full dataset")
    rng = np.random.default_rng(seed)
    draws, undefined = [], 0
    for _ in range(n_resamples):
        idx = rng.integers(0, n, n)
        if weighted:
            v = _evaluate(statistic, data, np.bincount(idx, minlength=n).astype(float))
        else:
            v = _evaluate(statistic, _take(data, idx))
        if v is None:
            undefined += 1
        else:
            draws.append(v)
    if undefined > MAX_UNDEFINED_FRACTION * n_resamples:
        raise InsufficientStatisticsError(
            f"statistic undefined on {undefined} of {n_resamples} resamples"
        )
    draws = np.array(draws)
    sigma = draws.std(axis=0, ddof=1)
    if value.ndim == 0:
        return EstimateWithError(float(value), float(sigma), n_resamples, draws)
    return EstimateWithError(value, sigma, n_resamples, draws)


@dataclass(frozen=True)
class GaussianFit:
    amplitude: float
    center: float
    sigma: float
    offset: float
    covariance: np.ndarray = field(repr=False)
    chi2: float = 0.0
    dof: int = 0
    nfev: int = 0

    @property
    def errors(self) -> dict:
        names = ["amplitude", "center", "sigma", "offset"][: len(self.covariance)]
        # a non-positive variance means the parameter is not determined by the data
        return {k: math.sqrt(v) if v > 0 else math.inf
                for k, v in zip(names, np.diag(self.covariance))}

    def __call__(self, x):
        return gaussian(np.asarray(x, float), self.amplitude, self.center, self.sigma, self.offset)


def gaussian(x, amplitude, center, sigma, offset=0.0):
    return offset + amplitude * np.exp(-0.5 * ((x - center) / sigma) ** 2)


def gaussian_fit(x, y, y_err=None, fixed_offset: float | None = None, p0=None,
                 max_iterations: int = 200) -> GaussianFit:
    """Weighted least-squares fit of ``offset + A exp(-(x - c)^2 / 2 sigma^2)``.

    Levenberg-Marquardt with an analytic Jacobian, at most ``max_iterations``
    function evaluations.  With ``fixed_offset`` the offset is held.
    The returned sigma is always positive.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y_err is None:
        w = np.ones_like(y)
    else:
        e = np.asarray(y_err, dtype=float)
        # points without a usable error bar are dropped
        w = np.full_like(e, np.nan)
        np.divide(1.0, e, out=w, where=e > 0)
    good = np.isfinite(x) & np.isfinite(y) & np.isfinite(w)
    x, y, w = x[good], y[good], w[good]
    n_par = 3 if fixed_offset is not None else 4
    if len(x) < 4 or len(x) < n_par:
        raise FitError("need at least 4 finite points", {"n_points": int(len(x))})

    if p0 is None:
        base = fixed_offset if fixed_offset is not None else float(np.median(y))
        dev = y - base
        k = int(np.argmax(np.abs(dev)))
        amp0 = float(dev[k]) or 1e-3
        weights = np.abs(dev)
        c0 = float(np.sum(weights * x) / np.sum(weights)) if weights.sum() > 0 else float(x[k])
        s0 = float(np.sqrt(np.sum(weights * (x - c0) ** 2) / np.sum(weights))) if weights.sum() > 0 else 0.0
        s0 = s0 if s0 > 0 else float(np.ptp(x)) / 4 or 1.0
        p0 = [amp0, c0, s0] + ([] if fixed_offset is not None else [base])
    p0 = np.asarray(p0, dtype=float)[:n_par]

    def unpack(p):
        off = fixed_offset if fixed_offset is not None else p[3]
        return p[0], p[1], p[2], off

    def resid(p):
        a, c, s, off = unpack(p)
        return w * (gaussian(x, a, c, s, off) - y)

    def jac(p):
        a, c, s, _ = unpack(p)
        e = np.exp(-0.5 * ((x - c) / s) ** 2)
        cols = [e, a * e * (x - c) / s**2, a * e * (x - c) ** 2 / s**3]
        if fixed_offset is None:
            cols.append(np.ones_like(x))
        return w[:, None] * np.column_stack(cols)

    try:
        res = least_squares(resid, p0, jac=jac, method="lm", max_nfev=max_iterations)
    except ValueError as exc:
        raise FitError(f"fit failed: {exc}", {"p0": p0.tolist()}) from exc
    diag = {"status": int(res.status), "message": res.message, "nfev": int(res.nfev), "x": res.x.tolist()}
    if res.status <= 0 or not np.all(np.isfinite(res.x)):
        raise FitError(f"fit did not converge: {res.message}", diag)
    jtj = res.jac.T @ res.jac
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.full((n_par, n_par), np.inf)
    chi2 = float(np.sum(res.fun**2))
    dof = max(len(x) - n_par, 0)
    if y_err is None and dof > 0:
        cov = cov * chi2 / dof
    a, c, s, off = unpack(res.x)
    return GaussianFit(float(a), float(c), float(abs(s)), float(off), cov, chi2, dof, int(res.nfev))


def shot_mean(x, weights=None):
    """Average over the first (shot) axis, optionally with shot multiplicities."""
    x = np.asarray(x, dtype=float)
    if weights is None:
        return x.mean(axis=0)
    w = np.asarray(weights, dtype=float)
    return np.tensordot(w, x, axes=(0, 0)) / w.sum()


def weighted_scale_fit(y, y_err, model) -> tuple[float, float]:
    """Best ``V`` in ``y = V * model`` by weighted least squares, with its error."""
    y, y_err, model = (np.asarray(a, dtype=float) for a in (y, y_err, model))
    w = 1.0 / y_err**2
    denom = np.sum(w * model**2)
    if denom <= 0:
        raise FitError("model vanishes at every point", {"model": model.tolist()})
    value = float(np.sum(w * y * model) / denom)
    return value, float(1.0 / math.sqrt(denom))

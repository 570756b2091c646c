"""Fit of the joint-detection dip versus splitter time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import FitError
from .stats import GaussianFit, gaussian_fit


@dataclass(frozen=True)
class HomScanResult:
    times: np.ndarray
    probabilities: np.ndarray
    errors: np.ndarray
    fit: GaussianFit

    @property
    def center(self) -> float:
        """Closing time of the interferometer (bottom of the dip)."""
        return self.fit.center

    @property
    def visibility(self) -> float:
        """Relative depth of the dip, ``1 - P_min / P_max`` of the fitted curve."""
        base = self.fit.offset
        if base <= 0:
            raise FitError("fitted baseline is not positive", {"offset": base})
        return float(-self.fit.amplitude / base)


def hom_scan(times, probabilities, errors=None) -> HomScanResult:
    """Gaussian-dip fit to P(C+, C-) measured at splitter times ``times``.

    Needs at least five time points; the fit starts from the lowest point.
    A dip narrower than half the time step, or centred outside the scanned
    range, is not resolved by the scan and raises FitError.
    """
    t = np.asarray(times, dtype=float)
    p = np.asarray(probabilities, dtype=float)
    e = None if errors is None else np.asarray(errors, dtype=float)
    if len(t) < 5:
        raise FitError("a dip scan needs at least five time points", {"n_points": int(len(t))})
    order = np.argsort(t)
    t, p = t[order], p[order]
    e = None if e is None else e[order]
    k = int(np.argmin(p))
    base = float(np.max(p))
    step = float(np.min(np.diff(t))) if len(t) > 1 else 1.0
    width0 = max(step, (t[-1] - t[0]) / 6)
    fit = gaussian_fit(t, p, e, p0=[p[k] - base, t[k], width0, base])
    diag = {"center": fit.center, "sigma": fit.sigma, "amplitude": fit.amplitude, "step": step}
    if fit.sigma < step / 2:
        raise FitError("fitted dip is narrower than the scan resolution", diag)
    if not t[0] <= fit.center <= t[-1]:
        raise FitError("fitted dip centre lies outside the scanned range", diag)
    return HomScanResult(t, p, np.zeros_like(p) if e is None else e, fit)

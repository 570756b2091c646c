"""Normalised second-order cross-correlations g2(v+, v-)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from ..constants import DEGENERATE_VELOCITY
from ..detection import Dataset, IntegrationVolume, table_s1_volume
from ..errors import InsufficientStatisticsError
from .stats import shot_mean


def g2_from_counts(counts, weights=None) -> float:
    """<n+ n-> / (<n+><n->) from per-shot (n+, n-) counts."""
    c = np.asarray(counts, dtype=float)
    if c.ndim != 2 or c.shape[1] != 2:
        raise ValueError("counts must have shape (n_shots, 2)")
    if len(c) < 2:
        raise InsufficientStatisticsError("g2 needs at least two shots")
    m_plus, m_minus, cross = shot_mean(np.column_stack([c, c[:, 0] * c[:, 1]]), weights)
    if m_plus * m_minus == 0:
        raise InsufficientStatisticsError("an integration volume is empty in every shot")
    return float(cross / (m_plus * m_minus))


def g2_cross(dataset, vol_plus: IntegrationVolume, vol_minus: IntegrationVolume) -> float:
    """Normalised cross-correlation of the atom numbers in two volumes.

    Raises InsufficientStatisticsError when a denominator vanishes (the bin
    is undefined).  ``vol_plus is vol_minus`` gives the auto-correlation
    <n^2> / <n>^2.
    """
    counts = dataset.counts(vol_plus, vol_minus) if isinstance(dataset, Dataset) else dataset
    return g2_from_counts(counts)


@dataclass(frozen=True)
class G2Result:
    v_plus: np.ndarray  # bin centres along v_z > 0
    v_minus: np.ndarray  # bin centres along v_z < 0
    g2: np.ndarray  # (len(v_plus), len(v_minus)); NaN where undefined
    valid: np.ndarray  # bool mask of defined bins
    window: int = 1

    def peak(self) -> tuple[float, float]:
        """Bin centres of the largest defined value."""
        filled = np.where(self.valid, self.g2, -np.inf)
        i, j = np.unravel_index(np.argmax(filled), filled.shape)
        return float(self.v_plus[i]), float(self.v_minus[j])

    def principal_axes(self) -> tuple[float, float, float]:
        """Orientation and spreads of the excess ``max(g2 - 1, 0)``.

        Returns ``(angle, major, minor)``: the angle (rad) of the major axis
        from the v+ axis in the (v+, v-) plane and the standard deviations
        along the major and minor axes.  An anti-diagonal stripe (v+ = -v-)
        has angle near -pi/4.
        """
        w = np.where(self.valid, np.clip(np.nan_to_num(self.g2 - 1.0), 0.0, None), 0.0)
        total = w.sum()
        if total <= 0:
            raise InsufficientStatisticsError("no positive correlation excess on the grid")
        x, y = np.meshgrid(self.v_plus, self.v_minus, indexing="ij")
        mx, my = (w * x).sum() / total, (w * y).sum() / total
        cov = np.cov(np.stack([x.ravel() - mx, y.ravel() - my]), aweights=w.ravel(), bias=True)
        evals, evecs = np.linalg.eigh(cov)
        major = evecs[:, 1]
        angle = math.atan2(major[1], major[0])
        # an axis has no direction: fold into (-pi/2, pi/2]
        if angle <= -math.pi / 2:
            angle += math.pi
        elif angle > math.pi / 2:
            angle -= math.pi
        return angle, math.sqrt(max(evals[1], 0.0)), math.sqrt(max(evals[0], 0.0))


def _count_grid(dataset: Dataset, volume: IntegrationVolume, centers) -> np.ndarray:
    return dataset.counts(*[volume.at_vz(v) for v in centers]).astype(float)


def sliding_average(values: np.ndarray, valid: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Boxcar mean over a ``window x window`` neighbourhood of defined bins.

    This averages the ratios (not numerator and denominator separately).
    """
    if window <= 1:
        return values, valid
    filled = np.where(valid, values, 0.0)
    total = uniform_filter(filled, size=window, mode="constant", cval=0.0)
    weight = uniform_filter(valid.astype(float), size=window, mode="constant", cval=0.0)
    ok = weight > 1e-12
    out = np.full(values.shape, np.nan)
    out[ok] = total[ok] / weight[ok]
    return out, ok


def g2_map(dataset: Dataset, v_plus, v_minus, volume: IntegrationVolume | None = None,
           window: int = 3) -> G2Result:
    """g2 on the grid ``v_plus x v_minus`` with the "Fig3" map volumes by default."""
    vol = volume or table_s1_volume("Fig3")
    v_plus = np.asarray(v_plus, dtype=float)
    v_minus = np.asarray(v_minus, dtype=float)
    if dataset.n_shots < 2:
        raise InsufficientStatisticsError("g2 needs at least two shots")
    cp = _count_grid(dataset, vol, v_plus)
    cm = _count_grid(dataset, vol, v_minus)
    n = dataset.n_shots
    numerator = cp.T @ cm / n
    denominator = np.outer(cp.mean(axis=0), cm.mean(axis=0))
    valid = denominator > 0
    g2 = np.full(numerator.shape, np.nan)
    g2[valid] = numerator[valid] / denominator[valid]
    g2, valid = sliding_average(g2, valid, window)
    return G2Result(v_plus, v_minus, g2, valid, window)


def long_axis_volumes(offsets, volume: IntegrationVolume | None = None, center: float = DEGENERATE_VELOCITY):
    """Volume pairs along v+ = -v-: (center + x, -(center + x)).

    The projection coordinate is v+ - v- = 2 (center + x).
    """
    vol = volume or table_s1_volume("FigS1_left")
    offsets = np.asarray(offsets, dtype=float)
    pairs = [(vol.at_vz(center + x), vol.at_vz(-(center + x))) for x in offsets]
    return 2 * (center + offsets), pairs


def short_axis_volumes(offsets, volume: IntegrationVolume | None = None, center: float = DEGENERATE_VELOCITY):
    """Volume pairs along v+ - v- = 2 center: (center + y, -center + y).

    The projection coordinate is v+ + v- = 2 y.
    """
    vol = volume or table_s1_volume("FigS1_right")
    offsets = np.asarray(offsets, dtype=float)
    pairs = [(vol.at_vz(center + y), vol.at_vz(-center + y)) for y in offsets]
    return 2 * offsets, pairs


def projection_counts(dataset: Dataset, pairs) -> np.ndarray:
    """Per-shot counts, shape (n_shots, len(pairs), 2)."""
    vols = [v for pair in pairs for v in pair]
    return dataset.counts(*vols).reshape(dataset.n_shots, len(pairs), 2)


def g2_profile(counts3, weights=None) -> np.ndarray:
    """g2 for every volume pair of (n_shots, n_points, 2) counts; NaN if undefined."""
    c = np.asarray(counts3, dtype=float)
    num = shot_mean(c[:, :, 0] * c[:, :, 1], weights)
    m = shot_mean(c, weights)
    den = m[:, 0] * m[:, 1]
    out = np.full(num.shape, np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out

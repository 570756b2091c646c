"""Joint-detection probability estimators built from counted atom numbers.

Counts are per-shot atom numbers in integration volumes.  Every estimator
here is a ratio of shot averages, hence symmetric in the shots.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..constants import BRAGG_VELOCITY_SUM
from ..detection import Dataset, IntegrationVolume, table_s1_volume
from ..errors import InsufficientStatisticsError
from ..quantum import JointProbabilities, ModeSet
from .stats import shot_mean


@dataclass(frozen=True)
class ModeQuartet:
    """Counting volumes for the output ports A+, A-, B+, B-.

    For one mode set: A+ at v_p, A- at -v_p', B+ at v_p', B- at -v_p.
    """

    a_plus: IntegrationVolume
    a_minus: IntegrationVolume
    b_plus: IntegrationVolume
    b_minus: IntegrationVolume
    label: str = ""

    def __post_init__(self):
        vols = self.volumes
        for i, j in itertools.combinations(range(4), 2):
            if _overlap(vols[i], vols[j]):
                raise ValueError(f"quartet volumes {i} and {j} overlap")

    @property
    def volumes(self) -> tuple[IntegrationVolume, ...]:
        return (self.a_plus, self.a_minus, self.b_plus, self.b_minus)

    @classmethod
    def for_mode_set(cls, mode_set: ModeSet, volume: IntegrationVolume | None = None) -> "ModeQuartet":
        vol = volume or table_s1_volume("Fig4")
        return cls(
            vol.at_vz(mode_set.v_p),
            vol.at_vz(-mode_set.v_pprime),
            vol.at_vz(mode_set.v_pprime),
            vol.at_vz(-mode_set.v_p),
            f"set{mode_set.label}",
        )


def _overlap(a: IntegrationVolume, b: IntegrationVolume) -> bool:
    """Conservative test: bounding boxes with open intersection."""
    ca, cb = np.asarray(a.center), np.asarray(b.center)
    ha, hb = np.asarray(a.dv) / 2, np.asarray(b.dv) / 2
    return bool(np.all(np.abs(ca - cb) < ha + hb))


def quartet_counts(dataset: Dataset, quartet: ModeQuartet) -> np.ndarray:
    """Per-shot counts, columns (A+, A-, B+, B-)."""
    return dataset.counts(*quartet.volumes)


def correlators(counts, weights=None) -> np.ndarray:
    """Shot averages <n(A+)n(B+)>, <n(A+)n(B-)>, <n(A-)n(B+)>, <n(A-)n(B-)>.

    Ordered like the two-particle basis (A+B+, A+B-, A-B+, A-B-).
    ``weights`` are optional shot multiplicities.
    """
    c = np.asarray(counts, dtype=float)
    if c.ndim != 2 or c.shape[1] != 4 or len(c) == 0:
        raise ValueError("counts must have shape (n_shots, 4) with n_shots >= 1")
    ap, am, bp, bm = c.T
    return shot_mean(np.column_stack([ap * bp, ap * bm, am * bp, am * bm]), weights)


def joint_probabilities_from_counts(counts, weights=None) -> JointProbabilities:
    """Lambda-normalised joint probabilities from (A+, A-, B+, B-) counts."""
    return joint_probabilities_from_correlators(correlators(counts, weights))


def joint_probabilities_from_correlators(k) -> JointProbabilities:
    """Divide the four correlators (basis order) by their sum Lambda."""
    k = np.asarray(k, dtype=float)
    lam = k.sum()
    if lam <= 0:
        raise InsufficientStatisticsError("normalisation Lambda is zero: no coincidences")
    p = k / lam
    # JointProbabilities takes (A+B+, A-B-, A+B-, A-B+)
    return JointProbabilities(p[0], p[3], p[1], p[2])


def correlation_from_counts(counts, weights=None) -> float:
    """E = P(++) + P(--) - P(+-) - P(-+) from quartet counts."""
    return correlation_from_correlators(correlators(counts, weights))


def correlation_from_correlators(k) -> float:
    k = np.asarray(k, dtype=float)
    lam = k.sum()
    if lam <= 0:
        raise InsufficientStatisticsError("normalisation Lambda is zero: no coincidences")
    return float((k[0] + k[3] - k[1] - k[2]) / lam)


def joint_probability_estimates(dataset, quartet: ModeQuartet) -> JointProbabilities:
    counts = quartet_counts(dataset, quartet) if isinstance(dataset, Dataset) else dataset
    return joint_probabilities_from_counts(counts)


def hom_probability_from_counts(counts, weights=None) -> float:
    """P(C+, C-) = 2 <n+ n-> / Lambda from per-shot (n+, n-) counts,
    Lambda = <n+(n+ - 1)> + <n-(n- - 1)> + 2 <n+ n->."""
    c = np.asarray(counts, dtype=float)
    if c.ndim != 2 or c.shape[1] != 2 or len(c) == 0:
        raise ValueError("counts must have shape (n_shots, 2)")
    npl, nmi = c.T
    same_plus, same_minus, cross = shot_mean(np.column_stack([npl * (npl - 1), nmi * (nmi - 1), npl * nmi]), weights)
    lam = same_plus + same_minus + 2 * cross
    if lam <= 0:
        raise InsufficientStatisticsError("normalisation Lambda is zero: no pairs detected")
    return float(2 * cross / lam)


def hom_probability_estimate(dataset, vol_plus: IntegrationVolume, vol_minus: IntegrationVolume) -> float:
    counts = dataset.counts(vol_plus, vol_minus) if isinstance(dataset, Dataset) else dataset
    return hom_probability_from_counts(counts)


def hom_volumes(volume: IntegrationVolume | None = None) -> tuple[IntegrationVolume, IntegrationVolume]:
    """C+ and C- counting volumes at +-25 mm/s."""
    vol = volume or table_s1_volume("FigS3")
    half = BRAGG_VELOCITY_SUM / 2
    return vol.at_vz(half), vol.at_vz(-half)


def is_reference_combination(i: int, j: int, k: int, l: int) -> bool:
    """A+ from set i, A- from set j, B+ from set k, B- from set l, with no
    A port sharing a set with a B port."""
    return i not in (k, l) and j not in (k, l)


def reference_sets(n_sets: int = 3) -> list[tuple[int, int, int, int]]:
    """All set-index combinations (i, j, k, l), 0-based, that cannot interfere."""
    if n_sets < 1:
        raise ValueError("n_sets must be >= 1")
    return [c for c in itertools.product(range(n_sets), repeat=4) if is_reference_combination(*c)]


def reference_quartet(mode_sets, combination, volume: IntegrationVolume | None = None) -> ModeQuartet:
    i, j, k, l = combination
    q = [ModeQuartet.for_mode_set(m, volume) for m in mode_sets]
    return ModeQuartet(q[i].a_plus, q[j].a_minus, q[k].b_plus, q[l].b_minus,
                       label=f"ref{i}{j}{k}{l}")


def reference_counts(dataset: Dataset, mode_sets, volume=None) -> tuple[np.ndarray, list]:
    """Counts of every mode set's four volumes, shape (n_shots, n_sets, 4),
    and the list of reference combinations."""
    quartets = [ModeQuartet.for_mode_set(m, volume) for m in mode_sets]
    vols = [v for q in quartets for v in q.volumes]
    counts = dataset.counts(*vols).reshape(dataset.n_shots, len(mode_sets), 4)
    return counts, reference_sets(len(mode_sets))


def reference_correlations(set_counts, combinations) -> np.ndarray:
    """E for every reference combination from (n_shots, n_sets, 4) counts."""
    out = np.empty(len(combinations))
    for n, (i, j, k, l) in enumerate(combinations):
        c = np.column_stack([set_counts[:, i, 0], set_counts[:, j, 1], set_counts[:, k, 2], set_counts[:, l, 3]])
        out[n] = correlation_from_counts(c)
    return out


def pooled_reference_correlation(set_counts, combinations) -> float:
    return float(np.mean(reference_correlations(set_counts, combinations)))

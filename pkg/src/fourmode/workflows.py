"""Complete measurement runs: simulate, count, estimate, fit.

Each function here reproduces one measurement of the experiment and returns
plain result objects; the command line and the tests both build on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis.correlations import (
    G2Result,
    g2_map,
    g2_profile,
    long_axis_volumes,
    projection_counts,
    short_axis_volumes,
)
from .analysis.estimators import (
    ModeQuartet,
    correlation_from_correlators,
    correlation_from_counts,
    hom_probability_from_counts,
    hom_volumes,
    joint_probabilities_from_correlators,
    reference_sets,
)
from .analysis.hom import HomScanResult, hom_scan
from .analysis.stats import (
    EstimateWithError,
    GaussianFit,
    bootstrap,
    gaussian_fit,
    shot_mean,
    weighted_scale_fit,
)
from .detection import Dataset, DetectorConfig, table_s1_volume
from .errors import FitError, InsufficientStatisticsError
from .interferometer import OpticsConfig
from .quantum import (
    DEFAULT_CHSH_SETTINGS,
    IDX_MM,
    IDX_MP,
    IDX_PM,
    IDX_PP,
    ModeSet,
    PhaseSettings,
    bell_input_state,
    chsh_value,
    correlation_E,
    correlation_function,
    fringe_shift,
    joint_probabilities,
    mixed_input_state,
    phase_offset,
    propagate,
    side_transforms,
)
from .simulation import simulate_dataset
from .source import SourceConfig, two_particle_state_for


def derive_seed(master_seed: int, *keys: int) -> int:
    """64-bit seed for a sub-run, fixed by the master seed and integer keys."""
    words = np.random.SeedSequence([int(master_seed) & (2**64 - 1), *keys]).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


# --- joint detection probabilities -------------------------------------------


@dataclass(frozen=True)
class SetResult:
    mode_set: ModeSet
    probabilities: np.ndarray  # P(A+B+), P(A-B-), P(A+B-), P(A-B+)
    probability_errors: np.ndarray
    correlation: EstimateWithError
    analytic_correlation: float


@dataclass(frozen=True)
class JointProbabilityReport:
    sets: list[SetResult]
    combinations: list[tuple[int, int, int, int]]
    reference_correlations: np.ndarray
    pooled_reference: EstimateWithError
    reference_probabilities: np.ndarray  # mean over the reference combinations
    n_shots: int

    @property
    def reference_spread(self) -> float:
        return float(np.std(self.reference_correlations, ddof=1))


def analytic_correlation(mode_set: ModeSet, source: SourceConfig, optics: OpticsConfig) -> float:
    """E of one mode set for a single pair, with the configured optics."""
    rho = two_particle_state_for(mode_set, source)
    t_a, t_b = side_transforms(optics.phases, mode_set.detuning, optics.method, optics.rabi_frequency)
    return correlation_E(joint_probabilities(propagate(rho, t_a, t_b)))


def _port_products(counts) -> np.ndarray:
    """Per-shot products n(A port of set i) * n(B port of set k).

    ``counts`` has shape (n_shots, n_sets, 4), columns (A+, A-, B+, B-); the
    result has shape (n_shots, n_sets, 2, n_sets, 2) indexed by
    (shot, i, A sign, k, B sign), sign 0 meaning "+".
    """
    return np.einsum("nis,nkt->niskt", counts[:, :, 0:2], counts[:, :, 2:4])


def _combination_correlators(means, combination) -> np.ndarray:
    """Correlators (A+B+, A+B-, A-B+, A-B-) of ports (A+ of i, A- of j, B+ of k, B- of l)."""
    i, j, k, l = combination
    return np.array([means[i, 0, k, 0], means[i, 0, l, 1], means[j, 1, k, 0], means[j, 1, l, 1]])


def _set_statistics(products, combinations, weights=None):
    """Per-set (probabilities, E), every reference-combination E, and their mean."""
    means = shot_mean(products, weights)
    out = []
    for s in range(products.shape[1]):
        p = joint_probabilities_from_correlators(_combination_correlators(means, (s, s, s, s)))
        out.extend([p.p_pp, p.p_mm, p.p_pm, p.p_mp, correlation_E(p)])
    refs = [correlation_from_correlators(_combination_correlators(means, c)) for c in combinations]
    out.extend(refs)
    out.append(np.mean(refs) if refs else 0.0)
    return np.array(out)


def joint_probability_analysis(
    dataset: Dataset,
    mode_sets: list[ModeSet],
    source: SourceConfig,
    optics: OpticsConfig,
    n_resamples: int = 1000,
    seed: int = 0,
    volume=None,
) -> JointProbabilityReport:
    """Joint probabilities and E per mode set plus the reference-set zero level.

    One bootstrap over shots provides every error bar, so the per-set values
    and the pooled reference E are resampled consistently.
    """
    quartets = [ModeQuartet.for_mode_set(m, volume) for m in mode_sets]
    vols = [v for q in quartets for v in q.volumes]
    counts = dataset.counts(*vols).reshape(dataset.n_shots, len(mode_sets), 4).astype(float)
    combos = reference_sets(len(mode_sets)) if len(mode_sets) > 1 else []
    n_sets = len(mode_sets)
    products = _port_products(counts)
    est = bootstrap(lambda c, w: _set_statistics(c, combos, w), products, n_resamples, seed, weighted=True)
    value, sigma = np.asarray(est.value), np.asarray(est.sigma)
    sets = []
    for s, m in enumerate(mode_sets):
        block = slice(5 * s, 5 * s + 4)
        e = 5 * s + 4
        sets.append(SetResult(
            m, value[block], sigma[block],
            EstimateWithError(float(value[e]), float(sigma[e]), n_resamples),
            analytic_correlation(m, source, optics),
        ))
    ref = value[5 * n_sets:-1]
    pooled = EstimateWithError(float(value[-1]), float(sigma[-1]), n_resamples)
    means = shot_mean(products)
    ref_p = (np.mean([joint_probabilities_from_correlators(_combination_correlators(means, c)).as_tuple()
                      for c in combos], axis=0) if combos else np.full(4, np.nan))
    return JointProbabilityReport(sets, combos, ref, pooled, ref_p, dataset.n_shots)


def visibility_fit(report: JointProbabilityReport) -> tuple[float, float]:
    """Common visibility ``V`` in ``E_measured = V * E_single_pair`` over the sets."""
    y = [s.correlation.value for s in report.sets]
    e = [s.correlation.sigma for s in report.sets]
    model = [s.analytic_correlation for s in report.sets]
    return weighted_scale_fit(y, e, model)


# --- analytic fringes -----------------------------------------------------------


@dataclass(frozen=True)
class OffsetRow:
    mode_set: ModeSet
    first_order: float  # rad
    exact: float  # rad
    exact_visibility: float


def fringe_offsets(mode_sets, pulses) -> list[OffsetRow]:
    rows = []
    deflector = pulses[0]
    for m in mode_sets:
        exact = phase_offset(m, pulses, "exact")
        _, vis = fringe_shift(m.detuning, "exact", deflector.rabi_frequency)
        rows.append(OffsetRow(m, phase_offset(m, pulses, "first_order"), exact, vis))
    return rows


def phase_scan(mode_sets, rabi_frequency: float, n_points: int = 100, rho=None) -> dict[str, np.ndarray]:
    """E versus phi_A - phi_B over one period.

    Column ``E_resonant`` uses undetuned pulses; for each mode set the exact
    and first-order detuned fringes follow.
    """
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    rho = bell_input_state() if rho is None else rho
    dphi = np.linspace(-math.pi, math.pi, n_points)
    table = {"dphi_rad": dphi}
    ideal = correlation_function(rho, 0.0, "resonant")
    table["E_resonant"] = np.array([ideal(x, 0.0) for x in dphi])
    for m in mode_sets:
        for method in ("exact", "first_order"):
            E = _detuned_E(rho, m.detuning, method, rabi_frequency)
            table[f"E_{method}_set{m.label}"] = np.array([E(x, 0.0) for x in dphi])
    return table


def _detuned_E(rho, delta, method, rabi_frequency):
    def E(phi_A, phi_B):
        t_a, t_b = side_transforms(PhaseSettings(0.0, phi_A, phi_B), delta, method, rabi_frequency)
        return correlation_E(joint_probabilities(propagate(rho, t_a, t_b)))
    return E


# --- Hong-Ou-Mandel dip ---------------------------------------------------------


@dataclass(frozen=True)
class HomRun:
    times_us: np.ndarray
    estimates: list[EstimateWithError]
    scan: HomScanResult


def hom_run(source: SourceConfig, detector: DetectorConfig, optics: OpticsConfig, times_us,
            shots_per_point: int, master_seed: int, n_resamples: int = 200, workers: int = 1) -> HomRun:
    """P(C+, C-) at each splitter start time, then the dip fit."""
    c_plus, c_minus = hom_volumes()
    estimates = []
    for k, t in enumerate(times_us):
        opt = OpticsConfig(optics.phases, optics.method, optics.rabi_frequency,
                           splitter_start=t * 1e-6, closing_time=optics.closing_time,
                           packet_sigma_v=optics.packet_sigma_v, table_step=optics.table_step)
        ds = simulate_dataset(source, detector, shots_per_point, derive_seed(master_seed, 1, k), opt,
                              workers=workers)
        counts = ds.counts(c_plus, c_minus).astype(float)
        estimates.append(bootstrap(hom_probability_from_counts, counts, n_resamples,
                                   derive_seed(master_seed, 2, k), weighted=True))
    t = np.asarray(times_us, dtype=float)
    scan = hom_scan(t, [e.value for e in estimates], [e.sigma for e in estimates])
    return HomRun(t, estimates, scan)


# --- g2 -------------------------------------------------------------------------


@dataclass(frozen=True)
class Projection:
    coordinate: np.ndarray
    g2: np.ndarray
    errors: np.ndarray
    fit: GaussianFit | None


@dataclass(frozen=True)
class G2Projections:
    long_axis: Projection
    short_axis: Projection


def g2_grid(dataset: Dataset, lo: float, hi: float, step: float, window: int = 3) -> G2Result:
    centers = np.arange(lo, hi + step / 2, step)
    return g2_map(dataset, centers, -centers, table_s1_volume("Fig3"), window)


def _projection(dataset, coordinate, pairs, n_resamples, seed) -> Projection:
    """g2 along a cut with bootstrap errors; points undefined on the full
    data are reported as NaN and left out of the fit."""
    counts = projection_counts(dataset, pairs).astype(float)
    coordinate = np.asarray(coordinate, dtype=float)
    g2 = g2_profile(counts)
    err = np.full(len(g2), np.nan)
    ok = np.flatnonzero(np.isfinite(g2))
    if len(ok):
        try:
            err[ok] = bootstrap(g2_profile, counts[:, ok], n_resamples, seed, weighted=True).sigma
        except InsufficientStatisticsError:
            # some sparse point is undefined too often; resample the points one by one
            for i in ok:
                try:
                    err[i] = bootstrap(g2_profile, counts[:, i:i + 1], n_resamples, seed, weighted=True).sigma[0]
                except InsufficientStatisticsError:
                    pass
    try:
        fit = gaussian_fit(coordinate, g2, err, fixed_offset=1.0)
    except FitError:
        fit = None
    return Projection(coordinate, g2, err, fit)


def g2_projections(dataset: Dataset, long_offsets=None, short_offsets=None,
                   n_resamples: int = 200, seed: int = 0) -> G2Projections:
    """Cuts of g2 along v+ = -v- (long axis) and across it (short axis),
    each fitted by a Gaussian with offset fixed at 1."""
    long_offsets = np.arange(-16.0, 16.1, 2.0) if long_offsets is None else long_offsets
    short_offsets = np.arange(-4.0, 4.01, 0.5) if short_offsets is None else short_offsets
    xl, pl = long_axis_volumes(long_offsets)
    xs, ps = short_axis_volumes(short_offsets)
    return G2Projections(_projection(dataset, xl, pl, n_resamples, seed),
                         _projection(dataset, xs, ps, n_resamples, seed + 1))


# --- CHSH -----------------------------------------------------------------------


def bell_analytic(settings=DEFAULT_CHSH_SETTINGS, rho=None) -> float:
    return chsh_value(correlation_function(rho), settings)


def sample_port_counts(rho, phases: PhaseSettings, n_shots: int, rng, delta: float = 0.0,
                       method: str = "resonant") -> np.ndarray:
    """One pair per shot: per-shot counts (A+, A-, B+, B-) drawn from the
    pair's joint probabilities."""
    t_a, t_b = side_transforms(phases, delta, method)
    p = np.real(np.diag(propagate(rho, t_a, t_b)))
    p = np.clip(p, 0.0, None)
    outcome = rng.choice(4, size=n_shots, p=p / p.sum())
    counts = np.zeros((n_shots, 4), dtype=np.int64)
    a_plus = (outcome == IDX_PP) | (outcome == IDX_PM)
    b_plus = (outcome == IDX_PP) | (outcome == IDX_MP)
    counts[:, 0] = a_plus
    counts[:, 1] = ~a_plus
    counts[:, 2] = b_plus
    counts[:, 3] = ~b_plus
    assert IDX_MM == 3
    return counts


@dataclass(frozen=True)
class BellRun:
    S: EstimateWithError
    correlations: list[EstimateWithError] = field(default_factory=list)
    shots_per_setting: int = 0


def bell_monte_carlo(n_shots: int, master_seed: int, visibility: float = 1.0,
                     settings=DEFAULT_CHSH_SETTINGS, n_resamples: int = 500) -> BellRun:
    """CHSH value from sampled coincidences, ``n_shots`` split over the four settings.

    The source emits exactly one pair per shot in the degenerate mode set, in
    the state ``V |Bell><Bell| + (1 - V) rho_mixed``.
    """
    if not 0 <= visibility <= 1:
        raise ValueError("visibility must lie in [0, 1]")
    per = n_shots // 4
    if per < 2:
        raise ValueError("need at least 8 shots")
    rho = visibility * bell_input_state() + (1 - visibility) * mixed_input_state()
    estimates = []
    for k, (a, b) in enumerate(settings):
        rng = np.random.default_rng(derive_seed(master_seed, 3, k))
        counts = sample_port_counts(rho, PhaseSettings(0.0, a, b), per, rng)
        estimates.append(bootstrap(correlation_from_counts, counts, n_resamples,
                                   derive_seed(master_seed, 4, k), weighted=True))
    e = [x.value for x in estimates]
    s_value = e[0] - e[1] + e[2] + e[3]
    s_sigma = math.sqrt(sum(x.sigma**2 for x in estimates))
    return BellRun(EstimateWithError(s_value, s_sigma, n_resamples), estimates, per)


# --- gain calibration -----------------------------------------------------------


def mean_volume_occupancy(dataset: Dataset, mode_sets, volume=None) -> float:
    """Mean detected atom number per port volume, over all sets' quartets."""
    vols = [v for m in mode_sets for v in ModeQuartet.for_mode_set(m, volume).volumes]
    return float(dataset.counts(*vols).mean())


@dataclass(frozen=True)
class Calibration:
    mean_pairs_per_mode: float
    occupancy: float
    history: list[tuple[float, float]]


def calibrate_gain(source: SourceConfig, detector: DetectorConfig, mode_sets, target: float,
                   n_shots: int, master_seed: int, iterations: int = 3, workers: int = 1) -> Calibration:
    """Scale the gain until the mean occupancy of the joint-probability port volumes
    reaches ``target`` detected atoms.

    The mean atom number is proportional to the gain, so each step rescales
    the gain by target / measured.
    """
    if target <= 0:
        raise ValueError("target must be positive")
    gain = source.mean_pairs_per_mode if source.mean_pairs_per_mode > 0 else 0.05
    history = []
    occupancy = 0.0
    for k in range(iterations):
        ds = simulate_dataset(source.replace(mean_pairs_per_mode=gain), detector, n_shots,
                              derive_seed(master_seed, 5, k), workers=workers)
        occupancy = mean_volume_occupancy(ds, mode_sets)
        history.append((gain, occupancy))
        if occupancy <= 0:
            gain *= 10
            continue
        gain *= target / occupancy
    return Calibration(gain, occupancy, history)

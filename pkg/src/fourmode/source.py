"""Phenomenological multimode pair source.

The emission band along z is cut into ``n_modes`` longitudinal mode pairs
``(+u_k, -u_k)``.  Each mode pair holds a thermally distributed number of
pairs (two-mode squeezed statistics: partners have identical occupation,
each side is geometric).  Pair atoms get Gaussian velocity jitter about the
mode centre; partners' jitters are correlated so that the spread of
``v+ + v-`` equals ``sigma_short`` while each atom individually spreads by
``sigma_auto``.

All velocities are mm/s in the centre-of-mass frame of the pairs.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from functools import cached_property

import numpy as np

from .constants import BRAGG_VELOCITY_SUM, COM_VELOCITY, DEGENERATE_VELOCITY
from .quantum import ModeSet, pair_state


class Coherence(enum.Enum):
    ENTANGLED = "entangled"
    MIXED = "mixed"


@dataclass(frozen=True)
class SourceConfig:
    com_velocity: tuple[float, float, float] = COM_VELOCITY
    mode_center: float = DEGENERATE_VELOCITY
    sigma_long: float = 9.0
    sigma_short: float = 2.7
    sigma_auto: float = 1.9
    # spread of the pair's transverse velocity and of the partners' transverse sum
    transverse_sigma: float = 1.5
    transverse_pair_sigma: float = 1.0
    # mean pair number of the central mode pair; the gain falls off as a
    # Gaussian along the band so that v+ - v- spreads by sigma_long.  The
    # default gives about 0.2 detected atoms per joint-probability port volume at 25 %
    # efficiency (see workflows.calibrate_gain).
    mean_pairs_per_mode: float = 0.49
    n_modes: int = 64
    coherence: Coherence = Coherence.ENTANGLED
    asymmetry: float = 1.0

    def __post_init__(self):
        widths = (self.sigma_long, self.sigma_short, self.sigma_auto,
                  self.transverse_sigma, self.transverse_pair_sigma)
        if any(not (w > 0 and math.isfinite(w)) for w in widths):
            raise ValueError("all widths must be positive and finite")
        if not self.sigma_auto <= self.sigma_short <= self.sigma_long:
            raise ValueError("expected sigma_auto <= sigma_short <= sigma_long")
        if self.sigma_short > 2 * self.sigma_auto:
            raise ValueError("sigma_short cannot exceed 2 * sigma_auto (partner correlation > 1)")
        if self.mean_pairs_per_mode < 0:
            raise ValueError("gains must be non-negative")
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if not 0 <= self.asymmetry <= 1:
            raise ValueError("asymmetry must lie in [0, 1]")
        if not isinstance(self.coherence, Coherence):
            object.__setattr__(self, "coherence", Coherence(self.coherence))
        object.__setattr__(self, "com_velocity", tuple(float(x) for x in self.com_velocity))

    @property
    def band(self) -> tuple[float, float]:
        half = 2 * self.sigma_long / math.sqrt(2)
        return (self.mode_center - half, self.mode_center + half)

    def mode_edges(self) -> np.ndarray:
        return self._mode_tables[0].copy()

    def mode_centers(self) -> np.ndarray:
        return self._mode_tables[1].copy()

    def mode_gains(self) -> np.ndarray:
        """Mean pair number of every mode pair."""
        return self._mode_tables[2].copy()

    @cached_property
    def _mode_tables(self):
        lo, hi = self.band
        edges = np.linspace(lo, hi, self.n_modes + 1)
        centers = 0.5 * (edges[1:] + edges[:-1])
        sigma_u = self.sigma_long / 2
        gains = self.mean_pairs_per_mode * np.exp(-0.5 * ((centers - self.mode_center) / sigma_u) ** 2)
        return edges, centers, gains

    @property
    def mean_pairs(self) -> float:
        """Expected number of emitted pairs per shot (before asymmetry losses)."""
        return float(self._mode_tables[2].sum())

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["coherence"] = self.coherence.value
        d["com_velocity"] = list(self.com_velocity)
        return d

    def replace(self, **changes) -> "SourceConfig":
        d = {**{f.name: getattr(self, f.name) for f in fields(self)}, **changes}
        return SourceConfig(**d)


def config_digest(payload: dict) -> str:
    """Short, stable digest of a JSON-serialisable configuration."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EmissionEvent:
    """Atoms emitted in one shot.

    Partners are adjacent: rows ``2i`` (the ``v_z > 0`` partner) and
    ``2i + 1`` share ``pair_tags == i``.  Atoms without a partner, if any,
    carry tag ``-1`` and follow the pairs.
    """

    velocities: np.ndarray  # (n, 3)
    pair_tags: np.ndarray = field(default=None)  # (n,)

    def __post_init__(self):
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 3)
        if self.pair_tags is None:
            self.pair_tags = np.full(len(self.velocities), -1, dtype=np.int64)
        self.pair_tags = np.asarray(self.pair_tags, dtype=np.int64)

    def __len__(self):
        return len(self.velocities)

    @property
    def n_pairs(self) -> int:
        return int(np.count_nonzero(self.pair_tags >= 0) // 2)

    def partners(self) -> tuple[np.ndarray, np.ndarray]:
        """Velocities of the ``+`` and ``-`` partner of every tagged pair."""
        n = 2 * self.n_pairs
        return self.velocities[0:n:2], self.velocities[1:n:2]


def shot_seed(master_seed: int, shot_index: int) -> np.random.SeedSequence:
    """Seed of one shot: a SeedSequence over ``(master_seed, shot_index)``.

    SeedSequence hashes its entropy words, so neighbouring indices give
    independent streams and any shot can be regenerated on its own.
    """
    return np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(shot_index)])


def _partner_jitter(rng, n, sigma_single, sigma_sum):
    """(n, 2) Gaussian jitters, each of std ``sigma_single``, whose sum has
    std ``sigma_sum``."""
    rho = sigma_sum**2 / (2 * sigma_single**2) - 1
    rho = min(1.0, max(-1.0, rho))
    common, own = rng.standard_normal((2, n))
    a = math.sqrt((1 + rho) / 2)
    b = math.sqrt((1 - rho) / 2)
    # z1 = a c + b e, z2 = a c - b e: unit variance, correlation a^2 - b^2 = rho
    z = np.stack([a * common + b * own, a * common - b * own], axis=1)
    return sigma_single * z


def sample_shot(config: SourceConfig, seed) -> EmissionEvent:
    """Draw the atoms emitted in one shot.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts; passing a
    Generator lets a pipeline share one stream across its stages.
    """
    rng = np.random.default_rng(seed)
    edges, centers, gains = config._mode_tables
    # geometric on {0, 1, ...} with mean g: success probability 1 / (1 + g)
    n_per_mode = rng.geometric(1.0 / (1.0 + gains)) - 1
    if config.asymmetry < 1:
        lower = centers < config.mode_center
        n_per_mode[lower] = rng.binomial(n_per_mode[lower], config.asymmetry)
    n_pairs = int(n_per_mode.sum())
    if n_pairs == 0:
        return EmissionEvent(np.empty((0, 3)), np.empty(0, dtype=np.int64))

    mode_of_pair = np.repeat(np.arange(config.n_modes), n_per_mode)
    u = rng.uniform(edges[mode_of_pair], edges[mode_of_pair + 1])
    jz = _partner_jitter(rng, n_pairs, config.sigma_auto, config.sigma_short)
    w = rng.normal(0.0, config.transverse_sigma, (n_pairs, 2))
    # independent per-atom transverse jitter; the partners' sum spreads by transverse_pair_sigma
    jt = rng.normal(0.0, config.transverse_pair_sigma / math.sqrt(2), (n_pairs, 2, 2))
    plus = np.column_stack([w + jt[:, 0], u + jz[:, 0]])
    minus = np.column_stack([-w + jt[:, 1], -u + jz[:, 1]])
    pairs = np.empty((2 * n_pairs, 3))
    pairs[0::2] = plus
    pairs[1::2] = minus
    tags = np.repeat(np.arange(n_pairs), 2)

    return EmissionEvent(pairs, tags)


def two_particle_state_for(mode_set: ModeSet, config: SourceConfig) -> np.ndarray:
    """Two-particle input state of one mode set for the analytic pipeline."""
    lo, hi = config.band
    if not (lo <= mode_set.v_p <= hi and lo <= mode_set.v_pprime <= hi):
        raise ValueError(
            f"mode set ({mode_set.v_p}, {mode_set.v_pprime}) outside the emission band [{lo:.3g}, {hi:.3g}]"
        )
    # losses act on the slower (v < mode_center) mode pair
    return pair_state(1.0, config.asymmetry, coherent=config.coherence is Coherence.ENTANGLED)


assert BRAGG_VELOCITY_SUM == 2 * DEGENERATE_VELOCITY

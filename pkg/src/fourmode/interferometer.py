"""Monte Carlo passage of emitted pairs through the Bragg interferometer.

Every tagged pair belongs to one mode set, identified by ``u = (v+ - v-)/2``:
for ``u > 25`` the pair sits in ``(p, -p)`` with ``v_p = u``, otherwise in
``(p', -p')`` with ``v_p = 50 - u``.  The pair's output ports are drawn from
the quantum joint probabilities of that mode set, and each atom is moved to
the velocity of its port: the ``v_z > 0`` partner either stays or loses
50 mm/s, the ``v_z < 0`` partner either stays or gains 50 mm/s.

Imperfect closing of the interferometer (splitter time away from the
overlap time) makes the two paths partly distinguishable; the coherence of
each pair's two-particle state is scaled by the wave-packet overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .constants import (
    BRAGG_VELOCITY_SUM,
    DEGENERATE_VELOCITY,
    HBAR,
    HE4_MASS,
    RABI_FREQUENCY,
    SPLITTER_START,
)
from .quantum import (
    IDX_MM,
    IDX_MP,
    IDX_PM,
    IDX_PP,
    PhaseSettings,
    detuning_from_velocities,
    pair_state,
    propagate,
    side_transforms,
)
from .source import Coherence, EmissionEvent, SourceConfig


def coherence_time(sigma_v: float) -> float:
    """Width (s) of the overlap ``exp(-dt^2 / 2 tau^2)`` versus splitter delay.

    A mode of velocity spread ``sigma_v`` (mm/s) is a packet of position spread
    ``hbar / (2 m sigma_v)``; the two paths close at a relative speed of
    50 mm/s.
    """
    ell = HBAR / (2 * HE4_MASS * sigma_v * 1e-3)
    return math.sqrt(2) * ell / (BRAGG_VELOCITY_SUM * 1e-3)


def path_overlap(splitter_start: float, closing_time: float, sigma_v: float) -> float:
    """Squared overlap of the two paths for a splitter starting at ``splitter_start``."""
    tau = coherence_time(sigma_v)
    return math.exp(-0.5 * ((splitter_start - closing_time) / tau) ** 2)


@dataclass(frozen=True)
class OpticsConfig:
    phases: PhaseSettings = PhaseSettings(0.0, 0.0, 0.0)
    method: str = "exact"
    rabi_frequency: float = RABI_FREQUENCY
    splitter_start: float = SPLITTER_START
    closing_time: float = SPLITTER_START
    # velocity spread setting the coherence time; None uses the source's sigma_auto
    packet_sigma_v: float | None = None
    # grid of |u - 25| (mm/s) on which port probabilities are tabulated
    table_step: float = 0.05

    def overlap(self, source: SourceConfig) -> float:
        sigma_v = self.packet_sigma_v if self.packet_sigma_v is not None else source.sigma_auto
        return path_overlap(self.splitter_start, self.closing_time, sigma_v)


def _port_probabilities(rho, x, phases, method, rabi_frequency):
    """(len(x), 4) joint probabilities (A+B+, A+B-, A-B+, A-B-)."""
    out = np.empty((len(x), 4))
    phases = PhaseSettings(*phases)
    for i, xi in enumerate(x):
        v_p = DEGENERATE_VELOCITY + xi
        delta = detuning_from_velocities(v_p, BRAGG_VELOCITY_SUM - v_p)
        t_a, t_b = side_transforms(phases, delta, method, rabi_frequency)
        out[i] = np.real(np.diag(propagate(rho, t_a, t_b)))
    return np.clip(out, 0.0, None)


@lru_cache(maxsize=64)
def _cached_table(asymmetry, overlap, phases, method, rabi_frequency, n, step):
    x = np.arange(n) * step
    coh = _port_probabilities(pair_state(1.0, asymmetry, coherent=True), x, phases, method, rabi_frequency)
    inc = _port_probabilities(pair_state(1.0, asymmetry, coherent=False), x, phases, method, rabi_frequency)
    mix = overlap * coh + (1.0 - overlap) * inc
    mix = mix / mix.sum(axis=1, keepdims=True)
    mix.flags.writeable = False
    return mix


class Interferometer:
    """Port sampler for one (source, optics) pair; reuse it across shots."""

    def __init__(self, source: SourceConfig, optics: OpticsConfig = OpticsConfig()):
        self.source = source
        self.optics = optics
        lo, hi = source.band
        # atoms jitter beyond the band edges, so tabulate a bit further
        x_max = max(hi - DEGENERATE_VELOCITY, DEGENERATE_VELOCITY - lo) + 8 * source.sigma_auto
        n = int(math.ceil(x_max / optics.table_step)) + 1
        self.x_grid = np.arange(n) * optics.table_step

    @cached_property
    def overlap(self) -> float:
        return self.optics.overlap(self.source)

    @cached_property
    def table(self) -> np.ndarray:
        """Port probabilities on ``x_grid``, coherence already mixed in."""
        src, opt = self.source, self.optics
        lam = self.overlap if src.coherence is Coherence.ENTANGLED else 0.0
        phases = (opt.phases.phi_D, opt.phases.phi_A, opt.phases.phi_B)
        return _cached_table(src.asymmetry, lam, phases, opt.method, opt.rabi_frequency,
                             len(self.x_grid), opt.table_step)

    def port_probabilities(self, u) -> np.ndarray:
        """Interpolated joint port probabilities for pairs with half-separation ``u``."""
        x = np.abs(np.asarray(u, dtype=float) - DEGENERATE_VELOCITY) / self.optics.table_step
        t = self.table
        i0 = np.minimum(x.astype(np.int64), len(t) - 2)
        w = np.minimum(x - i0, 1.0)[..., None]
        p = t[i0] * (1.0 - w) + t[i0 + 1] * w
        return p / p.sum(axis=-1, keepdims=True)

    def apply(self, event: EmissionEvent, seed) -> EmissionEvent:
        """Output velocities of every atom of ``event`` after the interferometer."""
        rng = np.random.default_rng(seed)
        plus, minus = event.partners()
        n = len(plus)
        v = event.velocities.copy()
        if n == 0:
            return EmissionEvent(v, event.pair_tags.copy())
        u = 0.5 * (plus[:, 2] - minus[:, 2])
        probs = self.port_probabilities(u)
        outcome = (rng.random(n)[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
        outcome = np.minimum(outcome, 3)
        sign_a = outcome <= IDX_PM  # A port is "+" for A+B+ and A+B-
        sign_b = (outcome == IDX_PP) | (outcome == IDX_MP)  # B port is "+"
        upper = u >= DEGENERATE_VELOCITY
        # the v+ atom is particle A for the upper mode pair, particle B otherwise
        plus_stays = np.where(upper, sign_a, sign_b)
        minus_stays = ~np.where(upper, sign_b, sign_a)
        rows = np.arange(n)
        v[2 * rows[~plus_stays], 2] -= BRAGG_VELOCITY_SUM
        v[2 * rows[~minus_stays] + 1, 2] += BRAGG_VELOCITY_SUM
        return EmissionEvent(v, event.pair_tags.copy())


assert (IDX_PP, IDX_PM, IDX_MP, IDX_MM) == (0, 1, 2, 3)

"""Closed-form quantum optics of the two-particle, four-mode interferometer.

Single-particle mode spaces are two dimensional.  Particle A lives in
``{p, -p'}`` (outputs ``{A+, A-}``), particle B in ``{p', -p}`` (outputs
``{B+, B-}``).  Two-particle operators use the ordered product basis

    index 0: (p, p')   -> A+B+
    index 1: (p, -p)   -> A+B-
    index 2: (-p', p') -> A-B+
    index 3: (-p', -p) -> A-B-

Matrices are plain complex ``numpy`` arrays; the ``check_*`` helpers enforce
the invariants where a value crosses a module boundary.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .constants import (
    BRAGG_VELOCITY_SUM,
    HBAR,
    HE4_MASS,
    RABI_FREQUENCY,
)
from .errors import FitError, InvalidStateError, MomentumConditionError, NonUnitaryError

UNITARY_TOL = 1e-12
STATE_TOL = 1e-12
PROB_TOL = 1e-12

# (A+B+, A+B-, A-B+, A-B-) positions in the product basis
IDX_PP, IDX_PM, IDX_MP, IDX_MM = 0, 1, 2, 3


class PulseRole(enum.Enum):
    DEFLECTOR = "deflector"  # pulse area pi
    SPLITTER = "splitter"  # pulse area pi/2
    CUSTOM = "custom"


_ROLE_AREA = {PulseRole.DEFLECTOR: math.pi, PulseRole.SPLITTER: math.pi / 2}


@dataclass(frozen=True)
class BraggPulse:
    """Square Bragg pulse: constant two-photon Rabi frequency for ``duration``.

    ``rabi_frequency`` is an angular frequency (rad/s), ``duration`` is in
    seconds and ``lattice_phase`` is the phase difference between the two
    lattice beams (rad).
    """

    rabi_frequency: float
    duration: float
    lattice_phase: float = 0.0
    role: PulseRole = PulseRole.CUSTOM

    def __post_init__(self):
        if not math.isfinite(self.rabi_frequency) or self.rabi_frequency < 0:
            raise ValueError(f"rabi_frequency must be >= 0, got {self.rabi_frequency}")
        if self.role is not PulseRole.CUSTOM and self.rabi_frequency == 0:
            raise ValueError("a deflector or splitter needs rabi_frequency > 0")
        if not math.isfinite(self.duration) or self.duration < 0:
            raise ValueError(f"duration must be >= 0, got {self.duration}")
        if not math.isfinite(self.lattice_phase):
            raise ValueError("lattice_phase must be finite")
        target = _ROLE_AREA.get(self.role)
        if target is not None and abs(self.area - target) >= 1e-9:
            raise ValueError(
                f"{self.role.value} pulse needs area {target:.12g}, got {self.area:.12g}"
            )

    @property
    def area(self) -> float:
        return self.rabi_frequency * self.duration

    @classmethod
    def deflector(cls, lattice_phase=0.0, rabi_frequency=RABI_FREQUENCY):
        return cls(rabi_frequency, math.pi / rabi_frequency, lattice_phase, PulseRole.DEFLECTOR)

    @classmethod
    def splitter(cls, lattice_phase=0.0, rabi_frequency=RABI_FREQUENCY):
        return cls(rabi_frequency, math.pi / (2 * rabi_frequency), lattice_phase, PulseRole.SPLITTER)

    def with_phase(self, lattice_phase: float) -> "BraggPulse":
        return BraggPulse(self.rabi_frequency, self.duration, lattice_phase, self.role)


@dataclass(frozen=True)
class PhaseSettings:
    """Lattice phases of the deflector and of splitters A and B (rad)."""

    phi_D: float = 0.0
    phi_A: float = 0.0
    phi_B: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(x) for x in (self.phi_D, self.phi_A, self.phi_B)):
            raise ValueError("phases must be finite")


def detuning_from_velocities(v_p: float, v_pprime: float) -> float:
    """Kinetic-energy mismatch delta (rad/s) of the Bragg-coupled pair.

    ``hbar * delta = m v_p^2 / 2 - m v_p'^2 / 2`` with velocities in mm/s.
    """
    if abs(v_p + v_pprime - BRAGG_VELOCITY_SUM) > 1e-6:
        raise MomentumConditionError(
            f"v_p + v_p' = {v_p + v_pprime} mm/s, expected {BRAGG_VELOCITY_SUM}"
        )
    return HE4_MASS * (v_p**2 - v_pprime**2) * 1e-6 / (2 * HBAR)


@dataclass(frozen=True)
class ModeSet:
    """A Bragg-coupled velocity pair ``(v_p, v_p')`` and its detuning."""

    v_p: float
    v_pprime: float
    detuning: float
    label: int = 0

    def __post_init__(self):
        if abs(self.v_p + self.v_pprime - BRAGG_VELOCITY_SUM) > 1e-9:
            raise MomentumConditionError(
                f"v_p + v_p' = {self.v_p + self.v_pprime} mm/s, expected {BRAGG_VELOCITY_SUM}"
            )
        if not self.v_p > BRAGG_VELOCITY_SUM / 2:
            raise ValueError(f"mode p must be the faster mode (v_p > 25), got {self.v_p}")
        expected = detuning_from_velocities(self.v_p, self.v_pprime)
        if not math.isclose(self.detuning, expected, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError(f"detuning {self.detuning} inconsistent with velocities ({expected})")

    @classmethod
    def from_velocity(cls, v_p: float, label: int = 0) -> "ModeSet":
        v_pprime = BRAGG_VELOCITY_SUM - v_p
        return cls(v_p, v_pprime, detuning_from_velocities(v_p, v_pprime), label)


# --- two-mode unitaries -----------------------------------------------------


def check_unitary(u, tol: float = UNITARY_TOL) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2):
        raise NonUnitaryError(f"expected a 2x2 matrix, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise NonUnitaryError("matrix has non-finite entries")
    err = np.max(np.abs(u.conj().T @ u - np.eye(2)))
    if err >= tol or abs(abs(np.linalg.det(u)) - 1) >= tol:
        raise NonUnitaryError(f"matrix is not unitary (max |U^dag U - 1| = {err:.3e})")
    return u


def _free_phase(theta):
    """diag(exp(-i theta/2), exp(i theta/2))."""
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def resonant_unitary(pulse: BraggPulse) -> np.ndarray:
    half = pulse.area / 2
    c, s = math.cos(half), math.sin(half)
    phi = pulse.lattice_phase
    return np.array(
        [[c, -1j * np.exp(-1j * phi) * s], [-1j * np.exp(1j * phi) * s, c]],
        dtype=complex,
    )


def detuned_unitary_first_order(pulse: BraggPulse, delta: float) -> np.ndarray:
    """Resonant rotation followed by the phase ``delta * t`` accrued between
    the two modes during the pulse; valid to first order in delta/Omega.

    For the pair ``(p', -p)`` pass ``-delta``.
    """
    if abs(delta) >= pulse.rabi_frequency:
        warnings.warn(
            f"|delta| = {abs(delta):.4g} rad/s is not small against Omega = "
            f"{pulse.rabi_frequency:.4g} rad/s; first-order result is unreliable",
            stacklevel=2,
        )
    return _free_phase(delta * pulse.duration) @ resonant_unitary(pulse)


def detuned_unitary_exact(pulse: BraggPulse, delta: float) -> np.ndarray:
    """Exact two-mode evolution over a square pulse with detuning ``delta``.

    Propagation phases are dropped, so the only effect of the detuning is
    that the lattice phase seen by the pair advances as ``phi + delta * s``
    during the pulse (``0 <= s <= t``).  Writing the propagator in the frame
    co-moving with that phase gives the generalised Rabi solution with
    frequency ``sqrt(Omega^2 + delta^2)``::

        U(t) = F(delta t) exp(-i t/2 [[-delta, Omega e^{-i phi}],
                                      [Omega e^{i phi},  delta]])

    with ``F(x) = diag(e^{-ix/2}, e^{ix/2})``.  ``delta = 0`` is exactly the
    resonant matrix and ``Omega = 0`` gives the identity.
    """
    omega, t, phi = pulse.rabi_frequency, pulse.duration, pulse.lattice_phase
    w = math.hypot(omega, delta)
    half = w * t / 2
    c = math.cos(half)
    sinc = t / 2 if w == 0 else math.sin(half) / w  # sin(w t/2) / w
    gen = np.array(
        [[-delta, omega * np.exp(-1j * phi)], [omega * np.exp(1j * phi), delta]],
        dtype=complex,
    )
    rot = c * np.eye(2) - 1j * sinc * gen
    return _free_phase(delta * t) @ rot


def interferometer_transform(deflector, splitter) -> np.ndarray:
    """Single-side transform: deflector first, then splitter."""
    return check_unitary(splitter) @ check_unitary(deflector)


UNITARY_METHODS = {
    "resonant": lambda pulse, delta: resonant_unitary(pulse),
    "first_order": detuned_unitary_first_order,
    "exact": detuned_unitary_exact,
}


def side_transforms(
    phases: PhaseSettings = PhaseSettings(),
    delta: float = 0.0,
    method: str = "resonant",
    rabi_frequency: float = RABI_FREQUENCY,
) -> tuple[np.ndarray, np.ndarray]:
    """``(T_A, T_B)`` for a pi / pi-over-2 sequence at detuning ``delta``."""
    make = UNITARY_METHODS[method]
    deflector = BraggPulse.deflector(phases.phi_D, rabi_frequency)
    split_a = BraggPulse.splitter(phases.phi_A, rabi_frequency)
    split_b = BraggPulse.splitter(phases.phi_B, rabi_frequency)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t_a = interferometer_transform(make(deflector, delta), make(split_a, delta))
        t_b = interferometer_transform(make(deflector, -delta), make(split_b, -delta))
    return t_a, t_b


# --- two-particle states ----------------------------------------------------


def check_state(rho, tol: float = STATE_TOL) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise InvalidStateError(f"expected a 4x4 density matrix, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) >= tol:
        raise InvalidStateError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) >= tol:
        raise InvalidStateError(f"trace is {np.trace(rho).real:.15g}, expected 1")
    if np.min(np.linalg.eigvalsh(rho)) < -1e-10:
        raise InvalidStateError("density matrix has a negative eigenvalue")
    return rho


def pair_state(weight_p: float = 1.0, weight_pprime: float = 1.0, coherent: bool = True) -> np.ndarray:
    """Pair emitted in ``|p,-p>`` or ``|p',-p'>`` with the given populations.

    ``coherent`` selects the superposition; otherwise the incoherent mixture.
    """
    if weight_p < 0 or weight_pprime < 0 or weight_p + weight_pprime == 0:
        raise ValueError("weights must be non-negative and not both zero")
    norm = weight_p + weight_pprime
    a, b = math.sqrt(weight_p / norm), math.sqrt(weight_pprime / norm)
    ket_1 = np.zeros(4, dtype=complex)
    ket_2 = np.zeros(4, dtype=complex)
    ket_1[IDX_PM] = 1.0  # particle A in p, particle B in -p
    ket_2[IDX_MP] = 1.0  # particle A in -p', particle B in p'
    if coherent:
        psi = a * ket_1 + b * ket_2
        return np.outer(psi, psi.conj())
    return a**2 * np.outer(ket_1, ket_1) + b**2 * np.outer(ket_2, ket_2)


def bell_input_state() -> np.ndarray:
    return pair_state(1.0, 1.0, coherent=True)


def mixed_input_state() -> np.ndarray:
    return pair_state(1.0, 1.0, coherent=False)


def purity(rho) -> float:
    rho = np.asarray(rho)
    return float(np.real(np.trace(rho @ rho)))


def propagate(rho, t_a, t_b) -> np.ndarray:
    """``(T_A x T_B) rho (T_A x T_B)^dagger``."""
    rho = check_state(rho)
    full = np.kron(check_unitary(t_a), check_unitary(t_b))
    return full @ rho @ full.conj().T


@dataclass(frozen=True)
class JointProbabilities:
    """Joint detection probabilities P(A+,B+), P(A-,B-), P(A+,B-), P(A-,B+)."""

    p_pp: float
    p_mm: float
    p_pm: float
    p_mp: float

    def __post_init__(self):
        values = self.as_tuple()
        if any(not (-PROB_TOL <= v <= 1 + PROB_TOL) for v in values):
            raise ValueError(f"probabilities out of [0, 1]: {values}")
        if abs(sum(values) - 1) > PROB_TOL:
            raise ValueError(f"probabilities sum to {sum(values)!r}, expected 1")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.p_pp, self.p_mm, self.p_pm, self.p_mp)

    def single(self) -> dict[str, float]:
        """Marginal single-detection probabilities."""
        return {
            "A+": self.p_pp + self.p_pm,
            "A-": self.p_mm + self.p_mp,
            "B+": self.p_pp + self.p_mp,
            "B-": self.p_mm + self.p_pm,
        }


def joint_probabilities(rho_out) -> JointProbabilities:
    diag = np.real(np.diag(check_state(rho_out)))
    diag = np.clip(diag, 0.0, 1.0)
    return JointProbabilities(
        p_pp=float(diag[IDX_PP]),
        p_mm=float(diag[IDX_MM]),
        p_pm=float(diag[IDX_PM]),
        p_mp=float(diag[IDX_MP]),
    )


def correlation_E(probs: JointProbabilities) -> float:
    return probs.p_pp + probs.p_mm - probs.p_pm - probs.p_mp


def correlation_function(
    rho=None, delta: float = 0.0, method: str = "resonant", phi_D: float = 0.0
) -> Callable[[float, float], float]:
    """``E(phi_A, phi_B)`` for input ``rho`` (Bell state by default)."""
    rho = bell_input_state() if rho is None else check_state(rho)

    def E(phi_A: float, phi_B: float) -> float:
        t_a, t_b = side_transforms(PhaseSettings(phi_D, phi_A, phi_B), delta, method)
        return correlation_E(joint_probabilities(propagate(rho, t_a, t_b)))

    return E


# a = 0, a' = pi/2, b = pi/4, b' = 3pi/4: optimal for E = cos(phi_A - phi_B)
# with the sign pattern of chsh_value
DEFAULT_CHSH_SETTINGS = (
    (0.0, math.pi / 4),
    (0.0, 3 * math.pi / 4),
    (math.pi / 2, math.pi / 4),
    (math.pi / 2, 3 * math.pi / 4),
)


def chsh_value(E: Callable[[float, float], float], settings: Sequence = DEFAULT_CHSH_SETTINGS) -> float:
    """``S = E(a,b) - E(a,b') + E(a',b) + E(a',b')``.

    ``settings`` lists the phase pairs ``(a,b), (a,b'), (a',b), (a',b')``.
    """
    (a, b), (a1, b1), (a2, b2), (a3, b3) = settings
    return E(a, b) - E(a1, b1) + E(a2, b2) + E(a3, b3)


# --- fringe offsets ---------------------------------------------------------


def _fringe(delta: float, dphi: np.ndarray, method: str, rabi_frequency: float, rho) -> np.ndarray:
    """E as a function of phi_A - phi_B (phi_B = phi_D = 0), vectorised."""
    make = UNITARY_METHODS[method]
    deflector = BraggPulse.deflector(0.0, rabi_frequency)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d_a = make(deflector, delta)
        d_b = make(deflector, -delta)
        t_b = make(BraggPulse.splitter(0.0, rabi_frequency), -delta) @ d_b
        # splitter phase enters as conj(F(phi)) S0 F(phi) with F = diag(e^{-i phi/2}, e^{i phi/2})
        s0 = make(BraggPulse.splitter(0.0, rabi_frequency), delta)
    f = np.exp(-0.5j * np.asarray(dphi))
    s = np.empty((len(dphi), 2, 2), dtype=complex)
    s[:, 0, 0] = s0[0, 0]
    s[:, 1, 1] = s0[1, 1]
    s[:, 0, 1] = s0[0, 1] * f**2
    s[:, 1, 0] = s0[1, 0] / f**2
    t_a = s @ d_a
    full = np.einsum("nij,kl->nikjl", t_a, t_b).reshape(len(dphi), 4, 4)
    out = full @ rho @ np.conj(np.transpose(full, (0, 2, 1)))
    p = np.real(np.diagonal(out, axis1=1, axis2=2))
    return p[:, IDX_PP] + p[:, IDX_MM] - p[:, IDX_PM] - p[:, IDX_MP]


def fringe_shift(
    delta: float,
    method: str = "exact",
    rabi_frequency: float = RABI_FREQUENCY,
    n_phase: int = 720,
    rho=None,
) -> tuple[float, float]:
    """Phase offset and visibility of ``E(phi_A - phi_B)``.

    The fringe is sampled on a uniform grid over one period and its first
    harmonic gives ``E ~ V cos(dphi + offset)``; for a uniform full-period
    grid this is the least-squares cosine fit, and ``-offset`` is its
    arg-max.  Returns ``(offset, V)`` with ``offset`` wrapped to (-pi, pi].
    """
    rho = bell_input_state() if rho is None else check_state(rho)
    dphi = np.arange(n_phase) * (2 * np.pi / n_phase)
    e = _fringe(delta, dphi, method, rabi_frequency, rho)
    z = 2 * np.mean(e * np.exp(-1j * dphi))
    visibility = abs(z)
    if visibility < 1e-6:
        raise FitError(
            "fringe visibility below 1e-6; offset undefined",
            {"visibility": visibility, "delta": delta, "method": method},
        )
    return float(np.angle(z)), float(visibility)


def phase_offset(
    mode_set: ModeSet,
    pulses: tuple[BraggPulse, BraggPulse] | None = None,
    method: str = "first_order",
    n_steps: int = 16,
) -> float:
    """Fringe offset (rad) added to phi_A - phi_B by the mode set's detuning.

    ``first_order`` is the closed form ``-2 pi delta / Omega``.  ``exact``
    scans the fringe built from exact unitaries and follows the offset
    continuously from ``delta = 0`` so it is not wrapped.
    """
    if pulses is None:
        pulses = (BraggPulse.deflector(), BraggPulse.splitter())
    deflector, splitter = pulses
    if deflector.role is not PulseRole.DEFLECTOR or splitter.role is not PulseRole.SPLITTER:
        raise ValueError("phase_offset needs a (deflector, splitter) pulse pair")
    if deflector.rabi_frequency != splitter.rabi_frequency:
        raise ValueError("deflector and splitter must share the Rabi frequency")
    omega = deflector.rabi_frequency
    delta = mode_set.detuning
    if method == "first_order":
        return -2 * math.pi * delta / omega
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")
    if delta == 0:
        return 0.0
    previous = 0.0
    for k in range(1, n_steps + 1):
        raw, _ = fringe_shift(delta * k / n_steps, "exact", omega)
        previous = raw + 2 * math.pi * round((previous - raw) / (2 * math.pi))
    return previous


# --- Hong-Ou-Mandel ---------------------------------------------------------


def hom_input_state(overlap: float = 1.0) -> np.ndarray:
    """Two atoms in ``p''`` and ``-p''`` with wave-packet overlap in [0, 1].

    Basis: particle 1 mode ⊗ particle 2 mode, each in ``{p'', -p''}``.
    ``overlap = 1`` is the symmetrised (indistinguishable) boson state;
    ``overlap = 0`` an equal mixture of the two labelled product states.
    """
    if not 0 <= overlap <= 1:
        raise ValueError("overlap must lie in [0, 1]")
    ket_12 = np.zeros(4, dtype=complex)
    ket_21 = np.zeros(4, dtype=complex)
    ket_12[1] = 1.0
    ket_21[2] = 1.0
    sym = (ket_12 + ket_21) / math.sqrt(2)
    distinguishable = 0.5 * (np.outer(ket_12, ket_12) + np.outer(ket_21, ket_21))
    return overlap * np.outer(sym, sym.conj()) + (1 - overlap) * distinguishable


def hom_joint_probability(rho, splitter=None) -> float:
    """Probability that the two atoms leave through different ports C+, C-.

    Both particles cross the same splitter (resonant 50:50 by default).
    """
    if splitter is None:
        splitter = resonant_unitary(BraggPulse.splitter())
    u = check_unitary(splitter)
    full = np.kron(u, u)
    out = full @ check_state(rho) @ full.conj().T
    return float(np.real(out[1, 1] + out[2, 2]))


def standard_pulses(rabi_frequency: float = RABI_FREQUENCY) -> tuple[BraggPulse, BraggPulse]:
    return BraggPulse.deflector(0.0, rabi_frequency), BraggPulse.splitter(0.0, rabi_frequency)


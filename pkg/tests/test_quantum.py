import math
from contextlib import nullcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fourmode.constants import HBAR, HE4_MASS, RABI_FREQUENCY
from fourmode.errors import FitError, InvalidStateError, MomentumConditionError, NonUnitaryError
from fourmode.quantum import (
    DEFAULT_CHSH_SETTINGS,
    IDX_MM,
    IDX_MP,
    IDX_PM,
    IDX_PP,
    BraggPulse,
    JointProbabilities,
    ModeSet,
    PhaseSettings,
    PulseRole,
    bell_input_state,
    check_state,
    check_unitary,
    chsh_value,
    correlation_E,
    correlation_function,
    detuned_unitary_exact,
    detuned_unitary_first_order,
    detuning_from_velocities,
    fringe_shift,
    hom_input_state,
    hom_joint_probability,
    interferometer_transform,
    joint_probabilities,
    mixed_input_state,
    pair_state,
    phase_offset,
    propagate,
    purity,
    resonant_unitary,
    side_transforms,
)

phases = st.floats(-2 * math.pi, 2 * math.pi, allow_nan=False)
ratios = st.floats(-3.0, 3.0, allow_nan=False)


def custom_pulse(area, phi=0.0):
    return BraggPulse(RABI_FREQUENCY, area / RABI_FREQUENCY, phi)


# --- pulses ------------------------------------------------------------------


def test_pulse_roles_enforce_area():
    assert BraggPulse.deflector().area == pytest.approx(math.pi)
    assert BraggPulse.splitter().area == pytest.approx(math.pi / 2)
    with pytest.raises(ValueError):
        BraggPulse(RABI_FREQUENCY, 1.01 * math.pi / RABI_FREQUENCY, 0.0, PulseRole.DEFLECTOR)
    with pytest.raises(ValueError):
        BraggPulse(RABI_FREQUENCY, -1.0)
    with pytest.raises(ValueError):
        BraggPulse(-1.0, 1.0)


@pytest.mark.parametrize("area, phi, expected", [
    (math.pi, 0.0, np.array([[0, -1j], [-1j, 0]])),
    (math.pi / 2, 0.0, np.array([[1, -1j], [-1j, 1]]) / math.sqrt(2)),
    (0.0, 1.3, np.eye(2)),
])
def test_resonant_unitary_examples(area, phi, expected):
    np.testing.assert_allclose(resonant_unitary(custom_pulse(area, phi)), expected, atol=1e-15)


@given(area=st.floats(0, 4 * math.pi), phi=phases, ratio=ratios)
def test_all_unitaries_are_unitary(area, phi, ratio):
    pulse = custom_pulse(area, phi)
    delta = ratio * RABI_FREQUENCY
    for u in (resonant_unitary(pulse), detuned_unitary_exact(pulse, delta)):
        check_unitary(u)
    with pytest.warns(UserWarning) if abs(ratio) >= 1 else nullcontext():
        check_unitary(detuned_unitary_first_order(pulse, delta))


def test_check_unitary_rejects():
    with pytest.raises(NonUnitaryError):
        check_unitary(np.array([[1, 0], [0, 2]]))
    with pytest.raises(NonUnitaryError):
        check_unitary(np.eye(3))


def test_first_order_examples():
    pi_pulse = BraggPulse.deflector()
    np.testing.assert_allclose(detuned_unitary_first_order(pi_pulse, 0.0), resonant_unitary(pi_pulse), atol=1e-15)
    delta = math.pi / pi_pulse.duration  # delta t = pi
    with pytest.warns(UserWarning):
        u = detuned_unitary_first_order(pi_pulse, delta)
    np.testing.assert_allclose(u, [[0, -1], [1, 0]], atol=1e-12)


def test_first_order_phase_shift_of_off_diagonals():
    pulse = BraggPulse.deflector()
    delta = 0.18 * pulse.rabi_frequency
    u = detuned_unitary_first_order(pulse, delta)
    shift = delta * pulse.duration / 2
    assert np.angle(u[0, 1]) == pytest.approx(np.angle(-1j) - shift)
    assert np.angle(u[1, 0]) == pytest.approx(np.angle(-1j) + shift)


@given(area=st.floats(0, 4 * math.pi), phi=phases)
def test_exact_reduces_to_resonant(area, phi):
    pulse = custom_pulse(area, phi)
    np.testing.assert_allclose(detuned_unitary_exact(pulse, 0.0), resonant_unitary(pulse), atol=1e-12)


def test_exact_without_coupling_is_free_evolution():
    pulse = BraggPulse(0.0, 1e-4, 0.7)
    delta = 2 * math.pi * 3e3
    u = detuned_unitary_exact(pulse, delta)
    assert u[0, 1] == 0 and u[1, 0] == 0
    assert abs(u[0, 0]) == pytest.approx(1) and abs(u[1, 1]) == pytest.approx(1)


def _distances(pulse, ratios):
    out = []
    for r in ratios:
        diff = np.abs(detuned_unitary_exact(pulse, r * pulse.rabi_frequency)
                      - detuned_unitary_first_order(pulse, r * pulse.rabi_frequency))
        out.append((diff.max(), max(diff[0, 1], diff[1, 0])))
    return out


FIRST_ORDER_DIAGONAL = (
    "the exact pi pulse keeps a diagonal term (delta/W) sin(Wt/2), linear in delta/Omega, "
    "which the first-order matrix omits; the full-matrix distance is about delta/Omega"
)


@pytest.mark.xfail(strict=True, reason=FIRST_ORDER_DIAGONAL)
def test_exact_close_to_first_order_at_small_detuning():
    pulse = BraggPulse.deflector()
    (full, _), = _distances(pulse, [0.01])
    assert full < 1e-3


@pytest.mark.xfail(strict=True, reason=FIRST_ORDER_DIAGONAL)
def test_exact_minus_first_order_scales_quadratically():
    (small, _), (large, _) = _distances(BraggPulse.deflector(), [1e-3, 1e-2])
    c = small / 1e-3**2
    assert 0.5 * c * 1e-2**2 <= large <= 2 * c * 1e-2**2


def test_exact_minus_first_order_diagonal_is_linear():
    (small, _), (large, _) = _distances(BraggPulse.deflector(), [1e-3, 1e-2])
    assert large / small == pytest.approx(10, rel=0.01)
    assert large == pytest.approx(1e-2, rel=0.01)


def test_exact_minus_first_order_off_diagonal_is_quadratic():
    (_, small), (_, large) = _distances(BraggPulse.deflector(), [1e-3, 1e-2])
    c = small / 1e-3**2
    assert 0.5 * c * 1e-2**2 <= large <= 2 * c * 1e-2**2
    assert large < 1e-3


# --- interferometer transforms -------------------------------------------------


def test_interferometer_transform_zero_phases():
    t = interferometer_transform(resonant_unitary(BraggPulse.deflector()), resonant_unitary(BraggPulse.splitter()))
    np.testing.assert_allclose(t, -np.array([[1, 1j], [1j, 1]]) / math.sqrt(2), atol=1e-15)
    np.testing.assert_allclose(interferometer_transform(np.eye(2), np.eye(2)), np.eye(2))


@given(phi_d=phases, phi_a=phases)
def test_interferometer_transform_with_phases(phi_d, phi_a):
    t = interferometer_transform(resonant_unitary(BraggPulse.deflector(phi_d)),
                                 resonant_unitary(BraggPulse.splitter(phi_a)))
    expected = -np.array([
        [np.exp(-1j * (phi_a - phi_d)), 1j * np.exp(-1j * phi_d)],
        [1j * np.exp(1j * phi_d), np.exp(1j * (phi_a - phi_d))],
    ]) / math.sqrt(2)
    np.testing.assert_allclose(t, expected, atol=1e-12)


def test_interferometer_transform_rejects_non_unitary():
    with pytest.raises(NonUnitaryError):
        interferometer_transform(np.eye(2) * 2, np.eye(2))


@pytest.mark.parametrize("ratio", [0.05, 0.1, 0.18])
def test_first_order_side_transforms_closed_form(ratio):
    pd, pa, pb = 0.3, 1.1, -0.4
    x = math.pi * ratio / 4
    t_a, t_b = side_transforms(PhaseSettings(pd, pa, pb), ratio * RABI_FREQUENCY, "first_order")

    def closed(phi, diag, off):
        return -np.array([
            [np.exp(-1j * (phi - pd - diag)), 1j * np.exp(-1j * (pd + off))],
            [1j * np.exp(1j * (pd + off)), np.exp(1j * (phi - pd - diag))],
        ]) / math.sqrt(2)

    for t, m in ((t_a, closed(pa, x, 3 * x)), (t_b, closed(pb, -x, -3 * x))):
        g = t[0, 0] / m[0, 0]  # equal up to a global phase
        assert abs(g) == pytest.approx(1)
        np.testing.assert_allclose(t, g * m, atol=1e-12)


# --- states ----------------------------------------------------------------------


def test_bell_and_mixed_states():
    bell, mixed = bell_input_state(), mixed_input_state()
    assert np.trace(bell).real == pytest.approx(1)
    assert purity(bell) == pytest.approx(1)
    assert purity(mixed) == pytest.approx(0.5)
    assert bell[IDX_PM, IDX_MP] == pytest.approx(0.5)
    assert mixed[IDX_PM, IDX_MP] == 0


def test_check_state_rejects():
    with pytest.raises(InvalidStateError):
        check_state(np.eye(4))  # trace 4
    bad = np.diag([1.5, -0.5, 0, 0])
    with pytest.raises(InvalidStateError):
        check_state(bad)
    with pytest.raises(InvalidStateError):
        check_state(np.eye(2))


def test_pair_state_weights_are_populations():
    rho = pair_state(1.0, 0.5)
    assert rho[IDX_PM, IDX_PM].real == pytest.approx(2 / 3)
    assert rho[IDX_MP, IDX_MP].real == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        pair_state(0.0, 0.0)


# --- propagation and probabilities -----------------------------------------------


def test_propagate_identity():
    rho = bell_input_state()
    np.testing.assert_allclose(propagate(rho, np.eye(2), np.eye(2)), rho)


def test_propagate_rejects_non_unitary():
    with pytest.raises(NonUnitaryError):
        propagate(bell_input_state(), 2 * np.eye(2), np.eye(2))


@pytest.mark.parametrize("dphi, expected", [
    (0.0, (0.5, 0.0, 0.0, 0.5)),
    (math.pi, (0.0, 0.5, 0.5, 0.0)),
    (math.pi / 2, (0.25, 0.25, 0.25, 0.25)),
])
def test_bell_resonant_diagonal(dphi, expected):
    t_a, t_b = side_transforms(PhaseSettings(0.0, dphi, 0.0))
    diag = np.real(np.diag(propagate(bell_input_state(), t_a, t_b)))
    np.testing.assert_allclose(diag[[IDX_PP, IDX_PM, IDX_MP, IDX_MM]], expected, atol=1e-12)


@given(phi_d=phases, phi_a=phases, phi_b=phases)
def test_mixed_state_gives_quarters(phi_d, phi_a, phi_b):
    t_a, t_b = side_transforms(PhaseSettings(phi_d, phi_a, phi_b))
    p = joint_probabilities(propagate(mixed_input_state(), t_a, t_b))
    np.testing.assert_allclose(p.as_tuple(), 0.25, atol=1e-12)
    assert abs(correlation_E(p)) < 1e-12


@settings(max_examples=50)
@given(phi_d=phases, phi_a=phases, phi_b=phases, ratio=st.floats(-1, 1), method=st.sampled_from(
    ["resonant", "first_order", "exact"]), weight=st.floats(0.01, 1), coherent=st.booleans())
def test_probabilities_sum_to_one(phi_d, phi_a, phi_b, ratio, method, weight, coherent):
    t_a, t_b = side_transforms(PhaseSettings(phi_d, phi_a, phi_b), ratio * RABI_FREQUENCY, method)
    p = joint_probabilities(propagate(pair_state(1.0, weight, coherent), t_a, t_b))
    assert sum(p.as_tuple()) == pytest.approx(1, abs=1e-12)
    assert all(0 <= x <= 1 for x in p.as_tuple())


@given(phi_d=phases, phi_a=phases, phi_b=phases, shift=phases)
def test_fringe_depends_only_on_phase_difference(phi_d, phi_a, phi_b, shift):
    e1 = correlation_function(phi_D=phi_d)(phi_a, phi_b)
    e2 = correlation_function(phi_D=0.0)(phi_a + shift, phi_b + shift)
    assert e1 == pytest.approx(math.cos(phi_a - phi_b), abs=1e-12)
    assert e2 == pytest.approx(e1, abs=1e-12)


@given(phi_a=phases, phi_b=phases)
def test_single_detection_marginals_are_half(phi_a, phi_b):
    t_a, t_b = side_transforms(PhaseSettings(0.0, phi_a, phi_b))
    single = joint_probabilities(propagate(bell_input_state(), t_a, t_b)).single()
    for value in single.values():
        assert value == pytest.approx(0.5, abs=1e-12)


def test_first_order_fringe_offset_in_probabilities():
    delta = 2 * math.pi * 1e3
    omega = RABI_FREQUENCY
    for dphi in np.linspace(-math.pi, math.pi, 13):
        t_a, t_b = side_transforms(PhaseSettings(0.0, dphi, 0.0), delta, "first_order")
        p = joint_probabilities(propagate(bell_input_state(), t_a, t_b))
        arg = (dphi - 2 * math.pi * delta / omega) / 2
        assert p.p_pp == pytest.approx(math.cos(arg) ** 2 / 2, abs=1e-12)
        assert p.p_pm == pytest.approx(math.sin(arg) ** 2 / 2, abs=1e-12)


def test_joint_probabilities_validation():
    with pytest.raises(ValueError):
        JointProbabilities(0.5, 0.5, 0.5, 0.0)
    with pytest.raises(ValueError):
        JointProbabilities(1.2, -0.2, 0.0, 0.0)


@pytest.mark.parametrize("probs, expected", [((0.5, 0.5, 0, 0), 1.0), ((0.25,) * 4, 0.0), ((0, 0, 0.5, 0.5), -1.0)])
def test_correlation_E_examples(probs, expected):
    assert correlation_E(JointProbabilities(*probs)) == expected


# --- mode sets and detuning ------------------------------------------------------------


def test_detuning_formula():
    assert detuning_from_velocities(25.0, 25.0) == 0.0
    delta = detuning_from_velocities(27.0, 23.0)
    assert delta == pytest.approx(HE4_MASS * (27.0**2 - 23.0**2) * 1e-6 / (2 * HBAR))
    # quoted 0.9 kHz; the direct value is about 1.0 kHz
    assert 0.9e3 <= delta / (2 * math.pi) <= 1.05e3
    assert 2.9e3 <= detuning_from_velocities(31.1, 18.9) / (2 * math.pi) <= 3.1e3


def test_detuning_rejects_momentum_violation():
    with pytest.raises(MomentumConditionError):
        detuning_from_velocities(27.0, 24.0)


def test_mode_set_from_velocity():
    m = ModeSet.from_velocity(29.1, label=2)
    assert m.v_pprime == pytest.approx(20.9)
    assert m.detuning > 0
    with pytest.raises(ValueError):
        ModeSet(27.0, 24.0, 1.0)


# --- phase offsets ------------------------------------------------------------------------


@pytest.mark.parametrize("method", ["resonant", "first_order", "exact"])
def test_fringe_offset_zero_detuning(method):
    offset, vis = fringe_shift(0.0, method)
    assert abs(offset) < 1e-12 and vis == pytest.approx(1.0)


def test_degenerate_mode_set_is_rejected():
    with pytest.raises(ValueError):
        ModeSet.from_velocity(25.0)


def test_phase_offset_first_order_example():
    omega = RABI_FREQUENCY
    m = ModeSet.from_velocity(27.0)
    delta_quoted = 2 * math.pi * 0.9e3
    assert -2 * math.pi * delta_quoted / omega == pytest.approx(math.radians(-64.8))
    assert phase_offset(m, method="first_order") == pytest.approx(-2 * math.pi * m.detuning / omega, rel=1e-15)


def test_exact_offsets_frozen():
    # oracle: fringe scan with exact unitaries (720 points); frozen values in degrees
    exact = [math.degrees(phase_offset(ModeSet.from_velocity(v), method="exact")) for v in (27.0, 29.1, 31.1)]
    np.testing.assert_allclose(exact, [-48.00, -92.54, -123.91], atol=0.01)


def test_fringe_shift_of_resonant_fringe_is_zero():
    offset, vis = fringe_shift(0.0, "resonant")
    assert abs(offset) < 1e-12 and vis == pytest.approx(1.0)


def test_fringe_shift_raises_without_fringe():
    with pytest.raises(FitError):
        fringe_shift(0.0, "resonant", rho=mixed_input_state())


def test_phase_offset_rejects_bad_pulses():
    with pytest.raises(ValueError):
        phase_offset(ModeSet.from_velocity(27.0), (BraggPulse.splitter(), BraggPulse.splitter()))
    with pytest.raises(ValueError):
        phase_offset(ModeSet.from_velocity(27.0), method="second_order")


# --- HOM ---------------------------------------------------------------------------------


@pytest.mark.parametrize("overlap", [0.0, 0.25, 0.5, 1.0])
def test_hom_probability_versus_overlap(overlap):
    assert hom_joint_probability(hom_input_state(overlap)) == pytest.approx((1 - overlap) / 2, abs=1e-12)


def test_hom_distinguishable_by_permanent_oracle():
    # independent oracle: amplitudes of two labelled particles through a 50:50 splitter
    u = resonant_unitary(BraggPulse.splitter())
    amp_12 = u[0, 0] * u[1, 1]  # particle from input 0 to output 0, from input 1 to output 1
    amp_21 = u[1, 0] * u[0, 1]
    distinguishable = abs(amp_12) ** 2 + abs(amp_21) ** 2
    bosons = abs(amp_12 + amp_21) ** 2  # permanent of the 2x2 submatrix
    assert hom_joint_probability(hom_input_state(0.0)) == pytest.approx(distinguishable)
    assert hom_joint_probability(hom_input_state(1.0)) == pytest.approx(bosons, abs=1e-15)


# --- CHSH --------------------------------------------------------------------------------


def test_chsh_optimum():
    assert chsh_value(correlation_function()) == pytest.approx(2 * math.sqrt(2), abs=1e-12)


def test_chsh_sign_pattern_needs_b_prime_three_quarter_pi():
    # with S = E(a,b) - E(a,b') + E(a',b) + E(a',b'), b' = -pi/4 cancels to 0
    settings_minus = ((0, math.pi / 4), (0, -math.pi / 4), (math.pi / 2, math.pi / 4), (math.pi / 2, -math.pi / 4))
    assert chsh_value(correlation_function(), settings_minus) == pytest.approx(0, abs=1e-12)
    assert DEFAULT_CHSH_SETTINGS[1] == (0.0, 3 * math.pi / 4)


def test_chsh_mixed_is_zero():
    assert abs(chsh_value(correlation_function(mixed_input_state()))) < 1e-12


@given(v=st.floats(0, 1))
def test_chsh_linear_in_visibility(v):
    rho = v * bell_input_state() + (1 - v) * mixed_input_state()
    assert chsh_value(correlation_function(rho)) == pytest.approx(v * 2 * math.sqrt(2), abs=1e-12)


def test_asymmetric_source_visibility():
    a = 0.6
    rho = pair_state(1.0, a)
    offset, vis = fringe_shift(0.0, "resonant", rho=rho)
    assert vis == pytest.approx(2 * math.sqrt(a) / (1 + a), abs=1e-12)

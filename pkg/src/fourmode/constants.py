"""Physical constants and fixed experimental parameters.

Velocities throughout the package are in mm/s, measured in the
centre-of-mass frame of the emitted pairs, unless a name says otherwise.
"""

import math

HBAR = 1.054571817e-34  # J s (CODATA 2018, exact)
HE4_MASS = 6.6464731e-27  # kg

# Bragg momentum condition in velocity form: v_p + v_p' = BRAGG_VELOCITY_SUM.
BRAGG_VELOCITY_SUM = 50.0  # mm/s
DEGENERATE_VELOCITY = BRAGG_VELOCITY_SUM / 2

COM_VELOCITY = (0.0, 0.0, 94.0)  # mm/s, lab frame

PI_PULSE_DURATION = 100e-6  # s
HALF_PI_PULSE_DURATION = 50e-6  # s
RABI_FREQUENCY = math.pi / PI_PULSE_DURATION  # rad/s, Omega/2pi = 5 kHz

DEFLECTOR_START = 1100e-6  # s
SPLITTER_START = 1950e-6  # s, HOM closing time

DETECTION_EFFICIENCY = 0.25

# velocities of mode p for the three analysed mode sets
MODE_SET_VELOCITIES = (27.0, 29.1, 31.1)  # mm/s
# detunings quoted alongside them (delta / 2pi, Hz), kept for comparison
QUOTED_DETUNINGS_HZ = (0.9e3, 1.9e3, 2.9e3)
# fringe offsets obtained with the exact two-mode evolution (degrees)
QUOTED_EXACT_OFFSETS_DEG = (-43.0, -94.0, -144.0)

SHOTS_JOINT = 2218
SHOTS_DISTRIBUTION = 1169

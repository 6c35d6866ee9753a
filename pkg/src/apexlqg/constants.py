"""Physical constants and the calibrated reference values used by the default scenarios."""

import numpy as np

K_B = 1.380649e-23  # J/K
TWO_PI = 2.0 * np.pi

# calibrated oscillator parameters, all given as frequency/2pi in Hz
GAMMA_HZ = 660.0
F_APEX_HZ = 50e3
F_Z_HZ = 46e3
F_Y_HZ = 159e3
F_WELL_HZ = 65e3

# electrode force per volt (N/V)
CF_X = -5.1e-13
CF_Z = 1.4e-13

# detection sensitivities (V/m)
C_XX = 2.7e6
C_ZZ = 1.1e6
C_CROSS = 7.7e4

# 210 nm silica sphere
PARTICLE_DIAMETER = 210e-9
SILICA_DENSITY = 2200.0
T_ROOM = 293.0

CONTROLLER_RATE_HZ = 31.25e6
LOOP_DELAY_S = 400e-9
T_AVG_S = 3e-3

APEX_MAX_V = 0.1
DETECTION_DRIFT_RATE_V_S = 1e-4


def sphere_mass(diameter=PARTICLE_DIAMETER, density=SILICA_DENSITY):
    r = 0.5 * diameter
    return density * 4.0 / 3.0 * np.pi * r**3

"""
Shared constants for chipgate: environment names, physical reference values and
the static trap configuration of the reference chip.
"""

VERSION = "0.4.0"

CHIPGATE_DEBUG_ENV = "CHIPGATE_DEBUG"
CHIPGATE_LOG_LEVEL_ENV = "CHIPGATE_LOG_LEVEL"
CHIPGATE_LOG_FORMAT_ENV = "CHIPGATE_LOG_FORMAT"
CHIPGATE_LOG_FILE_ENV = "CHIPGATE_LOG_FILE"
CHIPGATE_HISTORY_DIR_ENV = "CHIPGATE_HISTORY_DIR"
CHIPGATE_OUTPUT_DIR_ENV = "CHIPGATE_OUTPUT_DIR"
CHIPGATE_JOBS_ENV = "CHIPGATE_JOBS"
CHIPGATE_SKIP_DOTENV_ENV = "CHIPGATE_SKIP_AUTO_DOTENV"
CHIPGATE_TELEMETRY_ENABLED_ENV = "CHIPGATE_TELEMETRY_ENABLED"
CHIPGATE_TELEMETRY_FILE_ENV = "CHIPGATE_TELEMETRY_FILE"

# Atomic data (87Rb), values not available from scipy.constants
RB87_MASS_U = 86.909180527
G_J = 2.00233113
G_I = -0.0009951414  # nuclear g-factor in units of mu_B
NUCLEAR_SPIN = 1.5
HYPERFINE_SPLITTING_HZ = 6.834682610904e9
# Static scalar polarizability: h * 0.0794 Hz/(V/cm)^2
ALPHA_DC = 5.2612e-39  # C m^2 / V

# Gold wires and silicon substrate
GOLD_CONDUCTIVITY = 4.5e7  # S/m
SILICON_PERMITTIVITY = 11.9
MICROWAVE_FREQUENCY_HZ = 6.8e9

# Drive amplitudes at lambda = 1
DRIVE_VOLTAGE_PEAK = 1.9895  # V
DRIVE_CURRENT_PEAK = 15.343e-3  # A
DRIVE_DETUNING_HZ = 29.4e6

# Compensation ramps: B_x(t) and I_C(t) at lambda0 = 0 and their slopes
COMPENSATION_BX_OFFSET_G = -4.464
COMPENSATION_BX_SLOPE_G = 0.036
COMPENSATION_IC_OFFSET_MA = -0.813
COMPENSATION_IC_SLOPE_MA = -0.039

# Trap frequencies of the static and dressed configuration
TRAP_OMEGA_X_HZ = 4.432e3
TRAP_OMEGA_PERP_HZ = 77.46e3
TRAP_OMEGA_ONE_HZ = 5.448e3
TRAP_OMEGA_ZERO_HZ = 4.775e3
WELL_SEPARATION = 1.32e-6  # m
TRAP_FIELD_G = 3.230

SCATTERING_LENGTH = 5.4e-9  # m
OLSHANII_COEFFICIENT = 1.46

# Error budget defaults
SURFACE_LOSS_RATE = 0.9  # 1/s
FIELD_NOISE_RMS = 1e-9  # T (0.01 mG)
SCATTERING_LENGTH_CONTRAST = 0.02
CPW_CURRENT_DENSITY_LIMIT = 1e11  # A/m^2
LOWER_WIRE_CURRENT_DENSITY_LIMIT = 2e11  # A/m^2
LARGE_DETUNING_WARN = 1e-2
PERTURBATION_LIMIT = 0.3
QUASI1D_HEADROOM = 0.7
RELATIVE_CURRENT_STABILITY = 1e-5
CURRENT_ACCURACY = 1e-6  # A
FIELD_ACCURACY = 1e-7  # T (1 mG)

# Optimized gate performance per number of oscillations N:
# (tau_g [ms], O_0, O_1, F_00, F_01, F_11, phi_g/pi) after the lambda stage,
# followed by (F_00, F_01, F_11, phi_g/pi) after the transverse stage when run.
REFERENCE_TABLE = {
    2: ((0.696, 0.996, 0.996, 0.993, 0.993, 0.960, 0.996), (0.993, 0.993, 0.987, 0.998)),
    3: ((1.110, 0.998, 0.997, 0.996, 0.996, 0.986, 0.999), (0.996, 0.996, 0.995, 0.997)),
    4: ((1.389, 0.996, 0.995, 0.991, 0.991, 0.991, 0.991), None),
    5: ((1.838, 0.999, 0.997, 0.997, 0.997, 0.991, 0.995), None),
    6: ((2.219, 0.996, 0.998, 0.992, 0.993, 0.985, 0.993), None),
}
REFERENCE_GATE_FIDELITY_N3 = 0.997

"""Array layouts shared by the compiled and pure stepping kernels.

A house is a row of doubles: a parameter row (static over a run) and a
state row (mutated in place by the kernels).  Keeping both as flat float64
rows lets the same memory be driven by either backend and serialized
without any per-house Python objects.
"""

# --- parameter row -------------------------------------------------------
P_CW = 0          # water-node heat capacity (J/degC)
P_CA = 1          # air-node heat capacity (J/degC)
P_C1 = 2          # cold heat-exchanger capacity (J/degC)
P_C2 = 3          # hot heat-exchanger capacity (J/degC)
P_HM = 4          # water<->air transfer coefficient (W/degC)
P_H1 = 5          # air<->cold-HX transfer coefficient (W/degC)
P_H2 = 6          # hot-HX<->ambient transfer coefficient (W/degC)
P_UA = 7          # wall conductance (W/degC)
P_FHM = 8         # thermometer-to-water coupling fraction (0..1)
P_A = 9           # pumped-heat prefactor (W*K)
P_LR = 10         # latent heat over gas constant (K)
P_GAMMA = 11      # compressor loss factor (>= 1)
P_WFRIC = 12      # constant friction loss (W)
P_QW = 13         # programmable water-heater injection (W)
P_QA = 14         # direct air injection (W)
P_QFIX = 15       # constant fan+pump load (W)
P_FIXWF = 16      # fraction of the fixed load injected into the water node
P_SETPOINT = 17   # thermostat setpoint (degC)
P_DBHALF = 18     # deadband half-width (degC)
P_TAU = 19        # sensor first-order lag (s)
P_LOCKOUT = 20    # compressor off->on lockout (s)
P_MINON = 21      # minimum-on time (s), 0 disables
P_INMULT = 22     # inrush peak-to-steady ratio
P_INDUR = 23      # inrush duration (s)
N_PARAMS = 24

# --- state row -----------------------------------------------------------
S_TW = 0          # water temperature (degC)
S_TA = 1          # air temperature (degC)
S_T1 = 2          # cold heat-exchanger temperature (degC)
S_T2 = 3          # hot heat-exchanger temperature (degC)
S_TMEAS = 4       # lagged thermostat-sensor temperature (degC)
S_ON = 5          # compressor flag (0.0 / 1.0)
S_LOCK = 6        # lockout time remaining (s)
S_MINON = 7       # minimum-on time remaining (s)
S_PHASE = 8       # time since last off->on transition (s)
S_TIS = 9         # time in current compressor state (s)
N_STATE = 10

# kernel status codes
OK = 0
ERR_NONFINITE = 1
ERR_T1_BAND = 2

# trajectory event kinds
EV_ON = 1
EV_OFF = -1

KELVIN = 273.15
T1_MIN_C = -50.0
T1_MAX_C = 60.0

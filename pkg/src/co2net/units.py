"""Unit conversions used at the I/O boundaries (internal values are SI)."""

ATM = 1.01325  # bar
G = 9.80665  # m/s^2
SECONDS_PER_HOUR = 3600.0


def barg_to_pa(p_barg: float) -> float:
    return (p_barg + ATM) * 1e5


def pa_to_barg(p_pa: float) -> float:
    return p_pa / 1e5 - ATM


def c_to_k(t_c: float) -> float:
    return t_c + 273.15


def k_to_c(t_k: float) -> float:
    return t_k - 273.15

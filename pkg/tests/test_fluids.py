import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from co2net import fluids
from co2net.fluids import PURE_CO2, Composition, DomainError, EosError, IdealGas, PengRobinson
from co2net.units import barg_to_pa

R = 8.314462618
MIX_96 = Composition.from_percent(96, 2, 2)
MIX_98 = Composition.from_percent(98, 1, 1)

# reference-EoS (Span-Wagner) values for pure CO2, used only as a plausibility band
SW_DENSITY = {
    (barg_to_pa(125), 283.15): 939.3,
    (barg_to_pa(170), 283.15): 965.8,
    (barg_to_pa(170), 318.15): 777.0,
    (barg_to_pa(85), 283.15): 908.7,
}
SW_PSAT_273 = 3.4851e6


# --- oracles ----------------------------------------------------------------

def pr_saturation_oracle(T):
    """Pure-CO2 PR vapour pressure by brentq on the fugacity gap, roots from numpy."""
    s = fluids.DEFAULT_SPECIES[0]
    kappa = 0.37464 + 1.54226 * s.omega - 0.26992 * s.omega ** 2
    a = 0.45723552892 * (R * s.Tc) ** 2 / s.Pc * (1 + kappa * (1 - math.sqrt(T / s.Tc))) ** 2
    b = 0.07779607390 * R * s.Tc / s.Pc

    def roots(P):
        A, B = a * P / (R * T) ** 2, b * P / (R * T)
        z = np.roots([1.0, -(1 - B), A - 3 * B * B - 2 * B, -(A * B - B * B - B ** 3)])
        z = sorted(r.real for r in z if abs(r.imag) < 1e-10 and r.real > B)
        return z, A, B

    def ln_phi(z, A, B):
        return z - 1 - math.log(z - B) - A / (2 * math.sqrt(2) * B) * math.log(
            (z + (1 + math.sqrt(2)) * B) / (z + (1 - math.sqrt(2)) * B))

    def gap(P):
        z, A, B = roots(P)
        return ln_phi(z[0], A, B) - ln_phi(z[-1], A, B)

    # scan for the three-root window, then bracket the sign change
    grid = np.geomspace(1e3, 0.999 * s.Pc, 2000)
    three = [P for P in grid if len(roots(P)[0]) == 3]
    lo, hi = three[0], three[-1]
    return brentq(gap, lo, hi, xtol=1e-3)


def ideal_enthalpy_oracle(T, T0=273.15):
    s = fluids.DEFAULT_SPECIES[0]
    cp = lambda t: R * sum(c * t ** k for k, c in enumerate(s.cp))  # noqa: E731
    return quad(cp, T0, T)[0] / s.molar_mass


# --- molar mass -------------------------------------------------------------

def test_molar_mass_pure_co2():
    assert fluids.molar_mass(PURE_CO2) == pytest.approx(0.044, rel=1e-3)


def test_molar_mass_pure_h2():
    assert fluids.molar_mass(Composition(0.0, 1.0, 0.0, 0.0)) == pytest.approx(0.002016, rel=1e-12)


def test_molar_mass_weighted_sum():
    c = Composition.from_fractions([0.98, 0.01, 0.01])
    assert fluids.molar_mass(c) == pytest.approx(0.98 * 0.04401 + 0.01 * 0.002016 + 0.01 * 0.031999, rel=1e-12)


def test_composition_rejects_bad_fractions():
    with pytest.raises(ValueError):
        Composition(1.1, -0.1, 0.0, 0.0)
    with pytest.raises(ValueError):
        Composition(0.5, 0.2, 0.0, 0.0)
    with pytest.raises(ValueError):
        Composition.from_fractions({"Ar": 1.0})


@given(st.lists(st.floats(0.0, 10.0), min_size=4, max_size=4).filter(lambda v: sum(v) > 1e-3))
def test_normalized_composition_sums_to_one(values):
    c = Composition.from_fractions(values, normalize=True)
    assert math.fsum(c.fractions) == pytest.approx(1.0, abs=1e-12)
    assert all(x >= 0.0 for x in c.fractions)


# --- density ----------------------------------------------------------------

def test_density_ideal_gas_limit():
    P, T = 1e4, 300.0
    assert fluids.density(P, T) == pytest.approx(P * 0.04401 / (R * T), rel=5e-3)


def test_dense_density_regression_and_literature_band():
    rho = fluids.density(barg_to_pa(125), 283.15)
    assert rho == pytest.approx(944.2513233282439, rel=1e-9)
    assert rho == pytest.approx(SW_DENSITY[(barg_to_pa(125), 283.15)], rel=0.05)


@pytest.mark.parametrize("PT", sorted(SW_DENSITY))
def test_density_within_five_percent_of_reference_eos(PT):
    assert fluids.density(*PT) == pytest.approx(SW_DENSITY[PT], rel=0.05)


def test_light_impurities_reduce_density():
    P, T = barg_to_pa(125), 283.15
    assert fluids.density(P, T, MIX_96) < fluids.density(P, T, MIX_98) < fluids.density(P, T)


def test_non_positive_state_is_reported():
    with pytest.raises(EosError) as err:
        fluids.density(-1.0, 300.0)
    assert err.value.P == -1.0


def test_dense_root_selection_picks_liquid_like_root():
    # 60 bar, 283.15 K is compressed liquid; 40 bar is vapour (P_sat ~ 45 bar)
    assert fluids.density(60e5, 283.15) > 700.0
    assert fluids.density(40e5, 283.15) < 200.0


@given(st.floats(barg_to_pa(80), barg_to_pa(180)), st.floats(278.15, 318.15))
def test_z_factor_identity(P, T):
    s = fluids.state(P, T)
    assert P == pytest.approx(s.z * s.rho_m * R * T, rel=1e-10)
    assert s.rho_m * fluids.molar_mass(PURE_CO2) == pytest.approx(s.rho, rel=1e-12)
    assert s.H == pytest.approx(s.e + P / s.rho, rel=1e-12)


@given(st.floats(barg_to_pa(80), barg_to_pa(180)), st.floats(278.15, 318.15))
def test_density_continuous_in_dense_region(P, T):
    rho = fluids.density(P, T)
    assert abs(fluids.density(P * (1 + 1e-6), T) - rho) / rho < 0.01
    assert abs(fluids.density(P, T * (1 + 1e-6)) - rho) / rho < 0.01
    H = fluids.enthalpy(P, T)
    assert abs(fluids.enthalpy(P, T * (1 + 1e-6)) - H) < 0.01 * abs(H) + 100.0


@given(st.floats(barg_to_pa(80), barg_to_pa(180)), st.floats(278.15, 318.15),
       st.sampled_from([PURE_CO2, MIX_98, MIX_96]))
def test_zero_fraction_species_do_not_change_properties(P, T, c):
    eos = PengRobinson()  # fresh caches
    padded = Composition(*c.fractions)
    assert eos.density(P, T, padded) == fluids.density(P, T, c)
    assert eos.enthalpy(P, T, padded) == fluids.enthalpy(P, T, c)


@given(st.floats(barg_to_pa(80), barg_to_pa(180)), st.floats(278.15, 318.15))
def test_density_derivatives_match_finite_differences(P, T):
    rho, rP, rT = fluids.DEFAULT_EOS.density_derivatives(P, T)
    hP, hT = 1e-6 * P, 1e-6 * T
    fdP = (fluids.density(P + hP, T) - fluids.density(P - hP, T)) / (2 * hP)
    fdT = (fluids.density(P, T + hT) - fluids.density(P, T - hT)) / (2 * hT)
    assert rP == pytest.approx(fdP, rel=1e-5)
    assert rT == pytest.approx(fdT, rel=1e-5)


# --- enthalpy ---------------------------------------------------------------

def test_enthalpy_ideal_gas_limit_matches_cp_integral():
    P = 1.0
    dH = fluids.enthalpy(P, 350.0) - fluids.enthalpy(P, 273.15)
    assert dH == pytest.approx(ideal_enthalpy_oracle(350.0), rel=1e-3)


def test_enthalpy_increases_with_temperature():
    assert fluids.enthalpy(10e6, 320.0) > fluids.enthalpy(10e6, 300.0)


@given(st.floats(barg_to_pa(80), barg_to_pa(180)), st.floats(278.15, 318.15))
def test_cp_positive_over_envelope(P, T):
    h = 1e-3 * T
    assert fluids.enthalpy(P, T + h) - fluids.enthalpy(P, T - h) > 0.0


# --- Joule-Thomson ----------------------------------------------------------

def test_joule_thomson_matches_isenthalpic_two_point_solve():
    P1, T1, dP = barg_to_pa(150), 300.0, -2e5
    H1 = fluids.enthalpy(P1, T1)
    T2 = brentq(lambda t: fluids.enthalpy(P1 + dP, t) - H1, 280.0, 320.0, xtol=1e-10)
    mu = fluids.joule_thomson(P1 + 0.5 * dP, T1)
    assert mu * dP == pytest.approx(T2 - T1, rel=0.01)


def test_joule_thomson_positive_for_gaseous_co2():
    assert fluids.joule_thomson(1e6, 300.0) > 0.0


def test_joule_thomson_vanishes_for_ideal_gas():
    assert abs(fluids.joule_thomson(1e3, 300.0, eos=IdealGas())) < 1e-8


def test_joule_thomson_real_gas_low_pressure_limit_is_finite():
    # a real gas keeps a finite zero-pressure JT coefficient (second virial term)
    mu = fluids.joule_thomson(1e3, 300.0)
    assert 0.5e-5 < mu < 2e-5


# --- saturation and phase boundary -----------------------------------------

def test_saturation_at_critical_temperature_is_critical_pressure():
    Tc, Pc = fluids.DEFAULT_EOS.co2_critical_point
    assert fluids.saturation_pressure(Tc) == pytest.approx(Pc, rel=1e-6)


def test_saturation_at_freezing_point_matches_oracle_and_literature():
    p = fluids.saturation_pressure(273.15)
    assert p == pytest.approx(pr_saturation_oracle(273.15), abs=2.0)
    assert p == pytest.approx(SW_PSAT_273, rel=0.05)


@pytest.mark.parametrize("T", [220.0, 250.0, 290.0, 300.0])
def test_saturation_matches_fugacity_oracle(T):
    assert fluids.saturation_pressure(T) == pytest.approx(pr_saturation_oracle(T), abs=2.0)


def test_saturation_domain():
    with pytest.raises(DomainError):
        fluids.saturation_pressure(200.0)
    with pytest.raises(DomainError):
        fluids.saturation_pressure(310.0)


@given(st.floats(216.6, 304.0), st.floats(0.01, 5.0))
def test_saturation_strictly_increasing(T, dT):
    T2 = min(T + dT, 304.1282)
    assert fluids.saturation_pressure(T2) > fluids.saturation_pressure(T)


def test_saturation_monotone_example():
    assert fluids.saturation_pressure(280.0) > fluids.saturation_pressure(270.0)


@given(st.floats(216.6, 304.1))
def test_fast_saturation_tracks_exact(T):
    assert fluids.DEFAULT_EOS.saturation_pressure_fast(T) == pytest.approx(fluids.saturation_pressure(T), rel=1e-4)


def test_is_dense_examples():
    assert fluids.is_dense(barg_to_pa(125), 283.15)
    assert not fluids.is_dense(1e5, 283.15)
    assert not fluids.is_dense(fluids.saturation_pressure(283.15) - 1e3, 283.15)
    assert fluids.is_dense(fluids.saturation_pressure(283.15) + 1e3, 283.15)


def test_is_dense_above_critical_temperature_uses_critical_pressure():
    Tc, Pc = fluids.DEFAULT_EOS.co2_critical_point
    assert fluids.is_dense(Pc, 320.0)
    assert not fluids.is_dense(Pc - 1.0, 320.0)


def test_design_envelope_grid_is_dense():
    for P in np.linspace(barg_to_pa(80), barg_to_pa(180), 50):
        for T in np.linspace(278.15, 318.15, 50):
            assert fluids.is_dense(float(P), float(T), MIX_96)


# --- parameter file ---------------------------------------------------------

def test_eos_parameter_round_trip(tmp_path):
    params = fluids.EosParameters()
    path = tmp_path / "eos.json"
    path.write_text(params.to_json())
    assert fluids.EosParameters.from_json(path) == params


def test_eos_parameter_override_and_kij_validation(tmp_path):
    path = tmp_path / "eos.json"
    path.write_text('{"kij": {"CO2-H2": 0.1}, "species": [{"name": "CO2", "Tc": 304.2}]}')
    params = fluids.EosParameters.from_json(path)
    assert params.kij[0][1] == params.kij[1][0] == 0.1
    assert params.species[0].Tc == 304.2
    bad = ((0.0, 0.1, 0, 0), (0.2, 0.0, 0, 0), (0, 0, 0.0, 0), (0, 0, 0, 0.0))
    with pytest.raises(ValueError):
        fluids.EosParameters(kij=bad)


def test_interaction_coefficient_changes_mixture_density(tmp_path):
    path = tmp_path / "eos.json"
    path.write_text('{"kij": {"CO2-H2": 0.1}}')
    eos = fluids.load_eos(path)
    P, T = barg_to_pa(125), 283.15
    assert eos.density(P, T, MIX_96) != fluids.density(P, T, MIX_96)
    assert eos.density(P, T) == fluids.density(P, T)

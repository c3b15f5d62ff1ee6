"""Thermodynamic closure for CO2-rich mixtures (CO2, H2, O2, N2).

The reference equation of state is Peng-Robinson with van der Waals one-fluid
mixing rules (optional volume translation, off by default). Anything implementing
:class:`EquationOfState` can be passed via the ``eos=`` keyword of the module
functions; :class:`IdealGas` is provided for limit checks.

All inputs and outputs are SI: pressure in Pa (absolute), temperature in K,
mass density in kg/m3, specific enthalpy in J/kg.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Protocol

import numpy as np
from scipy.interpolate import PchipInterpolator

R = 8.314462618  # J/(mol K)
SPECIES = ("CO2", "H2", "O2", "N2")
T_REF = 273.15  # ideal-gas enthalpy reference, H = 0
T_TRIPLE_CO2 = 216.592

# exact Peng-Robinson critical constants (roots of the critical conditions)
_OMEGA_A = 0.45723552892138218
_OMEGA_B = 0.07779607390388844
_SQRT2 = math.sqrt(2.0)

_FD_REL_STEP = 1e-6


class EosError(ValueError):
    """The equation of state could not be evaluated at the given state."""

    def __init__(self, message: str, P: float, T: float, composition: "Composition"):
        super().__init__(f"{message} (P={float(P):.6g} Pa, T={float(T):.6g} K, composition={composition})")
        self.message = message
        self.P = P
        self.T = T
        self.composition = composition


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Composition:
    """Mole fractions of the four supported species."""

    CO2: float = 1.0
    H2: float = 0.0
    O2: float = 0.0
    N2: float = 0.0

    def __post_init__(self):
        fr = self.fractions
        if any(not math.isfinite(x) or x < 0.0 for x in fr):
            raise ValueError(f"mole fractions must be finite and >= 0, got {fr}")
        if abs(math.fsum(fr) - 1.0) > 1e-12:
            raise ValueError(f"mole fractions must sum to 1, got sum={math.fsum(fr)!r}")

    @classmethod
    def from_fractions(cls, fractions: Mapping[str, float] | Iterable[float],
                       normalize: bool = False) -> "Composition":
        if isinstance(fractions, Mapping):
            unknown = set(fractions) - set(SPECIES)
            if unknown:
                raise ValueError(f"unsupported species: {sorted(unknown)}")
            values = [float(fractions.get(s, 0.0)) for s in SPECIES]
        else:
            values = [float(v) for v in fractions]
            if len(values) > len(SPECIES):
                raise ValueError(f"at most {len(SPECIES)} fractions, got {len(values)}")
            values += [0.0] * (len(SPECIES) - len(values))
        if normalize:
            total = math.fsum(values)
            if total <= 0.0:
                raise ValueError("fractions must have a positive sum")
            values = [v / total for v in values]
            # push rounding residue into the largest entry so the sum is exactly 1
            i = max(range(len(values)), key=values.__getitem__)
            values[i] = 1.0 - math.fsum(v for j, v in enumerate(values) if j != i)
        return cls(*values)

    @classmethod
    def from_percent(cls, *percent: float) -> "Composition":
        """``Composition.from_percent(96, 2, 2)`` -> 96 % CO2, 2 % H2, 2 % O2."""
        return cls.from_fractions([p / 100.0 for p in percent], normalize=True)

    @property
    def fractions(self) -> tuple[float, float, float, float]:
        return (self.CO2, self.H2, self.O2, self.N2)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(SPECIES, self.fractions))

    @property
    def molar_mass(self) -> float:
        return molar_mass(self)

    def __str__(self) -> str:
        return "(" + ", ".join(f"{s}={x:g}" for s, x in zip(SPECIES, self.fractions) if x) + ")"


PURE_CO2 = Composition()


@dataclass(frozen=True)
class SpeciesConstants:
    name: str
    Tc: float  # K
    Pc: float  # Pa
    omega: float
    molar_mass: float  # kg/mol
    cp: tuple[float, ...]  # ideal-gas cp/R = sum cp[k] * T**k
    volume_shift: float = 0.0  # Peneloux shift c [m3/mol], v = v_PR - c


DEFAULT_SPECIES = (
    SpeciesConstants("CO2", 304.1282, 7.3773e6, 0.22394, 0.04401,
                     (3.259, 1.356e-3, 1.502e-5, -2.374e-8, 1.056e-11)),
    SpeciesConstants("H2", 33.145, 1.2964e6, -0.219, 0.002016,
                     (2.883, 3.681e-3, -0.772e-5, 0.692e-8, -0.213e-11)),
    SpeciesConstants("O2", 154.581, 5.043e6, 0.0222, 0.031999,
                     (3.630, -1.794e-3, 0.658e-5, -0.601e-8, 0.179e-11)),
    SpeciesConstants("N2", 126.192, 3.3958e6, 0.0372, 0.028014,
                     (3.539, -0.261e-3, 0.007e-5, 0.157e-8, -0.099e-11)),
)

MOLAR_MASS = {s.name: s.molar_mass for s in DEFAULT_SPECIES}


@dataclass(frozen=True)
class EosParameters:
    """Per-species constants plus binary interaction coefficients ``kij``."""

    species: tuple[SpeciesConstants, ...] = DEFAULT_SPECIES
    kij: tuple[tuple[float, ...], ...] = ((0.0,) * 4,) * 4

    def __post_init__(self):
        names = tuple(s.name for s in self.species)
        if names != SPECIES:
            raise ValueError(f"species must be {SPECIES} in order, got {names}")
        n = len(self.species)
        if len(self.kij) != n or any(len(row) != n for row in self.kij):
            raise ValueError("kij must be a square matrix over the species")
        for i in range(n):
            if self.kij[i][i] != 0.0:
                raise ValueError("kij diagonal must be zero")
            for j in range(i):
                if self.kij[i][j] != self.kij[j][i]:
                    raise ValueError("kij must be symmetric")
        for s in self.species:
            if s.Tc <= 0 or s.Pc <= 0 or s.molar_mass <= 0:
                raise ValueError(f"non-physical constants for {s.name}")

    @classmethod
    def from_json(cls, path: str | Path) -> "EosParameters":
        """Load an override file; species not listed keep their defaults."""
        doc = json.loads(Path(path).read_text())
        by_name = {s.name: s for s in DEFAULT_SPECIES}
        for entry in doc.get("species", []):
            name = entry["name"]
            if name not in by_name:
                raise ValueError(f"unsupported species {name!r}")
            base = by_name[name]
            by_name[name] = SpeciesConstants(
                name=name,
                Tc=float(entry.get("Tc", base.Tc)),
                Pc=float(entry.get("Pc", base.Pc)),
                omega=float(entry.get("omega", base.omega)),
                molar_mass=float(entry.get("molar_mass", base.molar_mass)),
                cp=tuple(float(a) for a in entry.get("cp", base.cp)),
                volume_shift=float(entry.get("volume_shift", base.volume_shift)),
            )
        kij = doc.get("kij")
        if kij is None:
            kij = ((0.0,) * 4,) * 4
        elif isinstance(kij, Mapping):
            # {"CO2-H2": 0.1, ...}
            m = [[0.0] * 4 for _ in range(4)]
            for key, val in kij.items():
                a, b = key.split("-")
                i, j = SPECIES.index(a), SPECIES.index(b)
                m[i][j] = m[j][i] = float(val)
            kij = m
        return cls(tuple(by_name[s] for s in SPECIES), tuple(tuple(float(v) for v in row) for row in kij))

    def to_json(self) -> str:
        return json.dumps({
            "species": [
                {"name": s.name, "Tc": s.Tc, "Pc": s.Pc, "omega": s.omega,
                 "molar_mass": s.molar_mass, "cp": list(s.cp), "volume_shift": s.volume_shift}
                for s in self.species
            ],
            "kij": [list(row) for row in self.kij],
        }, indent=2)


@dataclass(frozen=True)
class FluidState:
    P: float
    T: float
    composition: Composition
    rho: float
    rho_m: float
    z: float
    H: float
    e: float
    mu_JT: float


class EquationOfState(Protocol):
    """Minimal surface the rest of the package relies on."""

    def molar_mass(self, c: Composition) -> float: ...

    def density(self, P: float, T: float, c: Composition) -> float: ...

    def density_derivatives(self, P: float, T: float, c: Composition) -> tuple[float, float, float]:
        """Return ``(rho, drho/dP at const T, drho/dT at const P)``."""
        ...

    def enthalpy(self, P: float, T: float, c: Composition) -> float: ...

    def saturation_pressure(self, T: float) -> float: ...

    @property
    def co2_critical_point(self) -> tuple[float, float]: ...


@dataclass
class _Mix:
    idx: tuple[int, ...]
    x: tuple[float, ...]
    mu: float
    b: float
    shift: float
    sqrt_ac: tuple[float, ...]
    kappa: tuple[float, ...]
    Tc: tuple[float, ...]
    m: tuple[tuple[float, ...], ...]  # 1 - kij over active species
    cp: tuple[float, ...]  # molar-fraction-weighted cp/R coefficients


def _solve_cubic(c2: float, c1: float, c0: float) -> list[float]:
    """Real roots of z^3 + c2 z^2 + c1 z + c0, ascending, Newton-polished."""
    p = c1 - c2 * c2 / 3.0
    q = 2.0 * c2 ** 3 / 27.0 - c2 * c1 / 3.0 + c0
    disc = 0.25 * q * q + p ** 3 / 27.0
    shift = -c2 / 3.0
    if disc > 0.0:
        s = math.sqrt(disc)
        roots = [shift + math.copysign(abs(-0.5 * q + s) ** (1 / 3), -0.5 * q + s)
                 + math.copysign(abs(-0.5 * q - s) ** (1 / 3), -0.5 * q - s)]
    elif p == 0.0:
        roots = [shift]
    else:
        r = 2.0 * math.sqrt(-p / 3.0)
        arg = max(-1.0, min(1.0, 3.0 * q / (p * r)))
        phi = math.acos(arg) / 3.0
        roots = sorted(shift + r * math.cos(phi - 2.0 * math.pi * k / 3.0) for k in range(3))
    out = []
    for z in roots:
        for _ in range(3):
            f = ((z + c2) * z + c1) * z + c0
            df = (3.0 * z + 2.0 * c2) * z + c1
            if df == 0.0:
                break
            dz = f / df
            z -= dz
            if abs(dz) <= 1e-16 * max(1.0, abs(z)):
                break
        out.append(z)
    return out


class PengRobinson:
    """Peng-Robinson mixture EoS; optional per-species volume translation.

    The default shifts are zero: untranslated PR already reproduces dense CO2
    densities within about 1 % at pipeline conditions.
    """

    def __init__(self, params: EosParameters | None = None, viscosity: float = 1e-4):
        self.params = params or EosParameters()
        # dynamic viscosity is a constant closure (Pa s)
        self.viscosity = viscosity
        self._mix_cache: dict[tuple[float, ...], _Mix] = {}
        self._a_cache: dict[tuple, tuple[float, float, float]] = {}

    def __repr__(self) -> str:
        return f"PengRobinson(kij={self.params.kij})"

    @property
    def co2_critical_point(self) -> tuple[float, float]:
        s = self.params.species[0]
        return s.Tc, s.Pc

    def molar_mass(self, c: Composition) -> float:
        return math.fsum(x * s.molar_mass for x, s in zip(c.fractions, self.params.species))

    def _mix(self, c: Composition) -> _Mix:
        key = c.fractions
        mix = self._mix_cache.get(key)
        if mix is not None:
            return mix
        sp = self.params.species
        idx = tuple(i for i, x in enumerate(key) if x > 0.0)
        x = tuple(key[i] for i in idx)
        b_i = [_OMEGA_B * R * sp[i].Tc / sp[i].Pc for i in idx]
        ac_i = [_OMEGA_A * (R * sp[i].Tc) ** 2 / sp[i].Pc for i in idx]
        kappa = tuple(0.37464 + 1.54226 * sp[i].omega - 0.26992 * sp[i].omega ** 2 for i in idx)
        ncp = max(len(sp[i].cp) for i in idx)
        cp = tuple(math.fsum(xk * (sp[i].cp[k] if k < len(sp[i].cp) else 0.0)
                             for xk, i in zip(x, idx)) for k in range(ncp))
        mix = _Mix(
            idx=idx, x=x,
            mu=math.fsum(xk * sp[i].molar_mass for xk, i in zip(x, idx)),
            b=math.fsum(xk * bk for xk, bk in zip(x, b_i)),
            shift=math.fsum(xk * sp[i].volume_shift for xk, i in zip(x, idx)),
            sqrt_ac=tuple(math.sqrt(a) for a in ac_i),
            kappa=kappa,
            Tc=tuple(sp[i].Tc for i in idx),
            m=tuple(tuple(1.0 - self.params.kij[i][j] for j in idx) for i in idx),
            cp=cp,
        )
        self._mix_cache[key] = mix
        return mix

    @staticmethod
    def _attraction(mix: _Mix, T: float) -> tuple[float, float, float]:
        """Mixture a(T), da/dT, d2a/dT2."""
        s, ds, d2s = [], [], []
        for sac, k, Tc in zip(mix.sqrt_ac, mix.kappa, mix.Tc):
            rt = math.sqrt(T / Tc)
            s.append(sac * (1.0 + k * (1.0 - rt)))
            ds.append(-sac * k / (2.0 * math.sqrt(T * Tc)))
            d2s.append(sac * k / (4.0 * math.sqrt(Tc) * T ** 1.5))
        n = len(s)
        if n == 1:
            return s[0] * s[0], 2.0 * s[0] * ds[0], 2.0 * (ds[0] * ds[0] + s[0] * d2s[0])
        a = da = d2a = 0.0
        x, m = mix.x, mix.m
        for i in range(n):
            for j in range(n):
                w = x[i] * x[j] * m[i][j]
                a += w * s[i] * s[j]
                da += w * (ds[i] * s[j] + s[i] * ds[j])
                d2a += w * (d2s[i] * s[j] + 2.0 * ds[i] * ds[j] + s[i] * d2s[j])
        return a, da, d2a

    def _roots(self, P: float, T: float, a: float, b: float) -> list[float]:
        A = a * P / (R * T) ** 2
        B = b * P / (R * T)
        roots = _solve_cubic(-(1.0 - B), A - 3.0 * B * B - 2.0 * B, -(A * B - B * B - B ** 3))
        return [z for z in roots if z > B]

    def _select_z(self, P: float, T: float, c: Composition, mix: _Mix, a: float) -> float:
        if not (P > 0.0 and T > 0.0) or not (math.isfinite(P) and math.isfinite(T)):
            raise EosError("non-positive or non-finite state", P, T, c)
        roots = self._roots(P, T, a, mix.b)
        if not roots:
            raise EosError("no real root of the cubic", P, T, c)
        if len(roots) == 1:
            return roots[0]
        return roots[0] if is_dense(P, T, c, eos=self) else roots[-1]

    def _volume(self, P: float, T: float, c: Composition):
        mix = self._mix(c)
        # frozen temperature fields revisit the same T many times
        key = (c.fractions, T)
        att = self._a_cache.get(key)
        if att is None:
            if len(self._a_cache) > 200_000:
                self._a_cache.clear()
            att = self._a_cache[key] = self._attraction(mix, T)
        a, da, d2a = att
        z = self._select_z(P, T, c, mix, a)
        v_pr = z * R * T / P
        return mix, a, da, z, v_pr

    def density(self, P: float, T: float, c: Composition = PURE_CO2) -> float:
        mix, a, da, z, v_pr = self._volume(P, T, c)
        v = v_pr - mix.shift
        if v <= 0.0:
            raise EosError("volume translation produced non-positive volume", P, T, c)
        return mix.mu / v

    def density_derivatives(self, P: float, T: float, c: Composition = PURE_CO2) -> tuple[float, float, float]:
        mix, a, da, z, v_pr = self._volume(P, T, c)
        b = mix.b
        v = v_pr - mix.shift
        if v <= 0.0:
            raise EosError("volume translation produced non-positive volume", P, T, c)
        den = v_pr * v_pr + 2.0 * b * v_pr - b * b
        dPdv = -R * T / (v_pr - b) ** 2 + 2.0 * a * (v_pr + b) / den ** 2
        dPdT = R / (v_pr - b) - da / den
        rho = mix.mu / v
        drho_dv = -mix.mu / (v * v)
        return rho, drho_dv / dPdv, -drho_dv * dPdT / dPdv

    def ideal_enthalpy_molar(self, T: float, c: Composition) -> float:
        cp = self._mix(c).cp
        return R * math.fsum(ck / (k + 1) * (T ** (k + 1) - T_REF ** (k + 1)) for k, ck in enumerate(cp))

    def ideal_cp_molar(self, T: float, c: Composition) -> float:
        return R * sum(ck * T ** k for k, ck in enumerate(self._mix(c).cp))

    def enthalpy(self, P: float, T: float, c: Composition = PURE_CO2) -> float:
        mix, a, da, z, v_pr = self._volume(P, T, c)
        b = mix.b
        h_res = R * T * (z - 1.0) + (T * da - a) / (2.0 * _SQRT2 * b) * math.log(
            (v_pr + (1.0 + _SQRT2) * b) / (v_pr + (1.0 - _SQRT2) * b))
        h = self.ideal_enthalpy_molar(T, c) + h_res - mix.shift * P
        return h / mix.mu

    # --- pure CO2 saturation ---------------------------------------------

    def _pure_co2(self):
        s = self.params.species[0]
        a_c = _OMEGA_A * (R * s.Tc) ** 2 / s.Pc
        b = _OMEGA_B * R * s.Tc / s.Pc
        kappa = 0.37464 + 1.54226 * s.omega - 0.26992 * s.omega ** 2
        return s.Tc, s.Pc, a_c, b, kappa

    @staticmethod
    def _ln_phi(z: float, A: float, B: float) -> float:
        return (z - 1.0 - math.log(z - B)
                - A / (2.0 * _SQRT2 * B) * math.log((z + (1.0 + _SQRT2) * B) / (z + (1.0 - _SQRT2) * B)))

    def _saturation_exact(self, T: float, tol: float = 1.0) -> float:
        Tc, Pc, a_c, b, kappa = self._pure_co2()
        a = a_c * (1.0 + kappa * (1.0 - math.sqrt(T / Tc))) ** 2
        RT = R * T
        # spinodal volumes: RT (v^2 + 2bv - b^2)^2 = 2a (v + b)(v - b)^2
        quad = np.array([1.0, 2.0 * b, -b * b])
        lhs = RT * np.polymul(quad, quad)
        rhs = 2.0 * a * np.polymul([1.0, b], np.polymul([1.0, -b], [1.0, -b]))
        poly = np.polysub(lhs, rhs)
        vs = sorted(float(r.real) for r in np.roots(poly) if abs(r.imag) < 1e-12 * abs(r) and r.real > b)
        if len(vs) < 2:
            raise DomainError(f"no two-phase region for CO2 at T={T} K")

        def p_of_v(v):
            return RT / (v - b) - a / (v * v + 2.0 * b * v - b * b)

        lo = max(p_of_v(vs[0]), 1e-6)
        hi = p_of_v(vs[-1])

        def gap(P):
            A = a * P / RT ** 2
            B = b * P / RT
            zs = _solve_cubic(-(1.0 - B), A - 3.0 * B * B - 2.0 * B, -(A * B - B * B - B ** 3))
            zs = [z for z in zs if z > B]
            return self._ln_phi(zs[0], A, B) - self._ln_phi(zs[-1], A, B)

        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if gap(mid) > 0.0:  # liquid fugacity higher: below saturation
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def saturation_pressure(self, T: float) -> float:
        """Vapour pressure of pure CO2 by equal-fugacity bisection (1 Pa tolerance)."""
        Tc, Pc = self.co2_critical_point
        if not (T_TRIPLE_CO2 - 1e-9 <= T <= Tc):
            raise DomainError(f"saturation pressure defined on [{T_TRIPLE_CO2}, {Tc}] K, got {T}")
        # the two-phase bracket collapses near Tc; bridge the last millikelvin linearly
        near = 1e-3
        if Tc - T < near:
            p_near = self._saturation_exact(Tc - near)
            return Pc - (Pc - p_near) * (Tc - T) / near
        return self._saturation_exact(T)

    @cached_property
    def _saturation_table(self) -> tuple[list[float], list[tuple[float, float, float, float]]]:
        """PCHIP of ln P against 1/T as (breakpoints, per-interval cubic coefficients)."""
        Tc, _ = self.co2_critical_point
        # ln P against 1/T is nearly linear; cluster nodes towards Tc
        u = np.linspace(0.0, 1.0, 160)
        temps = T_TRIPLE_CO2 + (Tc - T_TRIPLE_CO2) * np.sin(0.5 * math.pi * u)
        logp = [math.log(self.saturation_pressure(float(t))) for t in temps]
        pp = PchipInterpolator(1.0 / temps[::-1], np.array(logp[::-1]))
        # scalar evaluation through scipy is slow, so keep the raw coefficients
        return [float(v) for v in pp.x], [tuple(float(v) for v in col) for col in pp.c.T]

    def saturation_pressure_fast(self, T: float) -> float:
        """Interpolated vapour pressure; relative error below 1e-4 on the domain."""
        xs, coef = self._saturation_table
        u = 1.0 / T
        i = min(max(bisect_right(xs, u) - 1, 0), len(coef) - 1)
        c3, c2, c1, c0 = coef[i]
        d = u - xs[i]
        return math.exp(((c3 * d + c2) * d + c1) * d + c0)


class IdealGas:
    """Ideal-gas closure sharing the heat-capacity data of the reference EoS."""

    def __init__(self, params: EosParameters | None = None, viscosity: float = 1e-4):
        self._pr = PengRobinson(params, viscosity)
        self.viscosity = viscosity

    @property
    def co2_critical_point(self) -> tuple[float, float]:
        return self._pr.co2_critical_point

    def molar_mass(self, c: Composition) -> float:
        return self._pr.molar_mass(c)

    def density(self, P: float, T: float, c: Composition = PURE_CO2) -> float:
        return P * self.molar_mass(c) / (R * T)

    def density_derivatives(self, P, T, c=PURE_CO2):
        rho = self.density(P, T, c)
        return rho, rho / P, -rho / T

    def enthalpy(self, P: float, T: float, c: Composition = PURE_CO2) -> float:
        return self._pr.ideal_enthalpy_molar(T, c) / self.molar_mass(c)

    def saturation_pressure(self, T: float) -> float:
        return self._pr.saturation_pressure(T)

    def saturation_pressure_fast(self, T: float) -> float:
        return self._pr.saturation_pressure_fast(T)


DEFAULT_EOS = PengRobinson()


def _eos(eos):
    return DEFAULT_EOS if eos is None else eos


def molar_mass(c: Composition) -> float:
    """Mixture molar mass in kg/mol from the fixed species table."""
    return math.fsum(x * MOLAR_MASS[s] for s, x in zip(SPECIES, c.fractions))


def density(P: float, T: float, c: Composition = PURE_CO2, eos: EquationOfState | None = None) -> float:
    return _eos(eos).density(P, T, c)


def enthalpy(P: float, T: float, c: Composition = PURE_CO2, eos: EquationOfState | None = None) -> float:
    return _eos(eos).enthalpy(P, T, c)


def joule_thomson(P: float, T: float, c: Composition = PURE_CO2, eos: EquationOfState | None = None) -> float:
    """mu_JT = -(dH/dP)_T / (dH/dT)_P by central differences, in K/Pa."""
    eos = _eos(eos)
    dP = _FD_REL_STEP * P
    dT = _FD_REL_STEP * T
    dHdP = (eos.enthalpy(P + dP, T, c) - eos.enthalpy(P - dP, T, c)) / (2.0 * dP)
    dHdT = (eos.enthalpy(P, T + dT, c) - eos.enthalpy(P, T - dT, c)) / (2.0 * dT)
    return -dHdP / dHdT


def saturation_pressure(T: float, eos: EquationOfState | None = None) -> float:
    return _eos(eos).saturation_pressure(T)


def phase_boundary_pressure(T: float, eos: EquationOfState | None = None) -> float:
    """Pure-CO2 dense-phase boundary: P_sat below Tc, Pc at and above."""
    eos = _eos(eos)
    Tc, Pc = eos.co2_critical_point
    if T >= Tc:
        return Pc
    if T < T_TRIPLE_CO2:
        raise DomainError(f"T={T} K is below the CO2 triple point")
    return eos.saturation_pressure_fast(T)


def is_dense(P: float, T: float, c: Composition = PURE_CO2, eos: EquationOfState | None = None) -> bool:
    """Dense-phase test against the pure-CO2 boundary (used for mixtures too)."""
    eos = _eos(eos)
    Tc, Pc = eos.co2_critical_point
    if T >= Tc:
        return P >= Pc
    if T < T_TRIPLE_CO2:
        # solid region is out of scope; compressed liquid is the closest reading
        return P > eos.saturation_pressure_fast(T_TRIPLE_CO2)
    p_sat = eos.saturation_pressure_fast(T)
    if abs(P - p_sat) < 1e-3 * p_sat:
        p_sat = eos.saturation_pressure(T)
    return P > p_sat


def state(P: float, T: float, c: Composition = PURE_CO2, eos: EquationOfState | None = None) -> FluidState:
    eos = _eos(eos)
    rho = eos.density(P, T, c)
    mu = eos.molar_mass(c)
    rho_m = rho / mu
    H = eos.enthalpy(P, T, c)
    return FluidState(P=P, T=T, composition=c, rho=rho, rho_m=rho_m, z=P / (rho_m * R * T),
                      H=H, e=H - P / rho, mu_JT=joule_thomson(P, T, c, eos))


def load_eos(path: str | Path | None = None, viscosity: float = 1e-4) -> PengRobinson:
    if path is None:
        return PengRobinson(viscosity=viscosity)
    return PengRobinson(EosParameters.from_json(path), viscosity=viscosity)

"""Single-pipe physics: friction, Reynolds number and steady marching.

The steady momentum balance integrated along a pipe is

    dP/ds = -lambda/(2D) * rho*v*|v| - d(rho*v^2)/ds - rho*g*dh/ds

and the enthalpy balance is

    dH/ds = -pi*D*c_h*(T - T_s) / Qm        (H per unit mass)

Since the mass flux G = rho*v is constant, the inertia term is carried
exactly by marching Pi = P + G^2/rho instead of P.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from . import fluids
from .fluids import PURE_CO2, Composition, EosError, FluidState
from .network import Pipe
from .units import G as GRAVITY
from .units import k_to_c, pa_to_barg

log = logging.getLogger(__name__)

RE_LAMINAR = 2300.0
RE_TURBULENT = 4000.0
DEFAULT_DS = 1000.0
STEEP_DS = 100.0
STEEP_SLOPE = 0.01
T_SEARCH = (200.0, 400.0)
MIN_FLOW = 1e-12  # kg/s; below this the enthalpy equation is treated as zero flow


def reynolds(Qm: float, D: float, mu_visc: float) -> float:
    return 4.0 * abs(Qm) / (math.pi * mu_visc * D)


def friction_nikuradse(k: float, D: float) -> float:
    """Fully rough pipe law."""
    if not 0.0 < k < D:
        raise fluids.DomainError(f"Nikuradse needs 0 < k < D, got k={k}, D={D}")
    return (2.0 * math.log10(D / k) + 1.138) ** -2


def friction_hofer(Re: float, k: float, D: float) -> float:
    """Hofer's explicit approximation of the Colebrook equation."""
    if not 0.0 <= k < D:
        raise fluids.DomainError(f"Hofer needs 0 <= k < D, got k={k}, D={D}")
    if Re <= 7.0:
        warnings.warn(f"Re={Re} outside the Hofer formula domain, using laminar 64/Re", RuntimeWarning)
        return 64.0 / Re if Re > 0 else math.inf
    return (-2.0 * math.log10(4.518 / Re * math.log10(Re / 7.0) + k / (3.71 * D))) ** -2


def _turbulent(Re: float, k: float, D: float, model: str) -> float:
    if model == "hofer":
        return friction_hofer(Re, k, D)
    if model == "nikuradse":
        return friction_nikuradse(k, D)
    raise ValueError(f"unknown friction model {model!r}")


def friction_factor(Re: float, k: float, D: float, model: str = "hofer") -> float:
    """Darcy friction factor with a laminar branch and a linear blend up to Re=4000."""
    if Re <= 0.0:
        return math.inf
    if Re < RE_LAMINAR:
        return 64.0 / Re
    if Re < RE_TURBULENT:
        w = (Re - RE_LAMINAR) / (RE_TURBULENT - RE_LAMINAR)
        return (1.0 - w) * 64.0 / Re + w * _turbulent(Re, k, D, model)
    return _turbulent(Re, k, D, model)


def _friction_flux(G: float, D: float, k: float, mu: float, model: str) -> float:
    """lambda(Re) * G * |G|, finite at zero flow."""
    if G == 0.0:
        return 0.0
    Re = abs(G) * D / mu
    if Re < RE_LAMINAR:
        return 64.0 * mu * G / D
    return friction_factor(Re, k, D, model) * G * abs(G)


def _friction_flux_dG(G: float, D: float, k: float, mu: float, model: str) -> float:
    step = 1e-6 * max(abs(G), RE_LAMINAR * mu / D * 1e-3)
    return (_friction_flux(G + step, D, k, mu, model) - _friction_flux(G - step, D, k, mu, model)) / (2.0 * step)


def station_grid(L: float, ds: float = DEFAULT_DS, dh: float = 0.0) -> np.ndarray:
    """Equally spaced stations, refined on steep pipes."""
    if ds <= 0:
        raise ValueError("ds must be positive")
    if abs(dh) / L > STEEP_SLOPE:
        ds = min(ds, STEEP_DS)
    n = max(1, math.ceil(L / ds - 1e-9))
    return np.linspace(0.0, L, n + 1)


@dataclass
class PipeProfile:
    s: np.ndarray
    P: np.ndarray
    T: np.ndarray
    rho: np.ndarray
    v: np.ndarray
    Qm: float
    lam: np.ndarray  # per segment
    Re: np.ndarray  # per segment
    D: float
    composition: Composition = PURE_CO2
    dense: np.ndarray | None = None  # per station
    halted: bool = False
    dp_friction: float = 0.0
    dp_inertia: float = 0.0
    dp_gravity: float = 0.0

    @property
    def outlet_P(self) -> float:
        return float(self.P[-1])

    @property
    def outlet_T(self) -> float:
        return float(self.T[-1])

    @property
    def dense_ok(self) -> bool:
        return bool(self.dense is None or self.dense.all())

    @property
    def v_max(self) -> float:
        return float(np.max(np.abs(self.v)))

    def reversed(self) -> "PipeProfile":
        """Same profile expressed from the other end of the pipe."""
        L = self.s[-1]
        return PipeProfile(
            s=L - self.s[::-1], P=self.P[::-1].copy(), T=self.T[::-1].copy(), rho=self.rho[::-1].copy(),
            v=-self.v[::-1], Qm=-self.Qm, lam=self.lam[::-1].copy(), Re=self.Re[::-1].copy(), D=self.D,
            composition=self.composition, dense=None if self.dense is None else self.dense[::-1].copy(),
            halted=self.halted, dp_friction=-self.dp_friction, dp_inertia=-self.dp_inertia,
            dp_gravity=-self.dp_gravity)


def profile_to_csv(profile: PipeProfile, path: str | Path) -> None:
    n_seg = len(profile.lam)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s_m", "P_barg", "T_C", "rho_kgm3", "v_ms", "lambda", "Re"])
        for i in range(len(profile.s)):
            j = min(i, n_seg - 1)
            lam = profile.lam[j] if n_seg else float("nan")
            Re = profile.Re[j] if n_seg else float("nan")
            w.writerow([f"{profile.s[i]:.3f}", f"{pa_to_barg(profile.P[i]):.6f}", f"{k_to_c(profile.T[i]):.6f}",
                        f"{profile.rho[i]:.6f}", f"{profile.v[i]:.6f}", f"{lam:.8g}", f"{Re:.8g}"])


def _bracketed_temperature(f, T_guess, c, P, H) -> float:
    lo_lim, hi_lim = T_SEARCH
    f_lo, f_hi = f(lo_lim), f(hi_lim)
    if f_lo > 0.0 or f_hi < 0.0:
        raise EosError(f"enthalpy {H:.6g} J/kg not bracketed on [{lo_lim}, {hi_lim}] K", P, T_guess or 0.0, c)
    return brentq(f, lo_lim, hi_lim, xtol=1e-9, rtol=4 * np.finfo(float).eps)


def temperature_from_enthalpy(P: float, H: float, c: Composition = PURE_CO2, eos=None,
                              T_guess: float | None = None, tol: float = 1e-7, *,
                              beta: float = 0.0, T_ref: float = 0.0) -> float:
    """Invert H(P, T) + beta*(T - T_ref) = H for T on [200, 400] K.

    The linear term carries the implicit part of the heat exchange. Secant
    iteration from ``T_guess``; falls back to a bracketed solve over the
    whole range if the iteration leaves it or stalls.
    """
    eos = fluids._eos(eos)
    lo_lim, hi_lim = T_SEARCH

    def f(T):
        return eos.enthalpy(P, T, c) + beta * (T - T_ref) - H

    if T_guess is None or not lo_lim < T_guess < hi_lim:
        return _bracketed_temperature(f, T_guess, c, P, H)
    T0, f0 = T_guess, f(T_guess)
    if f0 == 0.0:
        return T0
    T1 = T0 + (0.01 if f0 < 0.0 else -0.01)
    f1 = f(T1)
    for _ in range(12):
        if f1 == f0:
            break
        slope = (f1 - f0) / (T1 - T0)
        if slope <= 0.0:
            break
        T2 = T1 - f1 / slope
        if not lo_lim <= T2 <= hi_lim:
            break
        if abs(T2 - T1) < tol:
            return T2
        T0, f0, T1, f1 = T1, f1, T2, f(T2)
    return _bracketed_temperature(f, T_guess, c, P, H)


class _Recover:
    """Solve P + G^2/rho(P, T) = Pi for P; returns (P, rho, drho/dP)."""

    __slots__ = ("eos", "c", "G2")

    def __init__(self, eos, c, G):
        self.eos, self.c, self.G2 = eos, c, G * G

    def __call__(self, Pi: float, T: float, P_guess: float):
        eos, c, G2 = self.eos, self.c, self.G2
        if G2 == 0.0:
            rho, rho_P, _ = eos.density_derivatives(Pi, T, c)
            return Pi, rho, rho_P
        P = P_guess
        for _ in range(30):
            rho, rho_P, _ = eos.density_derivatives(P, T, c)
            r = P + G2 / rho - Pi
            dr = 1.0 - G2 * rho_P / (rho * rho)
            dP = r / dr
            P -= dP
            if P <= 0.0:
                raise EosError("pressure fell to zero while marching", P + dP, T, c)
            if abs(dP) <= 1e-12 * abs(P) + 1e-9:
                rho, rho_P, _ = eos.density_derivatives(P, T, c)
                return P, rho, rho_P
        raise EosError("pressure recovery did not converge", P, T, c)


class _Segment:
    """Per-pipe constants shared by the pressure and enthalpy steps."""

    def __init__(self, pipe: Pipe, Qm: float, c: Composition, eos, h_in: float, h_out: float,
                 ds: float, friction: str, viscosity: float | None):
        self.eos = eos = fluids._eos(eos)
        self.c = c
        self.pipe = pipe
        self.mu = viscosity if viscosity is not None else getattr(eos, "viscosity", 1e-4)
        self.D = pipe.D
        self.area = pipe.area
        self.Qm = Qm
        self.G = Qm / self.area
        self.gs = GRAVITY * (h_out - h_in) / pipe.L
        self.s = station_grid(pipe.L, ds, h_out - h_in)
        self.fr = _friction_flux(self.G, self.D, pipe.k, self.mu, friction)
        self.friction = friction
        self.heat = math.pi * self.D * pipe.c_h / Qm if abs(Qm) > MIN_FLOW else 0.0
        self.cp = 2000.0  # J/(kg K), refined from the inlet state by integrate_pipe
        self.recover = _Recover(eos, c, self.G)

    def force(self, rho: float) -> float:
        """Right-hand side of dPi/ds at density rho."""
        return -self.fr / (2.0 * self.D * rho) - rho * self.gs

    def pressure_step(self, h, P0, rho0, T1):
        """Heun step on Pi; the predictor is evaluated at the new station's T."""
        G2 = self.G * self.G
        F0 = self.force(rho0)
        Pi0 = P0 + G2 / rho0
        Pi_star = Pi0 + h * F0
        P_star, r_star, _ = self.recover(Pi_star, T1, Pi_star - G2 / rho0)
        F1 = self.force(r_star)
        P1, rho1, _ = self.recover(Pi0 + 0.5 * h * (F0 + F1), T1, P_star)
        return P1, rho1, F0, F1

    def enthalpy_step(self, h, H0, T0, P1):
        """Implicit step on H with the pressure at the new station known.

        The heat exchange is weighted between the two stations so that pure
        relaxation toward T_s is exact; small steps reduce to the trapezoid
        rule, and low flows (relaxation length below the step) stay monotone.
        """
        if abs(self.Qm) <= MIN_FLOW:
            return self.eos.enthalpy(P1, T0, self.c), T0
        if self.heat == 0.0:
            return H0, temperature_from_enthalpy(P1, H0, self.c, self.eos, T0)
        Ts = self.pipe.T_s
        k = self.heat * h
        alpha = _fitted_weight(k / self.cp)
        target = H0 - k * alpha * (T0 - Ts)
        beta = k * (1.0 - alpha)
        T1 = temperature_from_enthalpy(P1, target, self.c, self.eos, T0, beta=beta, T_ref=Ts)
        return target - beta * (T1 - Ts), T1


def _fitted_weight(x: float) -> float:
    """Weight of the start station that makes theta' = -x*theta/h exact over one step."""
    if abs(x) < 1e-4:
        return 0.5 - x / 12.0
    x = max(x, -30.0)
    em = -math.expm1(-x)  # 1 - exp(-x)
    return (em / x - math.exp(-x)) / em


def _on_boundary(P: float, T: float, c: Composition, eos) -> bool:
    """Enthalpy inside the two-phase gap pins the recovered state to the saturation line."""
    try:
        P_b = fluids.phase_boundary_pressure(T, eos)
    except (EosError, fluids.DomainError):
        return False
    return abs(P - P_b) < 1e-4 * P


def integrate_pipe(inlet: FluidState | tuple[float, float, Composition], Qm: float, pipe: Pipe,
                   ds: float = DEFAULT_DS, *, h_in: float = 0.0, h_out: float = 0.0, eos=None,
                   friction: str = "hofer", viscosity: float | None = None,
                   halt_on_phase_change: bool = True) -> PipeProfile:
    """March pressure and enthalpy from s=0 to s=L.

    ``Qm`` is signed: positive flow runs in the marching direction. Each step
    iterates the pressure and enthalpy updates to a common end state. A
    change of phase classification stops the march and returns the partial
    profile with ``halted=True``.
    """
    if isinstance(inlet, FluidState):
        P0, T0, c = inlet.P, inlet.T, inlet.composition
    else:
        P0, T0, c = inlet
    seg = _Segment(pipe, Qm, c, eos, h_in, h_out, ds, friction, viscosity)
    eos = seg.eos
    s = seg.s
    n = len(s)
    G2 = seg.G * seg.G
    Re = reynolds(Qm, seg.D, seg.mu)
    lam = friction_factor(Re, pipe.k, seg.D, friction) if Qm != 0.0 else float("nan")

    P = np.empty(n)
    T = np.empty(n)
    rho = np.empty(n)
    dense = np.empty(n, dtype=bool)
    P[0], T[0] = P0, T0
    try:
        rho[0] = eos.density(P0, T0, c)
        H = eos.enthalpy(P0, T0, c)
    except EosError as exc:
        raise EosError(f"station 0: {exc.message}", P0, T0, c) from exc
    dense[0] = fluids.is_dense(P0, T0, c, eos)
    if seg.heat != 0.0:
        seg.cp = max((eos.enthalpy(P0, T0 + 0.05, c) - eos.enthalpy(P0, T0 - 0.05, c)) / 0.1, 500.0)
    dp_f = dp_g = dp_i = 0.0
    halted = False
    last = n - 1

    for i in range(n - 1):
        h = s[i + 1] - s[i]
        T1 = 2.0 * T[i] - T[i - 1] if i > 0 else T[i]
        flipped = False
        try:
            for _ in range(50):
                P1, r1, F0, F1 = seg.pressure_step(h, P[i], rho[i], T1)
                H1, T_new = seg.enthalpy_step(h, H, T[i], P1)
                done = abs(T_new - T1) < 1e-9
                T1 = T_new
                if done:
                    break
                flipped = flipped or _on_boundary(P1, T1, c, eos) or fluids.is_dense(P1, T1, c, eos) != dense[0]
            else:
                # iterates jumping between liquid and vapour roots: the step crosses the boundary
                if not (halt_on_phase_change and flipped):
                    raise EosError("pressure/enthalpy step did not converge", P1, T1, c)
        except EosError as exc:
            raise EosError(f"station {i + 1}: {exc.message}", exc.P, exc.T, c) from exc
        H = H1
        P[i + 1], T[i + 1], rho[i + 1] = P1, T1, r1
        fric0 = -seg.fr / (2.0 * seg.D * rho[i])
        fric1 = -seg.fr / (2.0 * seg.D * r1)
        dp_f += 0.5 * h * (fric0 + fric1)
        dp_g += 0.5 * h * ((F0 - fric0) + (F1 - fric1))
        dp_i -= G2 / r1 - G2 / rho[i]
        dense[i + 1] = fluids.is_dense(P1, T1, c, eos) and not (flipped and not done)
        if halt_on_phase_change and dense[i + 1] != dense[0]:
            halted = True
            last = i + 1
            log.warning("phase change in pipe %s at s=%.1f m (P=%.3g Pa, T=%.2f K)", pipe.id, s[i + 1], P1, T1)
            break

    sl = slice(0, last + 1)
    rho_s = rho[sl]
    return PipeProfile(
        s=s[sl].copy(), P=P[sl].copy(), T=T[sl].copy(), rho=rho_s.copy(), v=seg.G / rho_s,
        Qm=Qm, lam=np.full(last, lam), Re=np.full(last, Re), D=seg.D, composition=c,
        dense=dense[sl].copy(), halted=halted, dp_friction=dp_f, dp_inertia=dp_i, dp_gravity=dp_g)


@dataclass
class PressureMarch:
    P_out: float
    dP_dPin: float
    dP_dQ: float
    P: np.ndarray
    rho: np.ndarray


def march_pressure(P0: float, Qm: float, pipe: Pipe, T_stations: Sequence[float], c: Composition = PURE_CO2,
                   *, h_in: float = 0.0, h_out: float = 0.0, ds: float = DEFAULT_DS, eos=None,
                   friction: str = "hofer", viscosity: float | None = None) -> PressureMarch:
    """Momentum-only march on a frozen temperature field, with tangent sensitivities.

    Same stations and pressure step as :func:`integrate_pipe`. Derivatives of
    the outlet pressure with respect to inlet pressure and mass flow are
    carried alongside the state (forward mode).
    """
    seg = _Segment(pipe, Qm, c, eos, h_in, h_out, ds, friction, viscosity)
    eos, recover, s = seg.eos, seg.recover, seg.s
    D, area, G = seg.D, seg.area, seg.G
    G2 = G * G
    T_st = np.asarray(T_stations, dtype=float)
    if len(T_st) != len(s):
        raise ValueError(f"temperature field has {len(T_st)} stations, pipe grid has {len(s)}")
    fr = seg.fr
    dfr = _friction_flux_dG(G, D, pipe.k, seg.mu, seg.friction)
    gs = seg.gs
    c2D = 1.0 / (2.0 * D)

    P = np.empty(len(s))
    rho = np.empty(len(s))
    P[0] = P0
    r0, rP0, _ = eos.density_derivatives(P0, T_st[0], c)
    rho[0] = r0
    dG = 1.0 / area
    dP_a, dP_b = 1.0, 0.0  # d/dP_in, d/dQm
    for i in range(len(s) - 1):
        h = s[i + 1] - s[i]
        Pi0 = P[i] + G2 / r0
        dPi_a = dP_a * (1.0 - G2 * rP0 / (r0 * r0))
        dPi_b = dP_b * (1.0 - G2 * rP0 / (r0 * r0)) + 2.0 * G * dG / r0
        F0 = -fr * c2D / r0 - r0 * gs
        dF0_dP = (fr * c2D / (r0 * r0) - gs) * rP0
        dF0_a = dF0_dP * dP_a
        dF0_b = dF0_dP * dP_b - dfr * dG * c2D / r0

        Pi_star = Pi0 + h * F0
        P1, r1, rP1 = recover(Pi_star, T_st[i + 1], Pi_star - G2 / r0)
        m1 = 1.0 - G2 * rP1 / (r1 * r1)
        dP1_a = (dPi_a + h * dF0_a) / m1
        dP1_b = (dPi_b + h * dF0_b - 2.0 * G * dG / r1) / m1
        F1 = -fr * c2D / r1 - r1 * gs
        dF1_dP = (fr * c2D / (r1 * r1) - gs) * rP1
        dF1_a = dF1_dP * dP1_a
        dF1_b = dF1_dP * dP1_b - dfr * dG * c2D / r1

        Pi1 = Pi0 + 0.5 * h * (F0 + F1)
        dPi_a += 0.5 * h * (dF0_a + dF1_a)
        dPi_b += 0.5 * h * (dF0_b + dF1_b)
        P2, r0, rP0 = recover(Pi1, T_st[i + 1], P1)
        m2 = 1.0 - G2 * rP0 / (r0 * r0)
        dP_a = dPi_a / m2
        dP_b = (dPi_b - 2.0 * G * dG / r0) / m2
        P[i + 1] = P2
        rho[i + 1] = r0
    return PressureMarch(P_out=float(P[-1]), dP_dPin=dP_a, dP_dQ=dP_b, P=P, rho=rho)


@dataclass
class ThermalMarch:
    T: np.ndarray
    H: np.ndarray
    dense: np.ndarray


def march_temperature(P_stations: Sequence[float], T0: float, Qm: float, pipe: Pipe,
                      c: Composition = PURE_CO2, *, h_in: float = 0.0, h_out: float = 0.0,
                      ds: float = DEFAULT_DS, eos=None) -> ThermalMarch:
    """Enthalpy march along the flow on a frozen pressure field.

    ``P_stations`` and the returned arrays are ordered in the flow direction,
    starting at the inlet. Same enthalpy step as :func:`integrate_pipe`.
    """
    seg = _Segment(pipe, abs(Qm), c, eos, h_in, h_out, ds, "hofer", None)
    P = np.asarray(P_stations, dtype=float)
    s = seg.s
    if len(P) != len(s):
        raise ValueError(f"pressure field has {len(P)} stations, pipe grid has {len(s)}")
    n = len(s)
    T = np.empty(n)
    H = np.empty(n)
    dense = np.empty(n, dtype=bool)
    T[0] = T0
    H[0] = seg.eos.enthalpy(P[0], T0, c)
    dense[0] = fluids.is_dense(P[0], T0, c, seg.eos)
    for i in range(n - 1):
        # the grid is symmetric, so spacing is the same in either direction
        h = s[i + 1] - s[i]
        H[i + 1], T[i + 1] = seg.enthalpy_step(h, H[i], T[i], P[i + 1])
        dense[i + 1] = fluids.is_dense(P[i + 1], T[i + 1], c, seg.eos)
    return ThermalMarch(T=T, H=H, dense=dense)

"""Steady-state network solve.

Unknowns are node pressures and edge mass flows. Each outer iteration runs a
Newton solve of the hydraulic equations on frozen temperature and
composition fields, then sweeps temperature and composition downstream along
the converged flow directions. The outer loop stops once pressures and
temperatures settle.

Residual rows, in order:
    * one per node: mass balance, or ``P - P_ref`` at a reference node
    * one per pipe: outlet pressure of the march from ``from_node`` minus
      ``P(to_node)``
    * one per pump: the setpoint equation (pass-through when disabled)
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from . import fluids
from .fluids import PURE_CO2, SPECIES, Composition, EosError
from .hydraulics import (DEFAULT_DS, PipeProfile, friction_factor, march_pressure, march_temperature,
                         reynolds, station_grid, temperature_from_enthalpy)
from .network import BoundaryFlow, Network, Pipe, Pump, Violation, network_to_geojson, pressure_anchors, validate
from .units import G as GRAVITY
from .units import k_to_c, pa_to_barg

log = logging.getLogger(__name__)

# Flow scale over which a pipe's column switches from one end's fluid to the
# other's. A near-stagnant pipe between different fluids then has a
# consistent intermediate column instead of flipping direction forever.
STAGNANT_FLOW = 1e-3  # kg/s
_BLEND_RANGE = 40.0  # tanh saturates to exactly +-1 beyond this many scales


class SolverError(RuntimeError):
    pass


class InvalidNetworkError(SolverError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("network is not simulatable:\n" + "\n".join(f"  {v}" for v in violations))


class ConvergenceError(SolverError):
    def __init__(self, message: str, location: str, residual: float):
        self.location = location
        self.residual = residual
        super().__init__(f"{message} (worst residual {residual:.3g} at {location})")


class SingularJacobianError(SolverError):
    def __init__(self, zone: list[str]):
        self.zone = zone
        shown = ", ".join(zone[:8]) + (", ..." if len(zone) > 8 else "")
        super().__init__(f"singular Jacobian: pressure level undetermined in zone [{shown}]")


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-8
    abs_tol_flow: float = 1e-6  # kg/s
    max_outer_iterations: int = 50
    max_newton_iterations: int = 100
    damping: float = 1.0
    ds: float = DEFAULT_DS
    friction: str = "hofer"
    T_tol: float = 0.01  # K, outer-loop temperature tolerance
    initial_pressure: float | None = None  # Pa; uniform start instead of the hydrostatic guess

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol_flow > 0 and self.T_tol > 0 and self.ds > 0):
            raise ValueError("solver tolerances and step must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_outer_iterations < 1 or self.max_newton_iterations < 1:
            raise ValueError("iteration limits must be >= 1")


@dataclass
class ConvergenceReport:
    converged: bool
    outer_iterations: int
    newton_iterations: list[int]
    residual_norms: list[float]
    flow_reversals: int = 0


@dataclass
class SolutionState:
    net: Network
    bounds: list[BoundaryFlow]
    P: dict[str, float]
    T: dict[str, float]
    composition: dict[str, Composition]
    Qm: dict[str, float]
    v_max: dict[str, float]
    profiles: dict[str, PipeProfile]
    report: ConvergenceReport
    reference_flow: dict[str, float] = field(default_factory=dict)  # kg/s injected by each reference node

    def dense_flags(self, edge_id: str) -> np.ndarray:
        prof = self.profiles[edge_id]
        return prof.dense if prof.dense is not None else np.ones(len(prof.s), dtype=bool)

    @property
    def dense_ok(self) -> bool:
        return all(p.dense_ok for p in self.profiles.values())

    def node_balance(self) -> dict[str, float]:
        """Net mass inflow per node including boundary terms (zero when solved)."""
        bal = {n.id: 0.0 for n in self.net.nodes}
        for e in self.net.edges:
            q = self.Qm[e.id]
            bal[e.from_node] -= q
            bal[e.to_node] += q
        for b in self.bounds:
            bal[b.node] += self.reference_flow[b.node] if b.reference else b.mass_rate
        return bal


# --- assembly ---------------------------------------------------------------

class _System:
    """Index maps, frozen fields and residual/Jacobian evaluation."""

    def __init__(self, net: Network, bounds: list[BoundaryFlow], cfg: SolverConfig, eos):
        self.net, self.cfg, self.eos = net, cfg, eos
        self.node_ids = [n.id for n in net.nodes]
        self.ni = {nid: i for i, nid in enumerate(self.node_ids)}
        self.edges = list(net.edges)
        self.ei = {e.id: len(self.node_ids) + j for j, e in enumerate(self.edges)}
        self.n = len(self.node_ids) + len(self.edges)
        self.h = {n.id: n.h for n in net.nodes}
        self.bound = {b.node: b for b in bounds}
        self.inject = np.zeros(len(self.node_ids))
        self.ref_rows: dict[int, float] = {}
        for b in bounds:
            if b.reference:
                self.ref_rows[self.ni[b.node]] = b.P_ref
            else:
                self.inject[self.ni[b.node]] = b.mass_rate
        self.grids = {e.id: station_grid(e.L, cfg.ds, self.h[e.to_node] - self.h[e.from_node])
                      for e in self.edges if isinstance(e, Pipe)}
        # frozen fields, refreshed by the thermal sweep
        self.T_field: dict[str, np.ndarray] = {}
        self.comp_edge: dict[str, Composition] = {}
        self.end_comp: dict[str, tuple[Composition, Composition]] = {}  # node mixtures at (from, to)
        self.marches: dict = {}

        scale = max(1.0, float(np.max(np.abs(self.inject))) if len(self.inject) else 1.0)
        self.row_scale = np.empty(self.n)
        self.row_tol = np.empty(self.n)
        self.row_label: list[str] = []
        P_typ = max(list(self.ref_rows.values()) + [p.setpoint for p in net.pumps] + [1e6])
        for i, nid in enumerate(self.node_ids):
            if i in self.ref_rows:
                self.row_scale[i], self.row_tol[i] = 1e5, 0.5 * cfg.rel_tol * P_typ
                self.row_label.append(f"node {nid} (reference pressure)")
            else:
                self.row_scale[i], self.row_tol[i] = scale, 0.1 * cfg.abs_tol_flow
                self.row_label.append(f"node {nid} (mass balance)")
        for e in self.edges:
            r = self.ei[e.id]
            self.row_scale[r], self.row_tol[r] = 1e5, 0.5 * cfg.rel_tol * P_typ
            self.row_label.append(f"{'pipe' if isinstance(e, Pipe) else 'pump'} {e.id}")

    def P_of(self, x: np.ndarray, nid: str) -> float:
        return x[self.ni[nid]]

    def evaluate(self, x: np.ndarray, jacobian: bool = True):
        nn = len(self.node_ids)
        r = np.zeros(self.n)
        rows, cols, vals = [], [], []

        def jac(i, j, v):
            if jacobian:
                rows.append(i)
                cols.append(j)
                vals.append(v)

        r[:nn] = self.inject
        for e in self.edges:
            j = self.ei[e.id]
            a, b = self.ni[e.from_node], self.ni[e.to_node]
            q = x[j]
            r[a] -= q
            r[b] += q
            jac(a, j, -1.0)
            jac(b, j, 1.0)
        for i, P_ref in self.ref_rows.items():
            r[i] = x[i] - P_ref
        if jacobian:
            keep = [k for k, i in enumerate(rows) if i not in self.ref_rows]
            rows[:] = [rows[k] for k in keep]
            cols[:] = [cols[k] for k in keep]
            vals[:] = [vals[k] for k in keep]
            for i in self.ref_rows:
                jac(i, i, 1.0)

        marches = {}
        for e in self.edges:
            row = self.ei[e.id]
            a, b = self.ni[e.from_node], self.ni[e.to_node]
            if isinstance(e, Pump):
                if not e.enabled:
                    r[row] = x[b] - x[a]
                    jac(row, b, 1.0)
                    jac(row, a, -1.0)
                elif e.mode == "outlet_setpoint":
                    r[row] = x[b] - e.setpoint
                    jac(row, b, 1.0)
                else:
                    r[row] = x[a] - e.setpoint
                    jac(row, a, 1.0)
                continue
            q = x[row]
            ends = self.end_comp.get(e.id)
            if ends is None:
                m, dP_dw, dw_dq = self._march(e, x[a], q, self.comp_edge[e.id]), 0.0, 0.0
            elif ends[0] == ends[1] or abs(q) >= _BLEND_RANGE * STAGNANT_FLOW:
                m, dP_dw, dw_dq = self._march(e, x[a], q, ends[0] if q >= 0.0 else ends[1]), 0.0, 0.0
            else:
                t = math.tanh(q / STAGNANT_FLOW)
                w = 0.5 * (1.0 + t)
                m = self._march(e, x[a], q, _blend(ends, w))
                dw_dq = 0.5 * (1.0 - t * t) / STAGNANT_FLOW
                dP_dw = 0.0
                if jacobian:
                    lo, hi = max(0.0, w - 1e-4), min(1.0, w + 1e-4)
                    dP_dw = (self._march(e, x[a], q, _blend(ends, hi)).P_out
                             - self._march(e, x[a], q, _blend(ends, lo)).P_out) / (hi - lo)
            marches[e.id] = m
            r[row] = m.P_out - x[b]
            jac(row, a, m.dP_dPin)
            jac(row, row, m.dP_dQ + dP_dw * dw_dq)
            jac(row, b, -1.0)
        self.marches = marches
        if not jacobian:
            return r, None
        J = scipy.sparse.csc_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        return r, J

    def _march(self, e: Pipe, P_in: float, q: float, c: Composition):
        return march_pressure(P_in, q, e, self.T_field[e.id], c, h_in=self.h[e.from_node], h_out=self.h[e.to_node],
                              ds=self.cfg.ds, eos=self.eos, friction=self.cfg.friction)

    def scaled_norm(self, r: np.ndarray) -> float:
        return float(np.linalg.norm(r / self.row_scale))

    def zone_of_null_vector(self, J) -> list[str]:
        """Nodes carrying the pressure part of the Jacobian's null space."""
        nn = len(self.node_ids)
        if self.n > 3000:
            return self.node_ids
        _, sv, vt = scipy.linalg.svd(J.toarray())
        v = np.abs(vt[-1][:nn])
        if v.max() == 0.0:
            return self.node_ids
        return sorted(self.node_ids[i] for i in np.nonzero(v > 1e-3 * v.max())[0])


def _zone_members(net: Network) -> dict[str, list[str]]:
    return {z[0]: z for z in net.components(through_pumps=False)}


def _initial_pressures(sys: _System, net: Network, bounds: list[BoundaryFlow], cfg: SolverConfig) -> np.ndarray:
    P = np.empty(len(sys.node_ids))
    if cfg.initial_pressure is not None:
        P[:] = cfg.initial_pressure
        return P
    zones = _zone_members(net)
    anchors = pressure_anchors(net, bounds)
    P_anchor: dict[str, tuple[str, float]] = {}
    for b in bounds:
        if b.reference:
            P_anchor[b.node] = (b.node, b.P_ref)
    for p in net.pumps:
        if p.enabled:
            end = p.to_node if p.mode == "outlet_setpoint" else p.from_node
            P_anchor[f"pump:{p.id}"] = (end, p.setpoint)
    for zone, members in zones.items():
        found = None
        for a in anchors.get(zone, []):
            key = a.split(":", 1)[1] if a.startswith("reference:") else a
            found = P_anchor.get(key)
            if found:
                break
        node, P0 = found if found else (members[0], max(v for _, v in P_anchor.values()) if P_anchor else 1.5e7)
        try:
            rho = sys.eos.density(P0, 283.15, PURE_CO2)
        except EosError:
            rho = 900.0
        for m in members:
            P[sys.ni[m]] = max(P0 + rho * GRAVITY * (sys.h[node] - sys.h[m]), 0.2 * P0)
    return P


def _initial_flows(sys: _System, net: Network, bounds: list[BoundaryFlow]) -> np.ndarray:
    """Spanning-tree flows that satisfy every non-reference mass balance."""
    Q = np.zeros(len(sys.edges))
    refs = [b.node for b in bounds if b.reference]
    inject = {nid: sys.inject[sys.ni[nid]] for nid in sys.node_ids}
    seen: set[str] = set()
    for root in refs + sys.node_ids:
        if root in seen:
            continue
        order, parent = [], {root: None}
        queue = deque([root])
        seen.add(root)
        while queue:
            u = queue.popleft()
            order.append(u)
            for e, v in sorted(net.adjacency[u], key=lambda ev: ev[0].id):
                if v not in seen:
                    seen.add(v)
                    parent[v] = e
                    queue.append(v)
        subtree = dict(inject)
        for u in reversed(order[1:]):
            e = parent[u]
            up = e.to_node if e.from_node == u else e.from_node
            # the subtree surplus leaves u towards its parent
            Q[sys.ei[e.id] - len(sys.node_ids)] = subtree[u] if e.from_node == u else -subtree[u]
            subtree[up] += subtree[u]
    return Q


def _global_mix(bounds: list[BoundaryFlow]) -> Composition:
    return _mix_compositions([(b.mass_rate, b.composition) for b in bounds if b.mass_rate > 0]) or PURE_CO2


def _same_composition(a: Composition, b: Composition | None, tol: float = 1e-12) -> bool:
    # compositions circulating in a directed flow cycle settle geometrically, not bit-exactly
    return b is not None and max(abs(x - y) for x, y in zip(a.fractions, b.fractions)) <= tol


def _blend(ends: tuple[Composition, Composition], w: float) -> Composition:
    """Column of fraction ``w`` from-end fluid, by mass."""
    return _mix_compositions([(w, ends[0]), (1.0 - w, ends[1])]) or ends[0]


def _mix_compositions(streams: list[tuple[float, Composition]]) -> Composition | None:
    """Molar mix of mass streams [(kg/s, composition)]."""
    moles = np.zeros(len(SPECIES))
    for m, c in streams:
        if m > 0.0:
            moles += (m / c.molar_mass) * np.array(c.fractions)
    total = moles.sum()
    if total <= 0.0:
        return None
    return Composition.from_fractions(moles / total, normalize=True)


# --- thermal / composition sweep --------------------------------------------

@dataclass
class _Sweep:
    T_node: dict[str, float]
    comp_node: dict[str, Composition]
    T_field: dict[str, np.ndarray]
    comp_edge: dict[str, Composition]
    dense: dict[str, np.ndarray]
    orientation: dict[str, int]
    reference_flow: dict[str, float]


def _orient(sys: _System, x: np.ndarray) -> dict[str, int]:
    tol = sys.cfg.abs_tol_flow
    out = {}
    for e in sys.edges:
        q = x[sys.ei[e.id]]
        out[e.id] = 0 if abs(q) <= tol else (1 if q > 0 else -1)
    return out


def _thermal_sweep(sys: _System, x: np.ndarray, prev_T: dict[str, float], prev_comp: dict[str, Composition]) -> _Sweep:
    eos = sys.eos
    orient = _orient(sys, x)
    incoming: dict[str, list] = {nid: [] for nid in sys.node_ids}
    outgoing: dict[str, list] = {nid: [] for nid in sys.node_ids}
    indeg = {nid: 0 for nid in sys.node_ids}
    for e in sys.edges:
        o = orient[e.id]
        if o == 0:
            continue
        up, down = (e.from_node, e.to_node) if o > 0 else (e.to_node, e.from_node)
        outgoing[up].append(e)
        incoming[down].append(e)
        indeg[down] += 1

    # reference nodes absorb the imbalance; positive means they inject
    net_in = {nid: 0.0 for nid in sys.node_ids}
    for e in sys.edges:
        q = x[sys.ei[e.id]]
        net_in[e.from_node] -= q
        net_in[e.to_node] += q
    reference_flow = {}
    for i in sys.ref_rows:
        nid = sys.node_ids[i]
        reference_flow[nid] = -net_in[nid]

    order = []
    queue = deque(sorted(nid for nid, d in indeg.items() if d == 0))
    while queue:
        u = queue.popleft()
        order.append(u)
        for e in sorted(outgoing[u], key=lambda e: e.id):
            down = e.to_node if e.from_node == u else e.from_node
            indeg[down] -= 1
            if indeg[down] == 0:
                queue.append(down)
    T_node = dict(prev_T)
    comp_node = dict(prev_comp)
    cyclic = None
    if len(order) < len(sys.node_ids):
        rest = sorted(set(sys.node_ids) - set(order))
        log.info("flow graph has a directed cycle through %d node(s); sweeping them with lagged inflows", len(rest))
        order += rest
        cyclic = _cycle_compositions(sys, x, incoming, reference_flow, prev_comp)
    T_field: dict[str, np.ndarray] = {}
    comp_edge: dict[str, Composition] = {}
    dense: dict[str, np.ndarray] = {}
    outlet: dict[str, tuple[float, float, Composition]] = {}  # edge -> (T, H per kg, composition)

    for u in order:
        P_u = x[sys.ni[u]]
        streams = []  # (kg/s, T, H, composition)
        b = sys.bound.get(u)
        inj = reference_flow.get(u, 0.0) if (b is not None and b.reference) else (b.mass_rate if b else 0.0)
        if b is not None and inj > 0.0:
            streams.append((inj, b.T_in, eos.enthalpy(P_u, b.T_in, b.composition), b.composition))
        for e in incoming[u]:
            if e.id in outlet:
                T_o, H_o, c_o = outlet[e.id]
            else:
                # lagged value inside a directed cycle
                T_o = sys.T_field[e.id][-1 if orient[e.id] > 0 else 0] if e.id in sys.T_field else T_node[u]
                up = e.from_node if orient[e.id] > 0 else e.to_node
                c_o = cyclic[up]
                H_o = eos.enthalpy(P_u, T_o, c_o)
            streams.append((abs(x[sys.ei[e.id]]), T_o, H_o, c_o))
        if streams:
            c_mix = _mix_compositions([(m, c) for m, _, _, c in streams]) or comp_node[u]
            m_tot = math.fsum(m for m, *_ in streams)
            H_mix = math.fsum(m * H for m, _, H, _ in streams) / m_tot
            T_guess = math.fsum(m * T for m, T, _, _ in streams) / m_tot
            if len(streams) == 1 and streams[0][3] == c_mix:
                T_u = streams[0][1] if abs(streams[0][2] - eos.enthalpy(P_u, streams[0][1], c_mix)) < 1e-9 else \
                    temperature_from_enthalpy(P_u, H_mix, c_mix, eos, T_guess)
            else:
                T_u = temperature_from_enthalpy(P_u, H_mix, c_mix, eos, T_guess)
            T_node[u], comp_node[u] = T_u, c_mix

        for e in outgoing[u]:
            c = comp_node[u]
            comp_edge[e.id] = c
            q = abs(x[sys.ei[e.id]])
            down = e.to_node if e.from_node == u else e.from_node
            P_d = x[sys.ni[down]]
            if isinstance(e, Pump):
                T_out = e.cooler_T_out if e.enabled else T_node[u]
                outlet[e.id] = (T_out, eos.enthalpy(P_d, T_out, c), c)
                continue
            P_st = sys.marches[e.id].P
            forward = orient[e.id] > 0
            tm = march_temperature(P_st if forward else P_st[::-1], T_node[u], q, e, c,
                                   h_in=sys.h[u], h_out=sys.h[down], ds=sys.cfg.ds, eos=eos)
            T_field[e.id] = tm.T if forward else tm.T[::-1].copy()
            dense[e.id] = tm.dense if forward else tm.dense[::-1].copy()
            outlet[e.id] = (float(tm.T[-1]), float(tm.H[-1]), c)

    # zero-flow edges take T and composition from their from-node
    for e in sys.edges:
        if orient[e.id] != 0 or isinstance(e, Pump):
            continue
        c = comp_node[e.from_node]
        comp_edge[e.id] = c
        T0 = T_node[e.from_node]
        T_field[e.id] = np.full(len(sys.grids[e.id]), T0)
        P_st = sys.marches[e.id].P
        dense[e.id] = np.array([fluids.is_dense(p, T0, c, eos) for p in P_st])
    for e in sys.edges:
        if isinstance(e, Pump) and e.id not in comp_edge:
            comp_edge[e.id] = comp_node[e.from_node]
    return _Sweep(T_node, comp_node, T_field, comp_edge, dense, orient, reference_flow)


def _cycle_compositions(sys: _System, x: np.ndarray, incoming: dict[str, list], reference_flow: dict[str, float],
                        prev_comp: dict[str, Composition]) -> dict[str, Composition]:
    """Node compositions from one linear solve of the species mass balance.

    Mass fractions mix linearly by mass flow, so a directed cycle needs no
    lagging for composition.
    """
    M = np.array([fluids.MOLAR_MASS[sp] for sp in SPECIES])

    def mass_fractions(c: Composition) -> np.ndarray:
        y = np.array(c.fractions) * M
        return y / y.sum()

    n = len(sys.node_ids)
    rows, cols, vals = [], [], []
    rhs = np.zeros((n, len(SPECIES)))
    for i, u in enumerate(sys.node_ids):
        b = sys.bound.get(u)
        inj = reference_flow.get(u, 0.0) if (b is not None and b.reference) else (b.mass_rate if b else 0.0)
        feeds = [(sys.ni[e.to_node if e.to_node != u else e.from_node], abs(x[sys.ei[e.id]])) for e in incoming[u]]
        total = max(inj, 0.0) + math.fsum(q for _, q in feeds)
        if total <= 0.0:
            # nothing flows in; keep the previous composition
            rows.append(i)
            cols.append(i)
            vals.append(1.0)
            rhs[i] = mass_fractions(prev_comp[u])
            continue
        if inj > 0.0:
            rhs[i] = inj * mass_fractions(b.composition)
        for j, q in feeds:
            rows.append(i)
            cols.append(j)
            vals.append(-q)
        rows.append(i)
        cols.append(i)
        vals.append(total)
    A = scipy.sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))
    Y = scipy.sparse.linalg.splu(A).solve(rhs)
    out = {}
    for i, u in enumerate(sys.node_ids):
        moles = np.clip(Y[i], 0.0, None) / M
        out[u] = Composition.from_fractions(moles, normalize=True)
    return out


# --- Newton -----------------------------------------------------------------

def _evaluate_start(sys: _System, x: np.ndarray):
    """Evaluate at the start point, lifting free pressures if a march runs out of pressure."""
    nn = len(sys.node_ids)
    free = np.array([i not in sys.ref_rows for i in range(nn)])
    for attempt in range(8):
        try:
            return x, *sys.evaluate(x)
        except EosError as exc:
            if attempt == 7:
                raise ConvergenceError(f"no evaluable start point: {exc.message}", "start", float("inf")) from exc
            x = x.copy()
            x[:nn][free] *= 1.25


def _newton(sys: _System, x: np.ndarray) -> tuple[np.ndarray, int, float]:
    cfg = sys.cfg
    x, r, J = _evaluate_start(sys, x)
    norm = sys.scaled_norm(r)
    for it in range(cfg.max_newton_iterations):
        if np.all(np.abs(r) <= sys.row_tol):
            return x, it, norm
        try:
            lu = scipy.sparse.linalg.splu(J)
            dx = lu.solve(-r)
        except RuntimeError:
            raise SingularJacobianError(sys.zone_of_null_vector(J)) from None
        if not np.all(np.isfinite(dx)):
            raise SingularJacobianError(sys.zone_of_null_vector(J))
        t = cfg.damping
        accepted = False
        for _ in range(21):
            x_new = x + t * dx
            nn = len(sys.node_ids)
            if np.all(x_new[:nn] > 0.0):
                try:
                    r_new, J_new = sys.evaluate(x_new)
                    norm_new = sys.scaled_norm(r_new)
                except EosError:
                    norm_new = math.inf
                if norm_new < (1.0 - 1e-4 * t) * norm or norm_new == 0.0:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            worst = int(np.argmax(np.abs(r) / sys.row_tol))
            raise ConvergenceError("line search failed after 20 halvings", sys.row_label[worst], float(r[worst]))
        x, r, J, norm = x_new, r_new, J_new, norm_new
    if np.all(np.abs(r) <= sys.row_tol):
        return x, cfg.max_newton_iterations, norm
    worst = int(np.argmax(np.abs(r) / sys.row_tol))
    raise ConvergenceError(f"Newton did not converge in {cfg.max_newton_iterations} iterations",
                           sys.row_label[worst], float(r[worst]))


def solve_steady_state(net: Network, bounds, cfg: SolverConfig | None = None, *, eos=None,
                       initial: "SolutionState | None" = None) -> SolutionState:
    """Solve the network; ``initial`` warm-starts from an earlier solution."""
    cfg = cfg or SolverConfig()
    eos = fluids._eos(eos)
    bounds = list(bounds)
    problems = validate(net, bounds)
    if problems:
        raise InvalidNetworkError(problems)
    sys = _System(net, bounds, cfg, eos)
    nn = len(sys.node_ids)
    x = np.empty(sys.n)
    mix = _global_mix(bounds)
    T_node = {nid: _default_T(sys, nid) for nid in sys.node_ids}
    comp_node = {nid: mix for nid in sys.node_ids}
    x[:nn] = _initial_pressures(sys, net, bounds, cfg)
    x[nn:] = _initial_flows(sys, net, bounds)
    for e in sys.edges:
        sys.comp_edge[e.id] = mix
        if isinstance(e, Pipe):
            sys.T_field[e.id] = np.full(len(sys.grids[e.id]), e.T_s)
    if initial is not None and cfg.initial_pressure is None:
        for nid in sys.node_ids:
            if nid in initial.P:
                x[sys.ni[nid]] = initial.P[nid]
                T_node[nid] = initial.T[nid]
                comp_node[nid] = initial.composition[nid]
        for e in sys.edges:
            if e.id in initial.Qm:
                x[sys.ei[e.id]] = initial.Qm[e.id]
            prof = initial.profiles.get(e.id)
            if isinstance(e, Pipe) and prof is not None and len(prof.T) == len(sys.grids[e.id]):
                sys.T_field[e.id] = prof.T.copy()
                sys.comp_edge[e.id] = prof.composition
        # keep pump setpoints exact at the start
        for p in net.pumps:
            if p.enabled:
                x[sys.ni[p.to_node if p.mode == "outlet_setpoint" else p.from_node]] = p.setpoint
        for i, P_ref in sys.ref_rows.items():
            x[i] = P_ref

    newton_its: list[int] = []
    norms: list[float] = []
    reversals = 0
    prev_orient = None
    P_prev = None
    converged = False
    sweep = None
    for outer in range(1, cfg.max_outer_iterations + 1):
        x, its, norm = _newton(sys, x)
        newton_its.append(its)
        norms.append(norm)
        sweep = _thermal_sweep(sys, x, T_node, comp_node)
        if prev_orient is not None and sweep.orientation != prev_orient:
            reversals += 1
            log.info("flow direction changed in outer iteration %d; re-sweeping", outer)
        dT = max((abs(sweep.T_node[n] - T_node[n]) for n in sys.node_ids), default=0.0)
        dT = max([dT] + [float(np.max(np.abs(sweep.T_field[k] - sys.T_field[k]))) for k in sweep.T_field])
        same_comp = all(_same_composition(sweep.comp_edge[k], sys.comp_edge.get(k)) for k in sweep.comp_edge)
        P_now = x[:nn].copy()
        dP_ok = P_prev is not None and bool(np.all(np.abs(P_now - P_prev) <= cfg.rel_tol * np.abs(P_now)))
        T_node, comp_node = sweep.T_node, sweep.comp_node
        sys.T_field.update(sweep.T_field)
        sys.comp_edge.update(sweep.comp_edge)
        sys.end_comp = {e.id: (comp_node[e.from_node], comp_node[e.to_node]) for e in net.pipes}
        if dP_ok and dT < cfg.T_tol and same_comp and sweep.orientation == prev_orient:
            converged = True
            break
        prev_orient = sweep.orientation
        P_prev = P_now
    if not converged:
        worst = int(np.argmax(np.abs(x[:nn] - P_prev))) if P_prev is not None else 0
        raise ConvergenceError(f"outer iteration did not settle in {cfg.max_outer_iterations} iterations",
                               f"node {sys.node_ids[worst]}",
                               float(abs(x[worst] - P_prev[worst])) if P_prev is not None else math.nan)

    return _build_solution(sys, x, sweep, bounds,
                           ConvergenceReport(True, len(newton_its), newton_its, norms, reversals))


def _default_T(sys: _System, nid: str) -> float:
    b = sys.bound.get(nid)
    return b.T_in if b is not None else 283.15


def _build_solution(sys: _System, x: np.ndarray, sweep: _Sweep, bounds, report: ConvergenceReport) -> SolutionState:
    profiles: dict[str, PipeProfile] = {}
    v_max: dict[str, float] = {}
    Qm: dict[str, float] = {}
    for e in sys.edges:
        q = float(x[sys.ei[e.id]])
        Qm[e.id] = q
        if isinstance(e, Pump):
            v_max[e.id] = 0.0
            continue
        m = sys.marches[e.id]
        c = sweep.comp_edge[e.id]
        s = sys.grids[e.id]
        T = sweep.T_field[e.id]
        rho = m.rho
        G = q / e.area
        mu = getattr(sys.eos, "viscosity", 1e-4)
        Re = reynolds(q, e.D, mu)
        lam = friction_factor(Re, e.k, e.D, sys.cfg.friction) if q != 0.0 else math.nan
        prof = PipeProfile(s=s.copy(), P=m.P.copy(), T=np.asarray(T, dtype=float).copy(), rho=rho.copy(),
                           v=G / rho, Qm=q, lam=np.full(len(s) - 1, lam), Re=np.full(len(s) - 1, Re),
                           D=e.D, composition=c, dense=sweep.dense[e.id].copy())
        profiles[e.id] = prof
        v_max[e.id] = prof.v_max
    P = {nid: float(x[sys.ni[nid]]) for nid in sys.node_ids}
    return SolutionState(net=sys.net, bounds=list(bounds), P=P, T={k: float(v) for k, v in sweep.T_node.items()},
                         composition=dict(sweep.comp_node), Qm=Qm, v_max=v_max, profiles=profiles,
                         report=report, reference_flow=dict(sweep.reference_flow))


def hydraulic_residual(net: Network, bounds, x: np.ndarray, T_fields: dict[str, np.ndarray] | None = None,
                       cfg: SolverConfig | None = None, eos=None, jacobian: bool = True,
                       end_compositions: dict[str, tuple[Composition, Composition]] | None = None):
    """Residual vector and sparse Jacobian at ``x`` = [node P..., edge Qm...].

    Temperature fields default to each pipe's soil temperature and the
    composition to pure CO2; ``end_compositions`` gives (from, to) node
    mixtures for the upwinded column. Exposed for Jacobian verification.
    """
    cfg = cfg or SolverConfig()
    sys = _System(net, list(bounds), cfg, fluids._eos(eos))
    sys.end_comp = dict(end_compositions or {})
    for e in sys.edges:
        sys.comp_edge[e.id] = PURE_CO2
        if isinstance(e, Pipe):
            T = None if T_fields is None else T_fields.get(e.id)
            sys.T_field[e.id] = np.full(len(sys.grids[e.id]), e.T_s) if T is None else np.asarray(T)
    return sys.evaluate(np.asarray(x, dtype=float), jacobian)


def unknown_layout(net: Network) -> tuple[list[str], list[str]]:
    """Ordering of the unknown vector: node ids, then edge ids."""
    return [n.id for n in net.nodes], [e.id for e in net.edges]


# --- diagnostics ------------------------------------------------------------

@dataclass(frozen=True)
class DenseViolation:
    edge: str
    station: int
    s: float
    P: float
    T: float
    margin: float  # Pa above the dense-phase boundary (negative = outside)
    severity: str  # "violation" or "warning"


def check_dense_phase(sol: SolutionState, warning_margin: float = 5e5, eos=None) -> list[DenseViolation]:
    """One entry per pipe whose worst station is outside, or within the margin of, the dense region."""
    eos = fluids._eos(eos)
    out = []
    for eid in sorted(sol.profiles):
        prof = sol.profiles[eid]
        worst = None
        for i, (P, T) in enumerate(zip(prof.P, prof.T)):
            margin = P - fluids.phase_boundary_pressure(T, eos)
            dense = fluids.is_dense(P, T, prof.composition, eos)
            if not dense and margin > 0.0:
                margin = -0.0
            if worst is None or margin < worst[0]:
                worst = (margin, i, dense)
        if worst is None:
            continue
        margin, i, dense = worst
        if not dense:
            sev = "violation"
        elif margin < warning_margin:
            sev = "warning"
        else:
            continue
        out.append(DenseViolation(eid, i, float(prof.s[i]), float(prof.P[i]), float(prof.T[i]), float(margin), sev))
    return out


def flow_directions(sol: SolutionState, tol: float | None = None) -> dict[str, int]:
    """+1 along from->to, -1 against, 0 for (numerically) zero flow."""
    tol = SolverConfig().abs_tol_flow if tol is None else tol
    return {eid: 0 if abs(q) <= tol else (1 if q > 0 else -1) for eid, q in sol.Qm.items()}


def envelope_violations(sol: SolutionState, P_min: float, P_max: float, tol: float = 1e4) -> list[tuple[str, float]]:
    """(location, P) for every node and pipe station outside [P_min, P_max] by more than ``tol`` Pa."""
    out = []
    for nid, P in sorted(sol.P.items()):
        if P < P_min - tol or P > P_max + tol:
            out.append((f"node {nid}", P))
    for eid in sorted(sol.profiles):
        prof = sol.profiles[eid]
        lo, hi = float(prof.P.min()), float(prof.P.max())
        if lo < P_min - tol:
            out.append((f"pipe {eid}", lo))
        elif hi > P_max + tol:
            out.append((f"pipe {eid}", hi))
    return out


# --- export -----------------------------------------------------------------

def _fmt(x: float, nd: int = 6) -> str:
    return f"{x:.{nd}f}"


def write_nodes_csv(sol: SolutionState, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "P_barg", "T_C", "xCO2", "xH2", "xO2", "xN2"])
        for n in sol.net.nodes:
            c = sol.composition[n.id]
            w.writerow([n.id, _fmt(pa_to_barg(sol.P[n.id])), _fmt(k_to_c(sol.T[n.id]))]
                       + [f"{v:.9f}" for v in c.fractions])


def write_edges_csv(sol: SolutionState, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "Qm_kgs", "vmax_ms", "dense_ok"])
        for e in sol.net.edges:
            prof = sol.profiles.get(e.id)
            ok = prof.dense_ok if prof is not None else True
            w.writerow([e.id, _fmt(sol.Qm[e.id]), _fmt(sol.v_max[e.id]), str(ok).lower()])


def solution_to_geojson(sol: SolutionState) -> dict:
    doc = network_to_geojson(sol.net)
    for feat in doc["features"]:
        props = feat["properties"]
        fid = props["id"]
        if feat["geometry"]["type"] == "Point":
            c = sol.composition[fid]
            props.update({"P_barg": round(pa_to_barg(sol.P[fid]), 6), "T_C": round(k_to_c(sol.T[fid]), 6),
                          **{f"x{s}": round(v, 9) for s, v in zip(SPECIES, c.fractions)}})
        else:
            prof = sol.profiles.get(fid)
            props.update({"Qm_kgs": round(sol.Qm[fid], 6), "vmax_ms": round(sol.v_max[fid], 6),
                          "dense_ok": prof.dense_ok if prof is not None else True})
    return doc


def write_solution_geojson(sol: SolutionState, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(solution_to_geojson(sol), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_phase_diagram_csv(sol: SolutionState, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "T_C", "P_barg"])
        for n in sol.net.nodes:
            w.writerow([n.id, _fmt(k_to_c(sol.T[n.id])), _fmt(pa_to_barg(sol.P[n.id]))])


def write_saturation_csv(path: str | Path, n: int = 60, eos=None) -> None:
    """Sampled CO2 saturation curve from the triple point to the critical point."""
    eos = fluids._eos(eos)
    Tc, _ = eos.co2_critical_point
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T_C", "Psat_barg"])
        for T in np.linspace(fluids.T_TRIPLE_CO2, Tc, n):
            w.writerow([_fmt(k_to_c(T)), _fmt(pa_to_barg(eos.saturation_pressure(T)))])

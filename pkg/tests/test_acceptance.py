"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import csv
import json
import math
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from co2net import cli, fluids
from co2net.design import EnvelopeConfig, run_design
from co2net.fluids import PURE_CO2, Composition
from co2net.hydraulics import friction_factor, friction_hofer, friction_nikuradse, reynolds
from co2net.network import BoundaryFlow, Network, Node, Pipe, Pump, save_bounds, save_network
from co2net.solver import check_dense_phase, hydraulic_residual, solve_steady_state
from co2net.units import G, barg_to_pa, pa_to_barg

from conftest import line_network, source_to_ref
from oracles import min_pumps_search, reach_table

ENV = EnvelopeConfig()
COMPOSITIONS = {"100/0/0": PURE_CO2, "98/1/1": Composition.from_percent(98, 1, 1),
                "96/2/2": Composition.from_percent(96, 2, 2)}


@pytest.fixture
def verdict(capsys):
    def emit(number, name, ok, detail, elapsed, budget):
        ok = ok and elapsed < budget
        with capsys.disabled():
            print(f"\ncriterion {number:>2} {name}: {'PASS' if ok else 'FAIL'} "
                  f"({detail}; {elapsed:.2f} s of {budget:g} s)")
        return ok
    return emit


def read_nodes(path):
    with open(path, newline="") as fh:
        return {row["id"]: float(row["P_barg"]) for row in csv.DictReader(fh)}


# --- 1 ----------------------------------------------------------------------

def pumped_corridor(total_km=6937.6, n_pumps=9):
    """A chain of equal pipes joined by pump stations."""
    n = n_pumps + 1
    L = total_km * 1000.0 / n
    nodes, pipes, pumps = [], [], []
    for i in range(n):
        nodes += [Node(f"a{i}", 50.0, 5.0 + i), Node(f"b{i}", 50.0, 5.9 + i)]
        pipes.append(Pipe(f"p{i}", f"a{i}", f"b{i}", L, 0.661, dn_label="DN700"))
        if i < n_pumps:
            pumps.append(Pump(f"k{i}", f"b{i}", f"a{i + 1}"))
    return Network(nodes, pipes, pumps)


def test_criterion_1_cost_table(tmp_path, capsys, verdict):
    path = tmp_path / "germany.geojson"
    save_network(pumped_corridor(), path)
    expected = {"DN500": 17.3, "DN700": 20.8, "DN900": 24.3}
    got = {}
    t0 = time.perf_counter()
    for dn in expected:
        capsys.readouterr()
        assert cli.main(["report", "--network", str(path), "--uniform-dn", dn, "--json"]) == 0
        got[dn] = json.loads(capsys.readouterr().out)
    elapsed = time.perf_counter() - t0
    ok = all(abs(got[dn]["pipeline_cost_eur"] / 1e9 - v) <= 0.005 * v for dn, v in expected.items())
    ok = ok and all(r["pump_count"] == 9 and r["pump_cost_eur"] == 67.5e6 for r in got.values())
    ok = ok and all(sum(r["lengths_km"].values()) == pytest.approx(6937.6) for r in got.values())
    detail = ", ".join(f"{dn} {got[dn]['pipeline_cost_eur'] / 1e9:.4f} bn" for dn in expected)
    assert verdict(1, "cost table", ok, detail + f", pumps {got['DN700']['pump_cost_eur'] / 1e6:.1f} M", elapsed, 1.0)


# --- 2 ----------------------------------------------------------------------

def test_criterion_2_velocity(verdict):
    Qm = 1268.4
    t0 = time.perf_counter()
    v, rho = {}, {}
    for dn, D in (("DN700", 0.661), ("DN900", 0.882)):
        net = line_network(1, 20e3, D=D, dn_label=dn)
        sol = solve_steady_state(net, source_to_ref(net, Qm))
        prof = sol.profiles["p0"]
        assert prof.dense_ok
        v[dn], rho[dn] = sol.v_max["p0"], float(prof.rho.min())
        # the reported velocity is the mass flow over the solved density
        assert v[dn] == pytest.approx(Qm / (rho[dn] * math.pi * D * D / 4), rel=1e-9)
    elapsed = time.perf_counter() - t0
    ok = abs(v["DN700"] / 4.0 - 1) <= 0.15 and abs(v["DN900"] / 2.1 - 1) <= 0.15
    detail = f"rho {rho['DN700']:.0f} kg/m3, DN700 {v['DN700']:.2f} m/s, DN900 {v['DN900']:.2f} m/s"
    assert verdict(2, "velocity", ok, detail, elapsed, 1.0)


# --- 3 ----------------------------------------------------------------------

def test_criterion_3_hydrostatic(verdict):
    net = Network((Node("top", h=100.0), Node("bottom", h=0.0)), (Pipe("v", "top", "bottom", 100.0, 0.661),))
    P_top = barg_to_pa(100.0)
    t0 = time.perf_counter()
    sol = solve_steady_state(net, [BoundaryFlow("top", reference=True, P_ref=P_top)])
    elapsed = time.perf_counter() - t0
    T = sol.T["top"]
    oracle = solve_ivp(lambda z, P: [fluids.density(P[0], T) * G], (0.0, 100.0), [P_top],
                       rtol=1e-11, atol=1e-6).y[0, -1]
    dP, dP_oracle = sol.P["bottom"] - P_top, oracle - P_top
    err = abs(dP / dP_oracle - 1)
    ok = sol.Qm["v"] == 0.0 and err <= 2e-3
    assert verdict(3, "hydrostatic", ok, f"dP {dP / 1e5:.4f} bar vs {dP_oracle / 1e5:.4f} bar, rel {err:.1e}",
                   elapsed, 1.0)


# --- 4 ----------------------------------------------------------------------

def test_criterion_4_darcy(verdict):
    Qm, D = 500.0, 0.661
    net = line_network(1, 10e3, D=D)
    t0 = time.perf_counter()
    sol = solve_steady_state(net, [BoundaryFlow("n0", Qm, reference=True, P_ref=barg_to_pa(150.0)),
                                   BoundaryFlow("n1", -Qm)])
    elapsed = time.perf_counter() - t0
    prof = sol.profiles["p0"]
    rho = float(np.mean(prof.rho))
    v = Qm / (rho * math.pi * D * D / 4)
    lam = friction_factor(reynolds(Qm, D, fluids.PengRobinson().viscosity), 3.6e-5, D)
    darcy = lam / (2 * D) * rho * v * v * 10e3
    dP = sol.P["n0"] - sol.P["n1"]
    err = abs(dP / darcy - 1)
    ok = prof.rho.max() / prof.rho.min() - 1 < 5e-3 and err <= 1e-2
    assert verdict(4, "darcy", ok, f"dP {dP / 1e5:.4f} bar vs {darcy / 1e5:.4f} bar, rel {err:.1e}", elapsed, 1.0)


# --- 5 ----------------------------------------------------------------------

def test_criterion_5_friction(verdict):
    k, D = 3.6e-5, 0.661
    t0 = time.perf_counter()
    hofer, nik = friction_hofer(1e8, k, D), friction_nikuradse(k, D)
    at_design = friction_hofer(2.443e7, k, D)
    elapsed = time.perf_counter() - t0
    ok = abs(hofer / nik - 1) <= 0.05 and abs(at_design - 0.0109) <= 3e-4
    detail = f"Hofer {hofer:.5f} vs Nikuradse {nik:.5f}, Hofer(2.443e7) {at_design:.5f}"
    assert verdict(5, "friction", ok, detail, elapsed, 1.0)


# --- 6 ----------------------------------------------------------------------

def test_criterion_6_phase_boundary(verdict):
    t0 = time.perf_counter()
    P_273 = fluids.saturation_pressure(273.15)
    Tc, Pc = fluids.DEFAULT_EOS.co2_critical_point
    P_c = fluids.saturation_pressure(Tc)
    grid = [(barg_to_pa(p), t + 273.15) for p in np.linspace(85.0, 180.0, 50) for t in np.linspace(5.0, 45.0, 50)]
    dense = sum(fluids.is_dense(P, T) for P, T in grid)
    elapsed = time.perf_counter() - t0
    ok = abs(P_273 / 3.49e6 - 1) <= 0.05 and abs(P_c / Pc - 1) <= 1e-6 and dense == len(grid)
    detail = f"P_sat(273.15 K) {P_273 / 1e6:.3f} MPa, critical rel {abs(P_c / Pc - 1):.1e}, dense {dense}/{len(grid)}"
    assert verdict(6, "phase boundary", ok, detail, elapsed, 5.0)


# --- 7 ----------------------------------------------------------------------

def test_criterion_7_envelope_feasibility(verdict):
    n, L, Q = 100, 20e3, 1000.0
    net = line_network(n, L)
    t0 = time.perf_counter()
    result = run_design(net, source_to_ref(net, Q), uniform_dn="DN700")
    elapsed = time.perf_counter() - t0
    expected = min_pumps_search(reach_table(net, Q), n)
    sol = result.solution
    P_lo = min(float(p.P.min()) for p in sol.profiles.values())
    P_hi = max(float(p.P.max()) for p in sol.profiles.values())
    dense_bad = [v for v in check_dense_phase(sol) if v.severity == "violation"]
    all_dense = all(bool(np.all(sol.dense_flags(e))) for e in sol.profiles)
    count = len(result.network.pumps)
    ok = (not result.violations and ENV.P_min <= P_lo and P_hi <= ENV.P_max and not dense_bad and all_dense
          and count == expected)
    detail = (f"{count} pumps vs minimal {expected}, P in [{pa_to_barg(P_lo):.2f}, {pa_to_barg(P_hi):.2f}] barg, "
              f"dense {all_dense}")
    assert verdict(7, "envelope feasibility", ok, detail, elapsed, 30.0)


# --- 8 ----------------------------------------------------------------------

def test_criterion_8_elevation_ablation(tmp_path, verdict):
    # climb 300 m, then a -300 m descent back to the valley floor
    heights = [0.0, 300.0, 0.0, 0.0, 0.0]
    net = line_network(4, 10e3, heights=heights)
    save_network(net, tmp_path / "net.geojson")
    save_bounds([BoundaryFlow("n0", 500.0, reference=True, P_ref=barg_to_pa(170.0)), BoundaryFlow("n4", -500.0)],
                tmp_path / "bounds.json")
    base = ["simulate", "--network", str(tmp_path / "net.geojson"), "--bounds", str(tmp_path / "bounds.json")]
    t0 = time.perf_counter()
    assert cli.main(base + ["--out", str(tmp_path / "sloped")]) == 0
    assert cli.main(base + ["--out", str(tmp_path / "flat"), "--flat-elevation"]) == 0
    elapsed = time.perf_counter() - t0
    sloped, flat = read_nodes(tmp_path / "sloped" / "nodes.csv"), read_nodes(tmp_path / "flat" / "nodes.csv")
    spread_s = max(sloped.values()) - min(sloped.values())
    spread_f = max(flat.values()) - min(flat.values())
    order = [f"n{i}" for i in range(5)]
    inverted = [(a, b) for i, a in enumerate(order) for b in order[i + 1:] if sloped[a] < sloped[b]]
    flat_monotone = all(flat[a] > flat[b] for a, b in zip(order, order[1:]))
    ok = spread_f < spread_s and bool(inverted) and flat_monotone
    detail = f"spread sloped {spread_s:.2f} bar, flat {spread_f:.2f} bar, upstream-lower pairs {inverted[:2]}"
    assert verdict(8, "elevation ablation", ok, detail, elapsed, 10.0)


# --- 9 ----------------------------------------------------------------------

def test_criterion_9_impurity_robustness(verdict):
    n, L, Q = 15, 20e3, 1000.0
    net = line_network(n, L)
    t0 = time.perf_counter()
    rows = []
    for name, comp in COMPOSITIONS.items():
        result = run_design(net, source_to_ref(net, Q, composition=comp), uniform_dn="DN700")
        sol = result.solution
        dense_bad = [v for v in check_dense_phase(sol) if v.severity == "violation"]
        good = sol.report.converged and sol.dense_ok and not dense_bad and not result.violations
        rows.append((name, good, len(result.network.pumps)))
    elapsed = time.perf_counter() - t0
    ok = all(good for _, good, _ in rows)
    detail = ", ".join(f"{name}: {'ok' if good else 'bad'} with {k} pumps" for name, good, k in rows)
    assert verdict(9, "impurity robustness", ok, detail, elapsed, 60.0)


# --- 10 ---------------------------------------------------------------------

def random_network(rng):
    n = int(rng.integers(2, 6))
    nodes = [Node(f"n{i}", h=float(rng.uniform(-50, 50))) for i in range(n)]
    pipes = [Pipe(f"p{i}", f"n{int(rng.integers(0, i))}", f"n{i}", float(rng.uniform(1e3, 2e4)),
                  float(rng.uniform(0.3, 0.8))) for i in range(1, n)]
    if n > 3 and rng.random() < 0.5:
        pipes.append(Pipe("loop", "n1", f"n{n - 1}", float(rng.uniform(1e3, 2e4)), 0.4))
    comps = list(COMPOSITIONS.values())
    bounds = [BoundaryFlow("n0", reference=True, P_ref=barg_to_pa(float(rng.uniform(110, 170))))]
    for i in range(1, n):
        rate = float(rng.uniform(10, 150)) * (1 if rng.random() < 0.5 else -1)
        bounds.append(BoundaryFlow(f"n{i}", rate, comps[int(rng.integers(0, 3))]))
    return Network(tuple(nodes), tuple(pipes)), bounds


def species_imbalance(sol):
    """Worst relative per-species molar imbalance over all nodes."""
    worst = 0.0
    for node in sol.net.nodes:
        net_flow, scale = np.zeros(len(fluids.SPECIES)), 0.0
        for e in sol.net.edges:
            if node.id not in (e.from_node, e.to_node) or sol.Qm[e.id] == 0.0:
                continue
            c = sol.profiles[e.id].composition
            molar = np.array(c.fractions) * sol.Qm[e.id] / c.molar_mass
            net_flow += molar if e.to_node == node.id else -molar
            scale += abs(sol.Qm[e.id]) / c.molar_mass
        for b in sol.bounds:
            if b.node != node.id:
                continue
            rate = sol.reference_flow[b.node] if b.reference else b.mass_rate
            c = b.composition if rate > 0 else sol.composition[node.id]
            net_flow += np.array(c.fractions) * rate / c.molar_mass
            scale += abs(rate) / c.molar_mass
        if scale > 0:
            worst = max(worst, float(np.abs(net_flow).max() / scale))
    return worst


def jacobian_error(net, bounds, rng):
    n_nodes = len(net.nodes)
    x = np.array([barg_to_pa(float(rng.uniform(100, 170))) for _ in range(n_nodes)]
                 + [0.0 if rng.random() < 0.2 else float(rng.uniform(10, 300)) * (1 if rng.random() < 0.5 else -1)
                    for _ in net.pipes])
    _, J = hydraulic_residual(net, bounds, x)
    J = J.toarray()

    def central(k, h):
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        return (hydraulic_residual(net, bounds, xp, jacobian=False)[0]
                - hydraulic_residual(net, bounds, xm, jacobian=False)[0]) / (2 * h)

    worst = 0.0
    for k in range(len(x)):
        h = 10.0 if k < n_nodes else 1e-2
        col = (4.0 * central(k, h / 2) - central(k, h)) / 3.0
        scale = np.maximum(np.abs(col), np.abs(J[:, k])).max()
        if scale > 0:
            worst = max(worst, float(np.abs(col - J[:, k]).max() / scale))
    return worst


def test_criterion_10_conservation(verdict):
    rng = np.random.default_rng(20261015)
    t0 = time.perf_counter()
    balance, species, jac = 0.0, 0.0, 0.0
    for _ in range(100):
        net, bounds = random_network(rng)
        sol = solve_steady_state(net, bounds)
        balance = max(balance, max(abs(v) for v in sol.node_balance().values()))
        species = max(species, species_imbalance(sol))
        jac = max(jac, jacobian_error(net, bounds, rng))
    elapsed = time.perf_counter() - t0
    ok = balance < 1e-6 and species < 1e-9 and jac <= 1e-5
    detail = f"mass {balance:.1e} kg/s, species {species:.1e}, Jacobian {jac:.1e} over 100 networks"
    assert verdict(10, "conservation", ok, detail, elapsed, 120.0)

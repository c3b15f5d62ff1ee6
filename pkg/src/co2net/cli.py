"""co2net command line: topology, simulate, design, report."""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, design, fluids, network, solver, topology
from .fluids import Composition
from .units import barg_to_pa, c_to_k

log = logging.getLogger("co2net")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_UNREACHABLE = 2
EXIT_DENSE = 3
EXIT_INFEASIBLE = 4
EXIT_SOLVER = 5


class InputError(Exception):
    pass


# --- configuration ----------------------------------------------------------

_ENVELOPE_KEYS = {
    "P_min_barg": ("P_min", barg_to_pa),
    "P_max_barg": ("P_max", barg_to_pa),
    "setpoint_barg": ("setpoint", barg_to_pa),
    "cooler_T_initial_C": ("cooler_T_initial", c_to_k),
    "cooler_T_max_C": ("cooler_T_max", c_to_k),
    "cooler_step_K": ("cooler_step", float),
    "v_max_ms": ("v_max", float),
}
_SOLVER_KEYS = {"rel_tol": float, "abs_tol_flow": float, "max_outer_iterations": int,
                "max_newton_iterations": int, "damping": float, "ds": float, "friction": str}


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return doc


def _merged(args: argparse.Namespace, config: dict, key: str, default=None):
    """Flag value if given, else config file value, else default."""
    value = getattr(args, key, None)
    if value is not None and value is not False:
        return value
    return config.get(key, default)


def _envelope(config: dict) -> design.EnvelopeConfig:
    raw = config.get("envelope", {})
    kw = {}
    for key, value in raw.items():
        if key not in _ENVELOPE_KEYS:
            raise InputError(f"unknown envelope key {key!r}")
        name, conv = _ENVELOPE_KEYS[key]
        kw[name] = conv(value)
    try:
        return design.EnvelopeConfig(**kw)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _solver_config(config: dict) -> solver.SolverConfig:
    raw = config.get("solver", {})
    kw = {}
    for key, value in raw.items():
        if key not in _SOLVER_KEYS:
            raise InputError(f"unknown solver key {key!r}")
        kw[key] = _SOLVER_KEYS[key](value)
    return solver.SolverConfig(**kw)


def parse_composition(text: str | list | None) -> Composition | None:
    """'96,2,2' (percent CO2,H2,O2[,N2]) or a list of the same numbers."""
    if text is None:
        return None
    parts = text if isinstance(text, list) else text.split(",")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise InputError(f"composition {text!r}: expected comma-separated percentages") from None
    if not 1 <= len(values) <= 4:
        raise InputError(f"composition {text!r}: give CO2,H2,O2[,N2] percentages")
    values += [0.0] * (4 - len(values))
    if abs(sum(values) - 100.0) > 1e-6:
        raise InputError(f"composition {text!r}: percentages sum to {sum(values)}, not 100")
    try:
        return Composition.from_percent(*values)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _input_path(value: str | None, what: str) -> Path:
    if value is None:
        raise InputError(f"missing {what}")
    p = Path(value)
    if not p.is_file():
        raise InputError(f"{what} {value} does not exist")
    return p


def _prepare_out(out: str | None, inputs: list[Path], names: list[str]) -> Path:
    if out is None:
        raise InputError("missing --out directory")
    out_dir = Path(out)
    targets = {(out_dir / n).resolve() for n in names}
    for p in inputs:
        if p.resolve() in targets:
            raise InputError(f"output would overwrite input {p}")
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _write_json(path: Path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _sidecar(out_dir: Path, command: str, argv: list[str], config: dict, inputs: list[Path]) -> None:
    """Run metadata lives apart from the data files so those stay bit-identical."""
    _write_json(out_dir / "run_metadata.json", {
        "command": command,
        "argv": argv,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "co2net_version": __version__,
        "python": platform.python_version(),
        "finished_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    })


def _load_inputs(args, config):
    net_path = _input_path(_merged(args, config, "network"), "network file")
    bounds_path = _input_path(_merged(args, config, "bounds"), "boundary file")
    eos_value = _merged(args, config, "eos")
    eos_path = _input_path(eos_value, "EoS parameter file") if eos_value else None
    try:
        net = network.load_network(net_path)
        bounds = network.load_bounds(bounds_path)
        eos = fluids.load_eos(eos_path)
    except (network.FormatError, ValueError, KeyError) as exc:
        raise InputError(str(exc)) from None
    comp = parse_composition(_merged(args, config, "composition"))
    if comp is not None:
        bounds = [replace(b, composition=comp) for b in bounds]
    if _merged(args, config, "flat_elevation", False):
        net = net.with_elevations(0.0)
    inputs = [net_path, bounds_path] + ([eos_path] if eos_path else [])
    return net, bounds, eos, inputs


# --- commands ---------------------------------------------------------------

def cmd_topology(args, config, argv) -> int:
    sites_path = _input_path(_merged(args, config, "sites"), "sites file")
    corr_path = _input_path(_merged(args, config, "corridors"), "corridor file")
    plan_value = _merged(args, config, "plan")
    try:
        sites = topology.read_sites(sites_path)
        corridors = topology.load_corridors(corr_path)
        plan = None
        if plan_value:
            with open(_input_path(plan_value, "plan file")) as fh:
                plan = [tuple(pair) for pair in json.load(fh)]
        comp = parse_composition(_merged(args, config, "composition")) or fluids.PURE_CO2
        result = topology.build_network(sites, corridors, plan)
        bounds = topology.assign_boundary_flows(result.network, sites, _merged(args, config, "scenario", "sites"),
                                                result.site_nodes, composition=comp)
    except (network.FormatError, json.JSONDecodeError, topology.FlowBalanceError, ValueError) as exc:
        raise InputError(str(exc)) from None
    inputs = [sites_path, corr_path]
    names = ["network.geojson", "bounds.json", "build_report.json", "run_metadata.json"]
    out_dir = _prepare_out(_merged(args, config, "out"), inputs, names)
    network.save_network(result.network, out_dir / "network.geojson")
    network.save_bounds(bounds, out_dir / "bounds.json")
    _write_json(out_dir / "build_report.json", result.report)
    _sidecar(out_dir, "topology", argv, config, inputs)
    print(f"network: {len(result.network.nodes)} nodes, {len(result.network.pipes)} pipes, "
          f"{result.network.total_length / 1000.0:.1f} km")
    if result.report["unreachable_pairs"]:
        for a, b in result.report["unreachable_pairs"]:
            print(f"unreachable: {a} -> {b}", file=sys.stderr)
        return EXIT_UNREACHABLE
    return EXIT_OK


def _write_solution(sol: solver.SolutionState, out_dir: Path) -> None:
    solver.write_nodes_csv(sol, out_dir / "nodes.csv")
    solver.write_edges_csv(sol, out_dir / "edges.csv")
    solver.write_solution_geojson(sol, out_dir / "solution.geojson")
    solver.write_phase_diagram_csv(sol, out_dir / "phase_diagram.csv")


def _report_dense(sol: solver.SolutionState, eos) -> int:
    bad = [v for v in solver.check_dense_phase(sol, eos=eos) if v.severity == "violation"]
    for v in bad:
        print(f"dense-phase violation: pipe {v.edge} at s={v.s:.0f} m "
              f"({v.P / 1e5 - 1.01325:.2f} barg, {v.T - 273.15:.2f} degC)", file=sys.stderr)
    return EXIT_DENSE if bad else EXIT_OK


def cmd_simulate(args, config, argv) -> int:
    net, bounds, eos, inputs = _load_inputs(args, config)
    cfg = _solver_config(config)
    problems = network.validate(net, bounds)
    if problems:
        raise InputError("; ".join(str(p) for p in problems))
    names = ["nodes.csv", "edges.csv", "solution.geojson", "phase_diagram.csv", "saturation.csv",
             "run_metadata.json"]
    out_dir = _prepare_out(_merged(args, config, "out"), inputs, names)
    try:
        sol = solver.solve_steady_state(net, bounds, cfg, eos=eos)
    except solver.SolverError as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    _write_solution(sol, out_dir)
    solver.write_saturation_csv(out_dir / "saturation.csv", eos=eos)
    _sidecar(out_dir, "simulate", argv, config, inputs)
    print(f"converged in {sol.report.outer_iterations} outer iterations")
    return _report_dense(sol, eos)


def _catalog(args, config) -> design.DiameterCatalog:
    try:
        return design.DiameterCatalog.preset(_merged(args, config, "catalog", "default"))
    except ValueError as exc:
        raise InputError(str(exc)) from None


def cmd_design(args, config, argv) -> int:
    net, bounds, eos, inputs = _load_inputs(args, config)
    cat = _catalog(args, config)
    env = _envelope(config)
    cfg = _solver_config(config)
    uniform = _merged(args, config, "uniform_dn")
    if uniform is not None and uniform not in cat.labels():
        raise InputError(f"--uniform-dn {uniform}: not in catalog {cat.labels()}")
    problems = network.validate(net, bounds)
    if problems:
        raise InputError("; ".join(str(p) for p in problems))
    names = ["network_design.geojson", "bounds_design.json", "cost_report.json", "cost_report.txt",
             "nodes.csv", "edges.csv", "solution.geojson", "phase_diagram.csv", "run_metadata.json"]
    out_dir = _prepare_out(_merged(args, config, "out"), inputs, names)
    try:
        result = design.run_design(net, bounds, cat, env, cfg, uniform_dn=uniform, eos=eos)
    except design.InfeasibleDesign as exc:
        for issue in exc.issues:
            print(f"infeasible: {issue['edge']}: {issue['reason']}", file=sys.stderr)
        _write_json(out_dir / "cost_report.json", {"infeasible": exc.issues})
        return EXIT_INFEASIBLE
    except solver.SolverError as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    network.save_network(result.network, out_dir / "network_design.geojson")
    network.save_bounds(result.bounds, out_dir / "bounds_design.json")
    design.write_cost_report(result.cost, out_dir / "cost_report.json")
    (out_dir / "cost_report.txt").write_text(result.cost.to_table() + "\n")
    if result.solution is not None:
        _write_solution(result.solution, out_dir)
    _sidecar(out_dir, "design", argv, config, inputs)
    print(result.cost.to_table())
    if result.violations:
        for v in result.violations:
            print(f"verification: {v}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return _report_dense(result.solution, eos)


def cmd_report(args, config, argv) -> int:
    net_path = _input_path(_merged(args, config, "network"), "network file")
    try:
        net = network.load_network(net_path)
    except (network.FormatError, ValueError, KeyError) as exc:
        raise InputError(str(exc)) from None
    cat = _catalog(args, config)
    uniform = _merged(args, config, "uniform_dn")
    try:
        if uniform is not None:
            net = design.with_uniform_dn(net, cat, uniform)
        report = design.cost_report(net, cat, float(_merged(args, config, "pump_cost", design.PUMP_STATION_COST)))
    except (KeyError, ValueError) as exc:
        raise InputError(str(exc.args[0]) if exc.args else str(exc)) from None
    out = _merged(args, config, "out")
    if out is not None:
        out_dir = _prepare_out(out, [net_path], ["cost_report.json", "cost_report.txt", "run_metadata.json"])
        design.write_cost_report(report, out_dir / "cost_report.json")
        (out_dir / "cost_report.txt").write_text(report.to_table() + "\n")
        _sidecar(out_dir, "report", argv, config, [net_path])
    if getattr(args, "json", False):
        print(json.dumps(report.to_json(), indent=1, sort_keys=True))
    else:
        print(report.to_table())
    return EXIT_OK


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="co2net", description=__doc__)
    parser.add_argument("--version", action="version", version=f"co2net {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration; flags override its values")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("topology", help="build a network from sites and gas corridors")
    common(p)
    p.add_argument("--sites", help="sites CSV (type,role,lat,lon,q_t_per_a)")
    p.add_argument("--corridors", help="corridor GeoJSON (LineStrings)")
    p.add_argument("--plan", help="JSON list of [source_id, sink_id] routing pairs")
    p.add_argument("--scenario", choices=sorted(topology.SCENARIOS))
    p.add_argument("--composition", help="percent CO2,H2,O2[,N2], e.g. 96,2,2")

    for name, helptext in (("simulate", "solve the steady state of a network"),
                           ("design", "assign diameters, place pumps and relax cooling")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--network", help="network GeoJSON")
        p.add_argument("--bounds", help="boundary flow JSON")
        p.add_argument("--eos", help="EoS parameter JSON")
        p.add_argument("--composition", help="percent CO2,H2,O2[,N2], e.g. 96,2,2")
        p.add_argument("--flat-elevation", action="store_true", help="set all node heights to 0")
        if name == "design":
            p.add_argument("--catalog", choices=["default", "ait"])
            p.add_argument("--uniform-dn", help="use one DN for every pipe instead of assigning diameters")

    p = sub.add_parser("report", help="cost table of a network")
    common(p)
    p.add_argument("--network", help="network GeoJSON with DN labels")
    p.add_argument("--catalog", choices=["default", "ait"])
    p.add_argument("--uniform-dn", help="relabel every pipe with this DN first")
    p.add_argument("--pump-cost", type=float, help="cost per pump station in EUR")
    p.add_argument("--json", action="store_true", help="print JSON instead of the table")
    return parser


COMMANDS = {"topology": cmd_topology, "simulate": cmd_simulate, "design": cmd_design, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        config = _load_config(args.config)
        return COMMANDS[args.command](args, config, argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

"""Network data model: nodes, pipes, pumps, boundary flows and validation.

Values are immutable after construction. The GeoJSON interchange keeps SI
units; pump pressures are echoed in barg for readability.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict, deque
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable

from .fluids import PURE_CO2, Composition, DomainError
from .units import barg_to_pa, pa_to_barg

NODE_KINDS = ("junction", "source", "sink", "hub", "border")
PUMP_MODES = ("outlet_setpoint", "inlet_setpoint")

P_MIN_BARG = 85.0
P_MAX_BARG = 180.0
COOLER_T_MIN = 283.15
COOLER_T_MAX = 318.15
DEFAULT_REFERENCE_BARG = 125.0
DEFAULT_T_IN = 283.15
HOURS_PER_YEAR = 8760.0


@dataclass(frozen=True)
class Node:
    id: str
    lat: float = 0.0
    lon: float = 0.0
    h: float = 0.0
    kind: str = "junction"

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0 or not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"node {self.id!r}: coordinates out of range ({self.lat}, {self.lon})")
        if not math.isfinite(self.h):
            raise ValueError(f"node {self.id!r}: elevation must be finite")
        if self.kind not in NODE_KINDS:
            raise ValueError(f"node {self.id!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    L: float  # m
    D: float  # m, inner diameter
    k: float = 3.6e-5  # m, roughness
    c_h: float = 2.0  # W/(m2 K)
    T_s: float = 283.15  # K, soil temperature
    dn_label: str | None = None

    def __post_init__(self):
        if not (self.L > 0 and self.D > 0 and self.k >= 0 and self.c_h >= 0 and self.T_s > 0):
            raise ValueError(f"pipe {self.id!r}: invalid geometry/thermal parameters")

    @property
    def area(self) -> float:
        return math.pi * self.D ** 2 / 4.0


@dataclass(frozen=True)
class Pump:
    """Free pump: holds its outlet (or inlet) pressure at ``setpoint``.

    A disabled pump is a pass-through with equal inlet and outlet pressure and
    no cooling.
    """

    id: str
    from_node: str
    to_node: str
    mode: str = "outlet_setpoint"
    setpoint: float = barg_to_pa(170.0)  # Pa abs
    cooler_T_out: float = COOLER_T_MIN  # K
    enabled: bool = True

    def __post_init__(self):
        if self.mode not in PUMP_MODES:
            raise ValueError(f"pump {self.id!r}: unknown mode {self.mode!r}")
        if not COOLER_T_MIN - 1e-9 <= self.cooler_T_out <= COOLER_T_MAX + 1e-9:
            raise ValueError(f"pump {self.id!r}: cooler outlet {self.cooler_T_out} K outside 10-45 degC")
        if not self.setpoint > 0:
            raise ValueError(f"pump {self.id!r}: setpoint must be positive")


@dataclass(frozen=True)
class BoundaryFlow:
    """Injection (positive) or withdrawal (negative) at a node.

    A reference node instead holds ``P_ref`` and absorbs the imbalance of its
    component; its ``mass_rate`` is ignored by the solver.
    """

    node: str
    mass_rate: float = 0.0  # kg/s
    composition: Composition = PURE_CO2
    T_in: float = DEFAULT_T_IN
    reference: bool = False
    P_ref: float | None = None  # Pa abs

    def __post_init__(self):
        if self.reference and self.P_ref is None:
            object.__setattr__(self, "P_ref", barg_to_pa(DEFAULT_REFERENCE_BARG))
        if not math.isfinite(self.mass_rate):
            raise ValueError(f"boundary {self.node!r}: mass rate must be finite")


Edge = Pipe | Pump


@dataclass(frozen=True)
class Network:
    nodes: tuple[Node, ...]
    pipes: tuple[Pipe, ...] = ()
    pumps: tuple[Pump, ...] = ()

    def __post_init__(self):
        for name in ("nodes", "pipes", "pumps"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @cached_property
    def node_index(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    @property
    def edges(self) -> tuple[Edge, ...]:
        return self.pipes + self.pumps

    @cached_property
    def edge_index(self) -> dict[str, Edge]:
        return {e.id: e for e in self.edges}

    @cached_property
    def adjacency(self) -> dict[str, list[tuple[Edge, str]]]:
        """node id -> [(edge, neighbour id)] over edges with known endpoints."""
        adj: dict[str, list[tuple[Edge, str]]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            if e.from_node in adj and e.to_node in adj:
                adj[e.from_node].append((e, e.to_node))
                adj[e.to_node].append((e, e.from_node))
        return adj

    def node(self, node_id: str) -> Node:
        return self.node_index[node_id]

    def components(self, through_pumps: bool = True) -> list[list[str]]:
        """Connected components as sorted id lists.

        With ``through_pumps=False`` enabled pumps cut the graph, which gives
        the pressure zones.
        """
        seen: set[str] = set()
        out = []
        for start in sorted(self.node_index):
            if start in seen:
                continue
            comp = []
            queue = deque([start])
            seen.add(start)
            while queue:
                u = queue.popleft()
                comp.append(u)
                for e, v in self.adjacency[u]:
                    if not through_pumps and isinstance(e, Pump) and e.enabled:
                        continue
                    if v not in seen:
                        seen.add(v)
                        queue.append(v)
            out.append(sorted(comp))
        return out

    @property
    def total_length(self) -> float:
        return math.fsum(p.L for p in self.pipes)

    def with_elevations(self, h: float | dict[str, float] = 0.0) -> "Network":
        if isinstance(h, dict):
            nodes = tuple(replace(n, h=h.get(n.id, n.h)) for n in self.nodes)
        else:
            nodes = tuple(replace(n, h=float(h)) for n in self.nodes)
        return Network(nodes, self.pipes, self.pumps)

    def replace_edges(self, pipes: Iterable[Pipe] | None = None,
                      pumps: Iterable[Pump] | None = None,
                      nodes: Iterable[Node] | None = None) -> "Network":
        return Network(tuple(self.nodes if nodes is None else nodes),
                       tuple(self.pipes if pipes is None else pipes),
                       tuple(self.pumps if pumps is None else pumps))


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: str
    message: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.subject}: {self.message}"


def mass_rate_from_annual(q: float, hours_per_year: float = HOURS_PER_YEAR) -> float:
    """Convert an annual quantity in t/a to kg/s assuming continuous operation."""
    if q < 0:
        raise DomainError(f"annual quantity must be >= 0, got {q}")
    return q * 1000.0 / (hours_per_year * 3600.0)


def pressure_anchors(net: Network, bounds: Iterable[BoundaryFlow]) -> dict[str, list[str]]:
    """Pressure zone (keyed by its first node id) -> anchoring elements."""
    zones = net.components(through_pumps=False)
    zone_of = {n: z[0] for z in zones for n in z}
    anchors: dict[str, list[str]] = {z[0]: [] for z in zones}
    for b in bounds:
        if b.reference and b.node in zone_of:
            anchors[zone_of[b.node]].append(f"reference:{b.node}")
    for p in net.pumps:
        if not p.enabled:
            continue
        end = p.to_node if p.mode == "outlet_setpoint" else p.from_node
        if end in zone_of:
            anchors[zone_of[end]].append(f"pump:{p.id}")
    return anchors


def validate(net: Network, bounds: Iterable[BoundaryFlow]) -> list[Violation]:
    """Report everything that would make the network non-simulatable.

    The report is sorted, so it does not depend on the order edges are listed.
    """
    bounds = list(bounds)
    out: list[Violation] = []

    seen: set[str] = set()
    for n in net.nodes:
        if n.id in seen:
            out.append(Violation("duplicate-id", n.id, "node id used more than once"))
        seen.add(n.id)
    seen_edges: set[str] = set()
    for e in net.edges:
        if e.id in seen_edges:
            out.append(Violation("duplicate-id", e.id, "edge id used more than once"))
        seen_edges.add(e.id)
        for end in (e.from_node, e.to_node):
            if end not in net.node_index:
                out.append(Violation("dangling-edge", e.id, f"endpoint {end!r} is not a node"))
        if e.from_node == e.to_node:
            out.append(Violation("self-loop", e.id, "edge starts and ends at the same node"))

    pump_pairs: dict[frozenset, list[str]] = defaultdict(list)
    for p in net.pumps:
        pump_pairs[frozenset((p.from_node, p.to_node))].append(p.id)
        if p.enabled and not (P_MIN_BARG - 1e-9 <= pa_to_barg(p.setpoint) <= P_MAX_BARG + 1e-9):
            out.append(Violation("envelope", p.id,
                                 f"setpoint {pa_to_barg(p.setpoint):.2f} barg outside "
                                 f"[{P_MIN_BARG}, {P_MAX_BARG}] barg"))
    for ids in pump_pairs.values():
        if len(ids) > 1:
            out.append(Violation("duplicate-pump", ",".join(sorted(ids)),
                                 "parallel pumps between the same node pair"))

    by_node: dict[str, list[BoundaryFlow]] = defaultdict(list)
    for b in bounds:
        by_node[b.node].append(b)
        if b.node not in net.node_index:
            out.append(Violation("unknown-boundary-node", b.node, "boundary flow at unknown node"))
        elif len(net.nodes) > 1 and not net.adjacency[b.node]:
            out.append(Violation("disconnected-boundary-node", b.node, "boundary node has no edges"))
    for node_id, bs in by_node.items():
        if len(bs) > 1:
            out.append(Violation("duplicate-boundary", node_id, "more than one boundary entry"))

    refs = {b.node for b in bounds if b.reference}
    for comp in net.components():
        n_ref = sum(1 for n in comp if n in refs)
        if n_ref == 0:
            out.append(Violation("missing-reference", comp[0],
                                 f"component of {len(comp)} node(s) has no pressure-reference node"))
        elif n_ref > 1:
            out.append(Violation("over-constrained", comp[0],
                                 f"component has {n_ref} pressure-reference nodes"))
        elif any(isinstance(e, Pump) and e.enabled for n in comp for e, _ in net.adjacency[n]):
            zones = pressure_anchors(net, bounds)
            members = set(comp)
            for zone, anchors in zones.items():
                if zone not in members:
                    continue
                # anchors always number zones plus independent pump loops, so an
                # over-anchored zone on a loop-free zone graph leaves another zone
                # without one; on loops the extra anchor fixes the flow split
                if not anchors:
                    out.append(Violation("unanchored-zone", zone,
                                         "pressure zone has no reference node or pump setpoint"))
    return sorted(set(out), key=lambda v: (v.kind, v.subject, v.message))


# --- interchange -----------------------------------------------------------

def _composition_dict(c: Composition) -> dict[str, float]:
    return c.as_dict()


def network_to_geojson(net: Network) -> dict:
    features = []
    for n in net.nodes:
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [n.lon, n.lat]},
            "properties": {"component": "node", "id": n.id, "kind": n.kind, "h": n.h},
        })
    for p in net.pipes:
        a, b = net.node_index.get(p.from_node), net.node_index.get(p.to_node)
        features.append({
            "type": "Feature",
            "geometry": {"type": "LineString",
                         "coordinates": [[a.lon, a.lat] if a else None, [b.lon, b.lat] if b else None]},
            "properties": {"component": "pipe", "id": p.id, "from": p.from_node, "to": p.to_node,
                           "L": p.L, "D": p.D, "k": p.k, "c_h": p.c_h, "T_s": p.T_s,
                           "dn_label": p.dn_label},
        })
    for p in net.pumps:
        a, b = net.node_index.get(p.from_node), net.node_index.get(p.to_node)
        features.append({
            "type": "Feature",
            "geometry": {"type": "LineString",
                         "coordinates": [[a.lon, a.lat] if a else None, [b.lon, b.lat] if b else None]},
            "properties": {"component": "pump", "id": p.id, "from": p.from_node, "to": p.to_node,
                           "mode": p.mode, "setpoint": p.setpoint,
                           "setpoint_barg": pa_to_barg(p.setpoint),
                           "cooler_T_out": p.cooler_T_out, "enabled": p.enabled},
        })
    return {"type": "FeatureCollection", "features": features}


class FormatError(ValueError):
    pass


def network_from_geojson(doc: dict) -> Network:
    if doc.get("type") != "FeatureCollection":
        raise FormatError("network file must be a GeoJSON FeatureCollection")
    nodes, pipes, pumps = [], [], []
    for i, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        comp = props.get("component")
        try:
            if comp == "node":
                lon, lat = feat["geometry"]["coordinates"][:2]
                nodes.append(Node(str(props["id"]), float(lat), float(lon),
                                  float(props.get("h", 0.0) or 0.0), props.get("kind", "junction")))
            elif comp == "pipe":
                pipes.append(Pipe(str(props["id"]), str(props["from"]), str(props["to"]),
                                  float(props["L"]), float(props["D"]),
                                  float(props.get("k", 3.6e-5)), float(props.get("c_h", 2.0)),
                                  float(props.get("T_s", 283.15)), props.get("dn_label")))
            elif comp == "pump":
                setpoint = props.get("setpoint")
                if setpoint is None:
                    setpoint = barg_to_pa(float(props["setpoint_barg"]))
                pumps.append(Pump(str(props["id"]), str(props["from"]), str(props["to"]),
                                  props.get("mode", "outlet_setpoint"), float(setpoint),
                                  float(props.get("cooler_T_out", COOLER_T_MIN)),
                                  bool(props.get("enabled", True))))
            else:
                raise FormatError(f"unknown component {comp!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"feature {i}: {exc}") from exc
    return Network(tuple(nodes), tuple(pipes), tuple(pumps))


def bounds_to_json(bounds: Iterable[BoundaryFlow]) -> dict:
    rows = []
    for b in bounds:
        row = {"node": b.node, "mass_rate": b.mass_rate, "composition": _composition_dict(b.composition),
               "T_in": b.T_in, "reference": b.reference}
        if b.reference:
            row["P_ref"] = b.P_ref
            row["P_ref_barg"] = pa_to_barg(b.P_ref)
        rows.append(row)
    return {"boundary_flows": rows}


def bounds_from_json(doc: dict) -> list[BoundaryFlow]:
    out = []
    for i, row in enumerate(doc.get("boundary_flows", [])):
        try:
            P_ref = row.get("P_ref")
            if P_ref is None and row.get("P_ref_barg") is not None:
                P_ref = barg_to_pa(float(row["P_ref_barg"]))
            out.append(BoundaryFlow(
                node=str(row["node"]),
                mass_rate=float(row.get("mass_rate", 0.0)),
                composition=Composition.from_fractions(row.get("composition", {"CO2": 1.0})),
                T_in=float(row.get("T_in", DEFAULT_T_IN)),
                reference=bool(row.get("reference", False)),
                P_ref=None if P_ref is None else float(P_ref),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"boundary_flows[{i}]: {exc}") from exc
    return out


def _write_json(doc: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n")


def save_network(net: Network, path: str | Path) -> None:
    _write_json(network_to_geojson(net), path)


def load_network(path: str | Path) -> Network:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return network_from_geojson(doc)


def save_bounds(bounds: Iterable[BoundaryFlow], path: str | Path) -> None:
    _write_json(bounds_to_json(bounds), path)


def load_bounds(path: str | Path) -> list[BoundaryFlow]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return bounds_from_json(doc)

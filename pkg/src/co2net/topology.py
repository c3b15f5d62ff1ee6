"""Network construction from site tables and gas-corridor geometry.

Two steps: every active site is connected by a straight stub to the nearest
point of the corridor graph, then sources are routed to sinks along the
corridors. The union of the routes, contracted at pass-through vertices,
becomes the pipe network.
"""

from __future__ import annotations

import csv
import heapq
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .fluids import PURE_CO2, Composition
from .network import (BoundaryFlow, Network, Node, Pipe, DEFAULT_T_IN, HOURS_PER_YEAR, FormatError,
                      mass_rate_from_annual)
from .units import barg_to_pa

log = logging.getLogger(__name__)

EARTH_RADIUS = 6_371_000.0  # m
SITE_TYPES = ("cement", "lime", "waste_incineration", "border", "hub", "ccu")
ROLES = ("source", "sink", "none")
DEFAULT_D = 0.661  # DN700, the initial uniform diameter
DEFAULT_DN = "DN700"

_TYPE_ALIASES = {
    "cement": "cement", "cement_plant": "cement",
    "lime": "lime", "lime_plant": "lime",
    "waste_incineration": "waste_incineration", "waste_incineration_plant": "waste_incineration",
    "wte": "waste_incineration",
    "border": "border", "border_transfer_point": "border", "border_point": "border",
    "hub": "hub", "co2_hub": "hub",
    "ccu": "ccu", "ccu_site": "ccu",
}
_ROLE_ALIASES = {"source": "source", "sink": "sink", "none": "none", "--": "none", "-": "none", "": "none"}

# site type -> scenario category
CATEGORY = {"cement": "HtA", "lime": "HtA", "waste_incineration": "WtE", "border": "Import",
            "hub": "Hubs", "ccu": "CCU"}


def haversine(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in metres between (lat, lon) pairs in degrees."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = math.sin((lat2 - lat1) / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class SiteRecord:
    site_type: str
    role: str
    lat: float
    lon: float
    q_annual: float  # t/a
    id: str = ""
    h: float = 0.0

    def __post_init__(self):
        if self.site_type not in SITE_TYPES:
            raise ValueError(f"unknown site type {self.site_type!r}")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not (self.q_annual >= 0.0 and math.isfinite(self.q_annual)):
            raise ValueError(f"site {self.id!r}: q_annual must be >= 0")
        if not -90.0 <= self.lat <= 90.0 or not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"site {self.id!r}: coordinates out of range")
        if self.site_type == "hub" and self.role == "source":
            raise ValueError(f"site {self.id!r}: hubs are sinks")
        if not self.id:
            object.__setattr__(self, "id", f"{self.site_type}_{self.lat:.5f}_{self.lon:.5f}")

    @property
    def active(self) -> bool:
        return self.role != "none" and (self.q_annual > 0.0 or self.site_type == "hub")

    @property
    def node_kind(self) -> str:
        if self.site_type == "hub":
            return "hub"
        if self.site_type == "border":
            return "border"
        return "sink" if self.role == "sink" else "source"


def read_sites(path: str | Path) -> list[SiteRecord]:
    """Sites CSV with header ``type,role,lat,lon,q_t_per_a`` (optional ``id``, ``h``)."""
    sites = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"type", "role", "lat", "lon", "q_t_per_a"}
        if reader.fieldnames is None or not need <= {f.strip() for f in reader.fieldnames}:
            raise FormatError(f"{path}: header must contain {','.join(sorted(need))}")
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
            try:
                key = row["type"].lower().replace(" ", "_").replace("-", "_")
                if key not in _TYPE_ALIASES:
                    raise ValueError(f"unknown site type {row['type']!r}")
                role = row["role"].lower()
                if role not in _ROLE_ALIASES:
                    raise ValueError(f"unknown role {row['role']!r}")
                sites.append(SiteRecord(
                    site_type=_TYPE_ALIASES[key], role=_ROLE_ALIASES[role],
                    lat=float(row["lat"]), lon=float(row["lon"]),
                    q_annual=float(row["q_t_per_a"] or 0.0), id=row.get("id", ""),
                    h=float(row["h"]) if row.get("h") else 0.0))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    ids = [s.id for s in sites]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise FormatError(f"{path}: duplicate site ids {dup}")
    return sites


# --- corridor graph ---------------------------------------------------------

@dataclass
class CorridorEdge:
    id: str
    u: str
    v: str
    length: float  # m
    provenance: str


@dataclass
class CorridorGraph:
    """Undirected geometric graph; vertices map id -> (lat, lon, h)."""

    vertices: dict[str, tuple[float, float, float]] = field(default_factory=dict)
    edges: dict[str, CorridorEdge] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def copy(self) -> "CorridorGraph":
        return CorridorGraph(dict(self.vertices),
                             {k: CorridorEdge(e.id, e.u, e.v, e.length, e.provenance) for k, e in self.edges.items()},
                             list(self.warnings))

    def adjacency(self) -> dict[str, list[CorridorEdge]]:
        adj: dict[str, list[CorridorEdge]] = {v: [] for v in self.vertices}
        for e in self.edges.values():
            adj[e.u].append(e)
            adj[e.v].append(e)
        return adj

    @property
    def total_length(self) -> float:
        return math.fsum(e.length for e in self.edges.values())

    def add_edge(self, eid: str, u: str, v: str, provenance: str, length: float | None = None) -> CorridorEdge:
        if length is None:
            length = haversine(self.vertices[u][:2], self.vertices[v][:2])
        e = CorridorEdge(eid, u, v, length, provenance)
        self.edges[eid] = e
        return e


def _vertex_key(lat: float, lon: float) -> str:
    return f"v{lat:.6f}_{lon:.6f}"


def corridors_from_geojson(doc: Mapping) -> CorridorGraph:
    """Build the corridor graph from a GeoJSON LineString collection.

    Polylines sharing a coordinate (to 1e-6 degrees) are joined there.
    Features that are not usable LineStrings are skipped with a warning.
    """
    if doc.get("type") != "FeatureCollection" or not isinstance(doc.get("features"), list):
        raise FormatError("corridors: expected a GeoJSON FeatureCollection")
    g = CorridorGraph()
    for k, feat in enumerate(doc["features"]):
        props = feat.get("properties") or {}
        fid = str(props.get("id", feat.get("id", f"c{k}")))
        geom = feat.get("geometry") or {}
        parts = []
        if geom.get("type") == "LineString":
            parts = [geom.get("coordinates") or []]
        elif geom.get("type") == "MultiLineString":
            parts = geom.get("coordinates") or []
        else:
            g.warnings.append(f"feature {k} ({fid}): geometry {geom.get('type')!r} is not a LineString, skipped")
            continue
        for pi, coords in enumerate(parts):
            pts = []
            try:
                for c in coords:
                    lon, lat = float(c[0]), float(c[1])
                    h = float(c[2]) if len(c) > 2 else 0.0
                    if not (-90 <= lat <= 90 and -180 <= lon <= 180):
                        raise ValueError
                    key = _vertex_key(lat, lon)
                    if not pts or pts[-1][0] != key:
                        pts.append((key, lat, lon, h))
            except (TypeError, ValueError, IndexError):
                g.warnings.append(f"feature {k} ({fid}): malformed coordinates, skipped")
                continue
            if len(pts) < 2:
                g.warnings.append(f"feature {k} ({fid}): dangling LineString with fewer than two distinct points, skipped")
                continue
            tag = fid if len(parts) == 1 else f"{fid}/{pi}"
            for key, lat, lon, h in pts:
                g.vertices.setdefault(key, (lat, lon, h))
            for j in range(len(pts) - 1):
                g.add_edge(f"{tag}:{j:04d}", pts[j][0], pts[j + 1][0], f"corridor:{tag}")
    for w in g.warnings:
        log.warning(w)
    return g


def load_corridors(path: str | Path) -> CorridorGraph:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return corridors_from_geojson(doc)


# --- step 1: connect sites --------------------------------------------------

@dataclass
class Connection:
    site: str
    vertex: str  # foot point vertex on the corridor
    stub: CorridorEdge | None  # None when the site sits on the corridor
    split: str | None  # id of the corridor edge that was split, if any


def _project(site: tuple[float, float], a: tuple[float, float], b: tuple[float, float]) -> tuple[float, float]:
    """(distance m, t in [0,1]) of the clamped foot point on segment ab, local equirectangular plane."""
    lat0 = math.radians(site[0])
    kx = EARTH_RADIUS * math.cos(lat0) * math.pi / 180.0
    ky = EARTH_RADIUS * math.pi / 180.0
    ax, ay = (a[1] - site[1]) * kx, (a[0] - site[0]) * ky
    bx, by = (b[1] - site[1]) * kx, (b[0] - site[0]) * ky
    dx, dy = bx - ax, by - ay
    den = dx * dx + dy * dy
    t = 0.0 if den == 0.0 else min(1.0, max(0.0, -(ax * dx + ay * dy) / den))
    px, py = ax + t * dx, ay + t * dy
    return math.hypot(px, py), t


_TIE = 1e-6  # m


def connect_site(site: SiteRecord, g: CorridorGraph) -> Connection:
    """Attach ``site`` to the nearest point of any corridor segment (mutates ``g``).

    Ties are broken by distance, then by the lexicographically smaller edge id.
    """
    if not g.edges:
        raise ValueError("cannot connect a site to an empty corridor graph")
    here = (site.lat, site.lon)
    best = None
    for eid in sorted(g.edges):
        e = g.edges[eid]
        if e.provenance.startswith("stub:"):
            continue
        d, t = _project(here, g.vertices[e.u][:2], g.vertices[e.v][:2])
        if best is None or d < best[0] - _TIE:
            best = (d, t, eid)
    if best is None:
        raise ValueError("corridor graph has no corridor edges")
    d, t, eid = best
    e = g.edges[eid]
    ua, vb = g.vertices[e.u], g.vertices[e.v]
    seg = haversine(ua[:2], vb[:2])
    split = None
    if t * seg <= 1e-3:
        foot = e.u
    elif (1.0 - t) * seg <= 1e-3:
        foot = e.v
    else:
        lat = ua[0] + t * (vb[0] - ua[0])
        lon = ua[1] + t * (vb[1] - ua[1])
        h = ua[2] + t * (vb[2] - ua[2])
        foot = f"{eid}@{site.id}"
        g.vertices[foot] = (lat, lon, h)
        del g.edges[eid]
        # proportional split keeps the corridor length exactly
        g.add_edge(f"{eid}.a", e.u, foot, e.provenance, t * e.length)
        g.add_edge(f"{eid}.b", foot, e.v, e.provenance, (1.0 - t) * e.length)
        split = eid
    foot_pos = g.vertices[foot]
    stub_len = haversine(here, foot_pos[:2])
    if stub_len <= 1e-3:
        g.vertices.setdefault(site.id, foot_pos)
        return Connection(site.id, foot, None, split)
    g.vertices[site.id] = (site.lat, site.lon, site.h)
    stub = g.add_edge(f"stub:{site.id}", site.id, foot, f"stub:{site.id}", stub_len)
    return Connection(site.id, foot, stub, split)


# --- step 2: routing --------------------------------------------------------

@dataclass
class Route:
    vertices: list[str]
    edges: list[str]
    length: float


def _dijkstra(g: CorridorGraph, source: str, adj=None):
    """Shortest distances with lexicographically smallest vertex path among ties."""
    adj = adj if adj is not None else g.adjacency()
    dist = {source: 0.0}
    prev: dict[str, tuple[str, str] | None] = {source: None}
    done: set[str] = set()

    def path_to(v):
        out = []
        while v is not None:
            out.append(v)
            p = prev[v]
            v = p[0] if p else None
        return out[::-1]

    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for e in sorted(adj[u], key=lambda e: e.id):
            v = e.v if e.u == u else e.u
            if v in done:
                continue
            nd = d + e.length
            old = dist.get(v)
            if old is None or nd < old - _TIE:
                dist[v] = nd
                prev[v] = (u, e.id)
                heapq.heappush(heap, (nd, v))
            elif abs(nd - old) <= _TIE:
                cand = path_to(u) + [v]
                cur = path_to(v)
                if cand < cur or (cand == cur and e.id < prev[v][1]):
                    prev[v] = (u, e.id)
                    dist[v] = min(old, nd)
    return dist, prev


def _route_from(prev, dist, target) -> Route:
    verts, edges = [], []
    v = target
    while v is not None:
        verts.append(v)
        p = prev[v]
        if p:
            edges.append(p[1])
        v = p[0] if p else None
    return Route(verts[::-1], edges[::-1], dist[target])


def route(g: CorridorGraph, a: str, b: str) -> Route | None:
    """Shortest corridor path from ``a`` to ``b``; None when unreachable."""
    if a not in g.vertices or b not in g.vertices:
        raise KeyError(f"unknown vertex {a if a not in g.vertices else b!r}")
    if a == b:
        return Route([], [], 0.0)
    dist, prev = _dijkstra(g, a)
    if b not in dist:
        return None
    return _route_from(prev, dist, b)


# --- network assembly -------------------------------------------------------

@dataclass
class BuildResult:
    network: Network
    report: dict
    site_nodes: dict[str, str]  # site id -> network node id
    provenance: dict[str, list[str]]  # pipe id -> corridor/stub provenance tags


def _classify(sites: Sequence[SiteRecord]):
    sources = sorted((s for s in sites if s.active and s.role == "source"), key=lambda s: s.id)
    sinks = sorted((s for s in sites if s.active and s.role == "sink"), key=lambda s: s.id)
    return sources, sinks


def build_network(sites: Sequence[SiteRecord], corridors: CorridorGraph,
                  plan: Iterable[tuple[str, str]] | None = None, *, D: float = DEFAULT_D,
                  dn_label: str | None = DEFAULT_DN) -> BuildResult:
    """Connect sites, route sources to sinks and contract the union of routes.

    ``plan`` lists (source id, sink id) pairs; by default every source goes
    to its nearest hub by corridor distance.
    """
    g = corridors.copy()
    active = sorted((s for s in sites if s.active), key=lambda s: s.id)
    by_id = {s.id: s for s in active}
    site_vertex: dict[str, str] = {}
    for s in active:
        conn = connect_site(s, g)
        site_vertex[s.id] = s.id if conn.stub is not None else conn.vertex

    sources, sinks = _classify(active)
    adj = g.adjacency()
    pairs: list[tuple[str, str]] = []
    unreachable: list[list[str]] = []
    routes: list[Route] = []
    if plan is None:
        hubs = [s for s in sinks if s.site_type == "hub"] or sinks
        for src in sources:
            dist, prev = _dijkstra(g, site_vertex[src.id], adj)
            reach = [(dist[site_vertex[h.id]], h.id) for h in hubs if site_vertex[h.id] in dist]
            if not reach:
                unreachable.append([src.id, "*"])
                continue
            _, hub = min(reach)
            pairs.append((src.id, hub))
            routes.append(_route_from(prev, dist, site_vertex[hub]))
    else:
        for a, b in sorted(plan):
            if a not in by_id or b not in by_id:
                raise KeyError(f"routing plan names unknown or inactive site: {a if a not in by_id else b!r}")
            r = route(g, site_vertex[a], site_vertex[b])
            if r is None:
                unreachable.append([a, b])
                continue
            pairs.append((a, b))
            routes.append(r)

    # union of routed edges, oriented by the first route that uses them
    used: dict[str, tuple[str, str]] = {}
    for r in routes:
        for k, eid in enumerate(r.edges):
            used.setdefault(eid, (r.vertices[k], r.vertices[k + 1]))

    vertex_sites: dict[str, list[str]] = defaultdict(list)
    for sid, v in site_vertex.items():
        vertex_sites[v].append(sid)
    keep = set(vertex_sites)
    deg: dict[str, int] = defaultdict(int)
    inc: dict[str, list[str]] = defaultdict(list)
    for eid in sorted(used):
        a, b = used[eid]
        deg[a] += 1
        deg[b] += 1
        inc[a].append(eid)
        inc[b].append(eid)
    # contraction stays within one polyline so each pipe keeps a single provenance
    terminal = {v for v in deg if deg[v] != 2 or v in keep
                or len({g.edges[x].provenance for x in inc[v]}) > 1}

    def node_id(v: str) -> str:
        return sorted(vertex_sites[v])[0] if v in vertex_sites else v

    pipes, prov, seen = [], {}, set()
    for start in sorted(terminal):
        for first in sorted(inc[start]):
            if first in seen:
                continue
            chain, v, eid = [], start, first
            while True:
                seen.add(eid)
                chain.append(eid)
                a, b = used[eid]
                w = b if a == v else a
                if w in terminal:
                    break
                nxt = [x for x in inc[w] if x != eid]
                v, eid = w, nxt[0]
            end = w
            length = math.fsum(g.edges[x].length for x in chain)
            # orient along the first route's direction on the chain's first edge
            a0, _ = used[chain[0]]
            frm, to = (start, end) if a0 == start else (end, start)
            pid = min(chain)
            pipes.append(Pipe(pid, node_id(frm), node_id(to), L=length, D=D, dn_label=dn_label))
            prov[pid] = sorted({g.edges[x].provenance for x in chain})
    # isolated cycles of pass-through vertices cannot occur: every used edge lies on a site-to-site route

    nodes = []
    node_vertices = {p.from_node for p in pipes} | {p.to_node for p in pipes}
    inv = {node_id(v): v for v in terminal}
    for nid in sorted(node_vertices):
        v = inv[nid]
        lat, lon, h = g.vertices[v]
        if v in vertex_sites:
            s = by_id[sorted(vertex_sites[v])[0]]
            kind = s.node_kind
            h = s.h if v == s.id else h
        else:
            kind = "junction"
        nodes.append(Node(nid, lat=lat, lon=lon, h=h, kind=kind))
    pipes.sort(key=lambda p: p.id)
    net = Network(tuple(nodes), tuple(pipes))
    counts: dict[str, int] = defaultdict(int)
    for n in nodes:
        counts[n.kind] += 1
    report = {
        "total_length_m": round(net.total_length, 3),
        "total_length_km": round(net.total_length / 1000.0, 3),
        "node_counts": dict(sorted(counts.items())),
        "pipe_count": len(pipes),
        "routed_pairs": [list(p) for p in pairs],
        "unreachable_pairs": unreachable,
        "warnings": list(g.warnings),
    }
    site_nodes = {sid: node_id(v) for sid, v in site_vertex.items() if node_id(v) in node_vertices}
    return BuildResult(net, report, site_nodes, prov)


# --- scenario flows ---------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Category totals in Mt/a; ``None`` keeps the per-site quantities."""

    name: str
    totals: Mapping[str, float | None] = field(default_factory=dict)


SCENARIOS = {
    "HtA+Imports": Scenario("HtA+Imports", {"Import": 20.0, "HtA": 11.3, "CCU": None, "WtE": 32.04, "Hubs": 63.34}),
    "HtA+CCU": Scenario("HtA+CCU", {"Import": None, "HtA": 11.3, "CCU": 31.92, "WtE": 26.7, "Hubs": 6.71}),
    "sites": Scenario("sites", {}),
}


class FlowBalanceError(ValueError):
    def __init__(self, message: str, shortfall: dict[str, float]):
        self.shortfall = shortfall
        super().__init__(message)


def assign_boundary_flows(net: Network, sites: Sequence[SiteRecord], scenario: Scenario | str = "sites",
                          site_nodes: Mapping[str, str] | None = None, *,
                          composition: Composition = PURE_CO2, T_in: float = DEFAULT_T_IN,
                          P_ref: float = barg_to_pa(125.0),
                          hours_per_year: float = HOURS_PER_YEAR) -> list[BoundaryFlow]:
    """Per-node boundary flows for a scenario.

    Source sites inject their (optionally category-scaled) quantity. In every
    connected component the sinks withdraw the component's total in
    proportion to their capacity, and the largest hub is the pressure
    reference.
    """
    if isinstance(scenario, str):
        scenario = SCENARIOS[scenario]
    site_nodes = dict(site_nodes or {s.id: s.id for s in sites})
    active = [s for s in sites if s.active and s.id in site_nodes]
    scale: dict[str, float] = {}
    for cat, total in scenario.totals.items():
        if total is None or cat == "Hubs":
            continue
        members = [s for s in active if CATEGORY[s.site_type] == cat and s.role == "source"]
        have = math.fsum(s.q_annual for s in members)
        if have > 0.0:
            scale[cat] = total * 1e6 / have

    comp_of = {n: i for i, comp in enumerate(net.components()) for n in comp}
    inject: dict[str, float] = defaultdict(float)
    capacity: dict[str, float] = defaultdict(float)
    for s in active:
        node = site_nodes[s.id]
        if node not in comp_of:
            continue
        if s.role == "source":
            inject[node] += mass_rate_from_annual(s.q_annual * scale.get(CATEGORY[s.site_type], 1.0), hours_per_year)
        else:
            capacity[node] += mass_rate_from_annual(s.q_annual, hours_per_year)

    bounds = []
    shortfall = {}
    for ci, comp in enumerate(net.components()):
        members = set(comp)
        src = math.fsum(q for n, q in inject.items() if n in members)
        sinks = sorted((n for n in capacity if n in members), key=lambda n: (-capacity[n], n))
        cap = math.fsum(capacity[n] for n in sinks)
        if src == 0.0 and not sinks:
            continue
        if not sinks:
            shortfall[comp[0]] = src
            continue
        if src > cap * (1.0 + 1e-12) and cap > 0.0:
            shortfall[comp[0]] = src - cap
            continue
        for n in sorted(n for n in inject if n in members):
            bounds.append(BoundaryFlow(n, inject[n], composition, T_in))
        for k, n in enumerate(sinks):
            share = -src * capacity[n] / cap if cap > 0.0 else (-src if k == 0 else 0.0)
            if k == 0:
                bounds.append(BoundaryFlow(n, share, composition, T_in, reference=True, P_ref=P_ref))
            else:
                bounds.append(BoundaryFlow(n, share, composition, T_in))
    if shortfall:
        raise FlowBalanceError(
            "sources exceed sink capacity: " + ", ".join(f"component {k}: {v:.3f} kg/s short"
                                                        for k, v in sorted(shortfall.items())), shortfall)
    return sorted(bounds, key=lambda b: b.node)

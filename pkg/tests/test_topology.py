import math
import random

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from co2net.network import FormatError, mass_rate_from_annual, network_to_geojson
from co2net.topology import (EARTH_RADIUS, FlowBalanceError, SiteRecord, assign_boundary_flows, build_network,
                             connect_site, corridors_from_geojson, haversine, read_sites, route)


def line_feature(fid, coords):
    return {"type": "Feature", "properties": {"id": fid},
            "geometry": {"type": "LineString", "coordinates": [[lon, lat] for lat, lon in coords]}}


def corridors(*lines):
    return corridors_from_geojson({"type": "FeatureCollection",
                                   "features": [line_feature(f"c{i}", pts) for i, pts in enumerate(lines)]})


def cosine_law(a, b):
    (p1, l1), (p2, l2) = (map(math.radians, a)), (map(math.radians, b))
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(l2 - l1)
    return EARTH_RADIUS * math.acos(max(-1.0, min(1.0, c)))


# --- haversine --------------------------------------------------------------

def test_haversine_examples():
    assert haversine((52.0, 13.0), (52.0, 13.0)) == 0.0
    assert haversine((0.0, 0.0), (90.0, 0.0)) == pytest.approx(math.pi / 2 * EARTH_RADIUS, abs=1e-6)
    assert haversine((0.0, 0.0), (90.0, 0.0)) == pytest.approx(10_007_543, abs=1)
    berlin, hamburg = (52.5200, 13.4050), (53.5511, 9.9937)
    assert haversine(berlin, hamburg) == pytest.approx(cosine_law(berlin, hamburg), rel=1e-9)
    assert haversine(berlin, hamburg) / 1000 == pytest.approx(255.2, abs=0.1)


@given(st.tuples(st.floats(-89, 89), st.floats(-179, 179)), st.tuples(st.floats(-89, 89), st.floats(-179, 179)))
def test_haversine_symmetric_and_bounded(a, b):
    d = haversine(a, b)
    assert d == pytest.approx(haversine(b, a), abs=1e-6)
    assert 0.0 <= d <= math.pi * EARTH_RADIUS + 1e-6


# --- connect_site -----------------------------------------------------------

def test_site_on_vertex_gets_no_stub():
    g = corridors([(50.0, 5.0), (50.5, 5.0), (51.0, 5.0)])
    before = g.total_length
    conn = connect_site(SiteRecord("hub", "sink", 50.5, 5.0, 0.0, id="h"), g)
    assert conn.stub is None and conn.split is None
    assert g.total_length == before


def test_site_east_of_north_south_segment():
    g = corridors([(50.0, 5.0), (51.0, 5.0)])
    before = g.total_length
    # 10 km due east on the parallel through the segment midpoint
    dlon = math.degrees(10_000.0 / (EARTH_RADIUS * math.cos(math.radians(50.5))))
    conn = connect_site(SiteRecord("cement", "source", 50.5, 5.0 + dlon, 1e6, id="s"), g)
    assert conn.stub.length == pytest.approx(10_000.0, rel=1e-3)
    assert g.vertices[conn.vertex][0] == pytest.approx(50.5, abs=1e-3)
    corridor_len = math.fsum(e.length for e in g.edges.values() if not e.provenance.startswith("stub:"))
    assert abs(corridor_len - before) < 0.1
    assert conn.split == "c0:0000"


def test_equidistant_site_picks_lexicographic_edge():
    # two parallel east-west segments, the site halfway between
    g = corridors([(50.2, 5.0), (50.2, 6.0)], [(49.8, 5.0), (49.8, 6.0)])
    conn = connect_site(SiteRecord("lime", "source", 50.0, 5.5, 1e5, id="s"), g)
    assert conn.split == "c0:0000"


def test_connect_to_empty_graph():
    with pytest.raises(ValueError):
        connect_site(SiteRecord("lime", "source", 50.0, 5.5, 1e5), corridors())


@settings(max_examples=30)
@given(st.lists(st.tuples(st.floats(49.0, 51.0), st.floats(4.0, 7.0)), min_size=1, max_size=6))
def test_splitting_conserves_corridor_length(points):
    g = corridors([(49.5, 4.5), (50.0, 5.5), (50.5, 6.5)], [(50.0, 5.5), (51.0, 5.0)])
    before = g.total_length
    for i, (lat, lon) in enumerate(points):
        connect_site(SiteRecord("cement", "source", lat, lon, 1.0, id=f"s{i}"), g)
    after = math.fsum(e.length for e in g.edges.values() if not e.provenance.startswith("stub:"))
    assert abs(after - before) < 0.1 * len(points)


# --- route ------------------------------------------------------------------

def grid(detour):
    """3x3 lattice with one diagonal; ``detour`` bends the diagonal out of the square."""
    lines = []
    for i in range(3):
        lines.append([(50.0 + 0.1 * i, 5.0 + 0.1 * j) for j in range(3)])
        lines.append([(50.0 + 0.1 * j, 5.0 + 0.1 * i) for j in range(3)])
    lines.append([(50.0, 5.0), (50.05 + detour, 5.05 - detour), (50.1, 5.1)])
    return corridors(*lines)


def brute_force(g, a, b):
    G = nx.Graph()
    for e in g.edges.values():
        G.add_edge(e.u, e.v, length=e.length)
    best = None
    for path in nx.all_simple_paths(G, a, b):
        L = math.fsum(G.edges[u, v]["length"] for u, v in zip(path, path[1:]))
        if best is None or L < best[0] - 1e-6 or (abs(L - best[0]) <= 1e-6 and path < best[1]):
            best = (L, path)
    return best


@pytest.mark.parametrize("detour", [0.0, 0.2])
def test_route_matches_exhaustive_search(detour):
    g = grid(detour)
    a, b = "v50.000000_5.000000", "v50.200000_5.200000"
    r = route(g, a, b)
    L, path = brute_force(g, a, b)
    assert r.length == pytest.approx(L, abs=1e-6)
    assert r.vertices == path
    uses_diagonal = "v50.100000_5.100000" in r.vertices and any(e.startswith("c6") for e in r.edges)
    assert uses_diagonal == (detour == 0.0)


def test_route_trivial_cases():
    g = corridors([(50.0, 5.0), (50.1, 5.0), (50.2, 5.0)], [(52.0, 5.0), (52.1, 5.0)])
    a, b, c = "v50.000000_5.000000", "v50.100000_5.000000", "v50.200000_5.000000"
    assert route(g, a, a).length == 0.0 and route(g, a, a).vertices == []
    r = route(g, a, c)
    assert r.vertices == [a, b, c]
    assert r.length == pytest.approx(haversine((50.0, 5.0), (50.1, 5.0)) + haversine((50.1, 5.0), (50.2, 5.0)))
    assert route(g, a, "v52.000000_5.000000") is None
    with pytest.raises(KeyError):
        route(g, a, "nowhere")


# --- build_network ----------------------------------------------------------

def test_single_source_single_hub():
    g = corridors([(50.0, 5.0), (50.0, 6.0)])
    sites = [SiteRecord("cement", "source", 50.05, 5.1, 1e6, id="src"),
             SiteRecord("hub", "sink", 49.95, 5.9, 2e6, id="hub")]
    res = build_network(sites, g)
    net = res.network
    assert len(net.pipes) == 3
    stubs = [p for p in net.pipes if res.provenance[p.id][0].startswith("stub:")]
    assert len(stubs) == 2
    expected = (haversine((50.05, 5.1), (50.0, 5.1)) + haversine((49.95, 5.9), (50.0, 5.9))
                + haversine((50.0, 5.1), (50.0, 5.9)))
    assert net.total_length == pytest.approx(expected, rel=1e-4)
    assert res.report["total_length_m"] == pytest.approx(net.total_length, abs=1e-3)
    assert {n.kind for n in net.nodes} == {"source", "hub", "junction"}
    assert all(p.dn_label == "DN700" and p.D == 0.661 for p in net.pipes)


def test_shared_trunk_appears_once():
    # s1 - j - k - h  and  s2 - j: the trunk j-k-h is used by both routes
    g = corridors([(50.0, 5.0), (50.0, 5.5), (50.0, 6.0), (50.0, 6.5)], [(50.5, 5.5), (50.0, 5.5)])
    sites = [SiteRecord("cement", "source", 50.0, 5.0, 1e6, id="s1"),
             SiteRecord("lime", "source", 50.5, 5.5, 1e6, id="s2"),
             SiteRecord("hub", "sink", 50.0, 6.5, 5e6, id="h")]
    res = build_network(sites, g)
    assert len(res.network.pipes) == 3
    assert res.network.total_length == pytest.approx(g.total_length, abs=1e-6)
    trunk = [p for p in res.network.pipes if {p.from_node, p.to_node} == {"h", "v50.000000_5.500000"}]
    assert len(trunk) == 1
    assert trunk[0].L == pytest.approx(haversine((50.0, 5.5), (50.0, 6.5)), rel=1e-4)


def test_unreachable_pair_reported():
    g = corridors([(50.0, 5.0), (50.0, 5.5)], [(52.0, 5.0), (52.0, 5.5)])
    sites = [SiteRecord("cement", "source", 50.0, 5.0, 1e6, id="s"),
             SiteRecord("hub", "sink", 52.0, 5.5, 1e6, id="h")]
    res = build_network(sites, g)
    assert res.report["unreachable_pairs"] == [["s", "*"]]
    res = build_network(sites, g, plan=[("s", "h")])
    assert res.report["unreachable_pairs"] == [["s", "h"]]


def random_case(rnd):
    lines = [[(50.0, 5.0), (50.0, 5.5), (50.2, 6.0), (50.0, 6.5)], [(50.0, 5.5), (50.6, 5.6), (50.9, 6.1)],
             [(50.2, 6.0), (49.6, 6.2)]]
    g = corridors(*lines)
    sites = [SiteRecord("hub", "sink", 50.0 + rnd.uniform(-0.1, 0.1), 6.5 + rnd.uniform(-0.1, 0.1), 5e6, id="hub")]
    for i in range(rnd.randint(1, 5)):
        sites.append(SiteRecord(rnd.choice(["cement", "lime", "waste_incineration"]), "source",
                                rnd.uniform(49.5, 51.0), rnd.uniform(4.8, 6.4), rnd.uniform(1e5, 1e6), id=f"s{i}"))
    return g, sites


@settings(max_examples=20)
@given(st.randoms(use_true_random=False))
def test_build_is_order_independent(rnd):
    g, sites = random_case(rnd)
    shuffled = list(sites)
    rnd.shuffle(shuffled)
    assert network_to_geojson(build_network(sites, g).network) == network_to_geojson(build_network(shuffled, g).network)


@settings(max_examples=20)
@given(st.randoms(use_true_random=False))
def test_provenance_and_triangle_inequality(rnd):
    g, sites = random_case(rnd)
    res = build_network(sites, g)
    site_ids = {s.id for s in sites}
    for pid, tags in res.provenance.items():
        for tag in tags:
            kind, _, ref = tag.partition(":")
            assert kind in ("stub", "corridor")
            if kind == "stub":
                assert ref in site_ids
            else:
                assert ref in {"c0", "c1", "c2"}
    by_id = {s.id: s for s in sites}
    gc = g.copy()
    vertex = {s.id: connect_site(s, gc) for s in sorted(sites, key=lambda s: s.id)}
    vertex = {k: c.vertex if c.stub is None else k for k, c in vertex.items()}
    for a, b in res.report["routed_pairs"]:
        assert len(res.provenance) == len(res.network.pipes)
        assert all(len(tags) == 1 for tags in res.provenance.values())
        r = route(gc, vertex[a], vertex[b])
        assert r.length >= haversine((by_id[a].lat, by_id[a].lon), (by_id[b].lat, by_id[b].lon)) - 1e-6


# --- flows ------------------------------------------------------------------

def build_with(sites):
    g = corridors([(50.0, 5.0), (50.0, 6.0), (50.0, 7.0)])
    return build_network(sites, g)


def test_single_source_to_hub_flow():
    sites = [SiteRecord("cement", "source", 50.0, 5.0, 1e6, id="s"), SiteRecord("hub", "sink", 50.0, 7.0, 3e6, id="h"),
             SiteRecord("border", "none", 50.0, 6.0, 0.0, id="b")]
    res = build_with(sites)
    bounds = {b.node: b for b in assign_boundary_flows(res.network, sites, "sites", res.site_nodes)}
    assert set(bounds) == {"s", "h"}
    assert bounds["s"].mass_rate == pytest.approx(31.71, abs=5e-3)
    assert bounds["h"].mass_rate == pytest.approx(-31.71, abs=5e-3)
    assert bounds["h"].reference


def test_hta_imports_totals():
    sites = [SiteRecord("cement", "source", 50.0, 5.0, 2e6, id="c"), SiteRecord("lime", "source", 50.0, 5.5, 1e6, id="l"),
             SiteRecord("waste_incineration", "source", 50.0, 6.0, 10e6, id="w"),
             SiteRecord("border", "source", 50.0, 6.5, 5e6, id="b"),
             SiteRecord("hub", "sink", 50.0, 7.0, 70e6, id="h")]
    res = build_with(sites)
    bounds = assign_boundary_flows(res.network, sites, "HtA+Imports", res.site_nodes)
    inj = {b.node: b.mass_rate for b in bounds if not b.reference}
    assert inj["c"] + inj["l"] == pytest.approx(mass_rate_from_annual(11.3e6), rel=1e-12)
    assert inj["w"] == pytest.approx(mass_rate_from_annual(32.04e6), rel=1e-12)
    assert inj["b"] == pytest.approx(mass_rate_from_annual(20e6), rel=1e-12)
    assert sum(inj.values()) == pytest.approx(mass_rate_from_annual(63.34e6), rel=1e-12)


def test_capacity_shortfall():
    sites = [SiteRecord("cement", "source", 50.0, 5.0, 5e6, id="s"), SiteRecord("hub", "sink", 50.0, 7.0, 1e6, id="h")]
    res = build_with(sites)
    with pytest.raises(FlowBalanceError) as exc:
        assign_boundary_flows(res.network, sites, "sites", res.site_nodes)
    assert list(exc.value.shortfall.values())[0] == pytest.approx(mass_rate_from_annual(4e6))


# --- input parsing ----------------------------------------------------------

def test_read_sites(tmp_path):
    path = tmp_path / "sites.csv"
    path.write_text("type,role,lat,lon,q_t_per_a\nCement plant,source,50.1,5.2,1000000\nCO2 hub,sink,50.0,7.0,\n"
                    "Border transfer point,--,50.0,6.0,0\n")
    sites = read_sites(path)
    assert [s.site_type for s in sites] == ["cement", "hub", "border"]
    assert [s.role for s in sites] == ["source", "sink", "none"]
    assert not sites[2].active and sites[1].active
    path.write_text("type,role,lat,lon,q_t_per_a\ncement,source,50,5,-3\n")
    with pytest.raises(FormatError, match=":2:"):
        read_sites(path)
    path.write_text("type,role,lat\n")
    with pytest.raises(FormatError, match="header"):
        read_sites(path)
    path.write_text("type,role,lat,lon,q_t_per_a\nvolcano,source,50,5,1\n")
    with pytest.raises(FormatError, match="volcano"):
        read_sites(path)


def test_site_invariants():
    with pytest.raises(ValueError):
        SiteRecord("hub", "source", 50.0, 5.0, 1.0)
    with pytest.raises(ValueError):
        SiteRecord("cement", "source", 95.0, 5.0, 1.0)


def test_dangling_linestring_skipped_with_warning():
    doc = {"type": "FeatureCollection", "features": [
        line_feature("ok", [(50.0, 5.0), (50.0, 5.5)]),
        line_feature("dot", [(51.0, 5.0), (51.0, 5.0)]),
        {"type": "Feature", "properties": {"id": "pt"}, "geometry": {"type": "Point", "coordinates": [5, 50]}}]}
    g = corridors_from_geojson(doc)
    assert len(g.edges) == 1
    assert len(g.warnings) == 2
    with pytest.raises(FormatError):
        corridors_from_geojson({"type": "Feature"})


def test_polylines_join_at_shared_coordinates():
    g = corridors([(50.0, 5.0), (50.0, 5.5)], [(50.0, 5.5), (50.5, 5.5)])
    assert len(g.vertices) == 3
    assert route(g, "v50.000000_5.000000", "v50.500000_5.500000") is not None


def test_random_instance_reproducible():
    rnd = random.Random(7)
    g, sites = random_case(rnd)
    a = build_network(sites, g)
    b = build_network(sites, g)
    assert a.report == b.report

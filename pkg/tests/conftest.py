import os

from hypothesis import HealthCheck, settings

from co2net.network import BoundaryFlow, Network, Node, Pipe
from co2net.units import barg_to_pa

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def line_network(n_hops, hop_length, D=0.661, heights=None, dn_label="DN700", **pipe_kw):
    """Straight east-west line n0..n{n_hops}; ``heights`` is a per-node list."""
    heights = heights or [0.0] * (n_hops + 1)
    nodes = [Node(f"n{i}", 50.0, 5.0 + 0.1 * i, heights[i]) for i in range(n_hops + 1)]
    pipes = [Pipe(f"p{i}", f"n{i}", f"n{i + 1}", hop_length, D, dn_label=dn_label, **pipe_kw)
             for i in range(n_hops)]
    return Network(nodes, pipes)


def source_to_ref(net, rate, P_ref_barg=125.0, source="n0", ref=None, **kw):
    ref = ref or net.nodes[-1].id
    return [BoundaryFlow(source, rate, **kw), BoundaryFlow(ref, reference=True, P_ref=barg_to_pa(P_ref_barg))]

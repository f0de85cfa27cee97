"""Parse a small netlist, build its relation graph and print what came out.

    python demos/01_netlist_to_graph.py
"""

from collections import Counter

from circret.graph import RELATIONS, build_graph
from circret.spice import parse_netlist

NETLIST = """\
* common-source amplifier with resistive load
.param vdd=1.8
M1 out in 0 0 nmos W=2u L=180n
RD vdd out 10k
CL out 0 1p
VDD vdd 0 DC {vdd}
VIN in 0 DC 0.6
.end
"""


def main():
    ir = parse_netlist(NETLIST)
    print(f"title: {ir.title!r}")
    for dev in ir.devices:
        ports = ", ".join(f"{p}={n}" for p, n in dev.terminals)
        print(f"  {dev.name:<4} {dev.kind:<10} {ports}  {dev.params}")

    graph = build_graph(ir)
    print(f"\n{graph.num_nodes} nodes, {graph.num_edges} directed edges")
    counts = Counter(RELATIONS[r] for r in graph.rel.tolist())
    for rel, n in sorted(counts.items()):
        print(f"  {rel:<16} {n}")

    # renaming nets does not change the edge multiset
    renamed = parse_netlist(NETLIST.replace(" out ", " n_out ").replace(" out\n", " n_out\n"))
    print("\nedge multiset unchanged under net renaming:",
          build_graph(renamed).edge_multiset() == graph.edge_multiset())


if __name__ == "__main__":
    main()

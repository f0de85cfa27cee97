import numpy as np
import pytest

import oracles
from circret.graph import (
    CONT_SLOTS,
    RELATIONS,
    REL_ID,
    SHARED_NET,
    EmptyNetlist,
    NodeFeaturizer,
    build_graph,
    continuous_slots,
    featurize,
    log_slots,
)
from circret.spice import PORTS, KIND_ORDER, parse_netlist


def g(text):
    return build_graph(parse_netlist("* t\n" + text))


def edges(graph):
    return sorted((graph.node_ids[s], graph.node_ids[d], RELATIONS[r])
                  for s, d, r in zip(graph.src, graph.dst, graph.rel))


def test_vocabulary():
    assert len(RELATIONS) == 20 and len(set(RELATIONS)) == 20
    assert sorted(REL_ID.values()) == list(range(20))


def test_single_resistor():
    graph = g("r1 in out 1k\n")
    assert graph.num_nodes == 1 and graph.num_edges == 0


def test_two_resistors():
    assert edges(g("r1 in mid 1k\nr2 mid out 1k\n")) == [
        ("r1", "r2", "r_terminal"), ("r1", "r2", "shared_net"),
        ("r2", "r1", "r_terminal"), ("r2", "r1", "shared_net"),
    ]


def test_destination_port_rule():
    assert edges(g("r1 a gate 1k\nm1 d gate s b nch\n")) == [
        ("m1", "r1", "r_terminal"), ("m1", "r1", "shared_net"),
        ("r1", "m1", "mos_gate"), ("r1", "m1", "shared_net"),
    ]


def test_empty():
    with pytest.raises(EmptyNetlist):
        build_graph(parse_netlist("* nothing\n.op\n"))


def test_relations_match_destination_ports(corpus):
    port_rel = {}
    for kind, ports in PORTS.items():
        for p in ports:
            from circret.graph import port_relation
            port_rel.setdefault(KIND_ORDER.index(kind), set()).add(port_relation(kind, p))
    for rec in corpus.records[::5]:
        graph = build_graph(parse_netlist(corpus.netlist_text(rec)))
        assert np.all(graph.src != graph.dst)
        for d, r in zip(graph.dst, graph.rel):
            assert r == SHARED_NET or r in port_rel[int(graph.kinds[d])]


def test_symmetry(corpus):
    for rec in corpus.records[::9]:
        ir = parse_netlist(corpus.netlist_text(rec))
        graph = build_graph(ir)
        es = set(edges(graph))
        for u, v, r in es:
            if r == "shared_net":
                assert (v, u, r) in es
            else:
                # reverse edge typed by one of u's ports on a shared net
                assert any(a == v and b == u and rr != "shared_net" for a, b, rr in es)


def _incidence(ir):
    inc = {}
    for dev in ir.devices:
        for _, net in dev.terminals:
            inc.setdefault(net, {}).setdefault(dev.name, 0)
            inc[net][dev.name] += 1
    return inc


def test_edge_count_formula(corpus):
    for rec in corpus.records[::3]:
        ir = parse_netlist(corpus.netlist_text(rec))
        assert build_graph(ir).num_edges == oracles.edge_count_ref(_incidence(ir))


def test_fanout_cap():
    text = "".join(f"r{i} rail n{i} 1k\n" for i in range(40))
    graph = g(text)
    assert not np.any(graph.rel == SHARED_NET)
    assert graph.num_edges == 40 * 39
    graph = build_graph(parse_netlist("* t\n" + text), fanout_cap=64)
    assert graph.num_edges == 2 * 40 * 39


def test_net_renaming(corpus):
    for rec in corpus.records[::17]:
        text = corpus.netlist_text(rec)
        ir = parse_netlist(text)
        mapping = {n: f"q_{i}" for i, n in enumerate(sorted(ir.nets - {"0"}))}
        for dev in ir.devices:
            dev.terminals = [(p, mapping.get(n, n)) for p, n in dev.terminals]
        a, b = build_graph(parse_netlist(text)), build_graph(ir)
        assert a.edge_multiset() == b.edge_multiset()
        assert np.array_equal(a.cont, b.cont) and np.array_equal(a.kinds, b.kinds)


def test_continuous_slots():
    dev = parse_netlist("* t\nr1 a b 10k\n").devices[0]
    x = log_slots(continuous_slots(dev))
    assert abs(x[CONT_SLOTS.index("r")] - oracles.LOG1P_10K) < 1e-12
    v, tol = oracles.QUOTED["log1p_10k"]
    assert abs(x[CONT_SLOTS.index("r")] - v) < tol
    m = parse_netlist("* t\nm1 d g s b nch w=10u l=0.5u m=2\n").devices[0]
    assert np.allclose(continuous_slots(m)[:2], [10.0, 0.5])
    assert continuous_slots(m)[-1] == 2.0


def test_featurize():
    rng = np.random.default_rng(0)
    fz = NodeFeaturizer(rng)
    ir = parse_netlist("* t\nr1 a b 10k\nr2 c d 10k\nc1 a 0 1p\n")
    f1, f2, f3 = (featurize(d, fz) for d in ir.devices)
    assert f1.shape == (512,)
    assert np.array_equal(f1, f2) and not np.allclose(f1, f3)
    # zero continuous params -> the continuous branch is just the bias
    bare = parse_netlist("* t\nd1 a b dm\n").devices[0]
    assert not np.any(log_slots(continuous_slots(bare)))


def test_json_round_trip(corpus):
    from circret.graph import CircuitGraph

    graph = build_graph(parse_netlist(corpus.netlist_text(corpus.records[100])))
    again = CircuitGraph.from_json(graph.to_json())
    assert again.edge_multiset() == graph.edge_multiset()
    assert np.array_equal(again.cont, graph.cont)

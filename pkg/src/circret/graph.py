"""Port-typed relational graphs built from parsed netlists.

One node per device. For every net shared by two distinct devices ``u`` and
``v`` we add ``u -> v`` typed by the port through which ``v`` touches the net
(so a node's incoming messages are partitioned by its own ports), plus an
untyped ``shared_net`` edge. Rails with more than ``fanout_cap`` devices keep
their port-typed edges but drop the ``shared_net`` pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .engine import Module, Parameter, Tensor, ops
from .engine.nn import Linear, init_normal
from .spice import KIND_ORDER, Device, DeviceKind, NetlistIR

RELATIONS = (
    "mos_drain",
    "mos_gate",
    "mos_source",
    "mos_bulk",
    "bjt_collector",
    "bjt_base",
    "bjt_emitter",
    "src_plus",
    "src_minus",
    "diode_anode",
    "diode_cathode",
    "r_terminal",
    "c_terminal",
    "l_terminal",
    "vcvs_port",
    "cccs_port",
    "vccs_port",
    "ccvs_port",
    "shared_net",
    "subckt_terminal",
)
NUM_RELATIONS = len(RELATIONS)
REL_ID = {name: i for i, name in enumerate(RELATIONS)}
SHARED_NET = REL_ID["shared_net"]

NUM_KINDS = len(KIND_ORDER)
KIND_ID = {k: i for i, k in enumerate(KIND_ORDER)}

CONT_SLOTS = ("w", "l", "r", "c", "lind", "vdc", "idc", "mult")
NUM_SLOTS = len(CONT_SLOTS)

FANOUT_CAP = 32


class EmptyNetlist(ValueError):
    pass


class NonFiniteParam(ValueError):
    pass


class RelationOutOfRange(ValueError):
    pass


def port_relation(kind: DeviceKind, port: str) -> int:
    """Relation id for a device of ``kind`` touching a net through ``port``."""
    if kind in (DeviceKind.NMOS, DeviceKind.PMOS):
        name = {"d": "mos_drain", "g": "mos_gate", "s": "mos_source", "b": "mos_bulk"}[port]
    elif kind in (DeviceKind.NPN, DeviceKind.PNP):
        name = {"c": "bjt_collector", "b": "bjt_base", "e": "bjt_emitter"}[port]
    elif kind in (DeviceKind.VSOURCE, DeviceKind.ISOURCE):
        name = {"p": "src_plus", "n": "src_minus"}[port]
    elif kind is DeviceKind.DIODE:
        name = {"a": "diode_anode", "k": "diode_cathode"}[port]
    elif kind is DeviceKind.RESISTOR:
        name = "r_terminal"
    elif kind is DeviceKind.CAPACITOR:
        name = "c_terminal"
    elif kind is DeviceKind.INDUCTOR:
        name = "l_terminal"
    elif kind is DeviceKind.SUBCKT:
        name = "subckt_terminal"
    else:
        name = f"{kind.value}_port"
    return REL_ID[name]


def continuous_slots(dev: Device) -> np.ndarray:
    """Rescaled parameters ``[W um, L um, R kOhm, C pF, L uH, V, I mA, m]``; absent slots are 0."""
    x = np.zeros(NUM_SLOTS, dtype=np.float64)
    p = dev.params
    k = dev.kind
    if k in (DeviceKind.NMOS, DeviceKind.PMOS):
        x[0] = p.get("w", 0.0) / 1e-6
        x[1] = p.get("l", 0.0) / 1e-6
    elif k is DeviceKind.RESISTOR:
        x[2] = p.get("value", 0.0) / 1e3
    elif k is DeviceKind.CAPACITOR:
        x[3] = p.get("value", 0.0) / 1e-12
    elif k is DeviceKind.INDUCTOR:
        x[4] = p.get("value", 0.0) / 1e-6
    elif k is DeviceKind.VSOURCE:
        x[5] = p.get("value", 0.0)
    elif k is DeviceKind.ISOURCE:
        x[6] = p.get("value", 0.0) / 1e-3
    x[7] = p.get("m", 0.0)
    if not np.all(np.isfinite(x)):
        raise NonFiniteParam(f"{dev.name}: non-finite parameter")
    return x


def log_slots(x: np.ndarray) -> np.ndarray:
    """Sign-preserving ``log(1 + |x|)``; equals ``log1p`` on non-negative input."""
    return np.sign(x) * np.log1p(np.abs(x))


@dataclass
class CircuitGraph:
    node_ids: list[str]
    kinds: np.ndarray  # (N,) int kind ids
    cont: np.ndarray  # (N, 8) rescaled continuous slots
    src: np.ndarray  # (E,)
    dst: np.ndarray  # (E,)
    rel: np.ndarray  # (E,)
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def edge_multiset(self) -> list[tuple[int, int, int]]:
        return sorted(zip(self.src.tolist(), self.dst.tolist(), self.rel.tolist()))

    def permuted(self, perm) -> "CircuitGraph":
        """Same graph with node ``perm[i]`` moved to position ``i``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return CircuitGraph(
            [self.node_ids[i] for i in perm],
            self.kinds[perm],
            self.cont[perm],
            inv[self.src],
            inv[self.dst],
            self.rel.copy(),
            dict(self.meta),
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "nodes": [
                {"id": nid, "kind": KIND_ORDER[k].value, "params": dict(zip(CONT_SLOTS, c.tolist()))}
                for nid, k, c in zip(self.node_ids, self.kinds.tolist(), self.cont)
            ],
            "edges": [
                [s, d, RELATIONS[r]]
                for s, d, r in zip(self.src.tolist(), self.dst.tolist(), self.rel.tolist())
            ],
            "relations": list(RELATIONS),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "CircuitGraph":
        nodes = obj["nodes"]
        edges = obj["edges"]
        return cls(
            [n["id"] for n in nodes],
            np.array([KIND_ID[DeviceKind(n["kind"])] for n in nodes], dtype=np.int64),
            np.array([[n["params"][s] for s in CONT_SLOTS] for n in nodes], dtype=np.float64).reshape(-1, NUM_SLOTS),
            np.array([e[0] for e in edges], dtype=np.int64),
            np.array([e[1] for e in edges], dtype=np.int64),
            np.array([REL_ID[e[2]] for e in edges], dtype=np.int64),
        )

    def dumps(self, **kw) -> str:
        return json.dumps(self.to_json(), **kw)


def build_graph(ir: NetlistIR, fanout_cap: int = FANOUT_CAP) -> CircuitGraph:
    """Top-level devices become nodes; subcircuit instances stay single nodes."""
    if not ir.devices:
        raise EmptyNetlist("netlist has no devices")
    # net -> [(device index, port)], nets in order of first appearance
    incidence: dict[str, list[tuple[int, str]]] = {}
    for i, dev in enumerate(ir.devices):
        for port, net in dev.terminals:
            incidence.setdefault(net, []).append((i, port))

    src: list[int] = []
    dst: list[int] = []
    rel: list[int] = []
    for net, hits in incidence.items():
        ports_of: dict[int, list[str]] = {}
        for i, port in hits:
            ports_of.setdefault(i, []).append(port)
        devs = list(ports_of)
        with_shared = len(devs) <= fanout_cap
        for u in devs:
            for v in devs:
                if u == v:
                    continue
                kind_v = ir.devices[v].kind
                for port in ports_of[v]:
                    src.append(u)
                    dst.append(v)
                    rel.append(port_relation(kind_v, port))
                if with_shared:
                    src.append(u)
                    dst.append(v)
                    rel.append(SHARED_NET)

    return CircuitGraph(
        node_ids=[d.name for d in ir.devices],
        kinds=np.array([KIND_ID[d.kind] for d in ir.devices], dtype=np.int64),
        cont=np.stack([continuous_slots(d) for d in ir.devices]),
        src=np.array(src, dtype=np.int64),
        dst=np.array(dst, dtype=np.int64),
        rel=np.array(rel, dtype=np.int64),
    )


class NodeFeaturizer(Module):
    """``W_fuse [Emb(kind) || Linear(log1p(cont))]`` per node."""

    def __init__(self, rng: np.random.Generator, d_out: int = 512, d_type: int = 64, d_cont: int = 64,
                 group: str = "graph.featurizer"):
        self.type_embedding = Parameter(init_normal(rng, (NUM_KINDS, d_type), 1.0), group)
        self.cont_linear = Linear(NUM_SLOTS, d_cont, rng, group)
        self.fuse = Parameter(init_normal(rng, (d_type + d_cont, d_out), (d_type + d_cont) ** -0.5), group)
        self.d_out = d_out

    def __call__(self, kinds: np.ndarray, cont: np.ndarray) -> Tensor:
        cont = np.asarray(cont, dtype=np.float64)
        if not np.all(np.isfinite(cont)):
            raise NonFiniteParam("non-finite continuous feature")
        emb = ops.embedding(self.type_embedding, kinds)
        c = self.cont_linear(Tensor(log_slots(cont).astype(self.fuse.dtype)))
        return ops.matmul(ops.concat([emb, c], axis=-1), self.fuse)


def featurize(device: Device, featurizer: NodeFeaturizer) -> np.ndarray:
    """Initial node vector for a single device."""
    out = featurizer(np.array([KIND_ID[device.kind]]), continuous_slots(device)[None, :])
    return out.data[0]

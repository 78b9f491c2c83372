"""Typed flow networks (energy, information, payment) with agents as super nodes.

Flow on an edge is a signed rate in the network's unit (W, bit/s, currency per
step). Three rules apply:

* capacity: ``|f(A, B)| <= c(A, B)`` on every edge, all kinds;
* antisymmetry: ``f(A, B) == -f(B, A)`` for energy and payment (information
  can be copied, so its edges are one-way records);
* balance: the net outflow of a node is negative for a sink, zero for a
  transmission node and positive for a source.

A storage node may hold a nonzero balance; `accumulate_storage` integrates it.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable

NodeId = Hashable


class FlowKind(enum.Enum):
    ENERGY = "energy"
    INFORMATION = "information"
    PAYMENT = "payment"


ANTISYMMETRIC = frozenset({FlowKind.ENERGY, FlowKind.PAYMENT})


class Role(enum.Enum):
    SOURCE = "source"
    SINK = "sink"
    TRANSMISSION = "transmission"
    STORAGE = "storage"


class FlowError(Exception):
    pass


class UnknownEdge(FlowError, KeyError):
    pass


class UnknownNode(FlowError, KeyError):
    pass


class CapacityExceeded(FlowError, ValueError):
    pass


@dataclass
class FlowNode:
    id: NodeId
    kind: FlowKind
    role: Role = Role.TRANSMISSION
    agent: str | None = None
    stored: float = 0.0


@dataclass
class FlowEdge:
    from_node: NodeId
    to_node: NodeId
    capacity: float = math.inf
    flow: float = 0.0

    def __post_init__(self):
        if self.from_node == self.to_node:
            raise ValueError(f"self-loop on {self.from_node!r}")
        if not self.capacity >= 0:
            raise ValueError("capacity must be nonnegative")


@dataclass
class Agent:
    """Decision-making super node: a named set of (kind, node) pairs it controls."""

    id: str
    controlled: set[tuple[FlowKind, NodeId]] = field(default_factory=set)
    utility: Callable | None = field(default=None, compare=False, repr=False)

    def controls(self, kind: FlowKind, node: NodeId) -> bool:
        return (kind, node) in self.controlled

    def nodes(self, kind: FlowKind) -> list[NodeId]:
        return sorted((n for k, n in self.controlled if k is kind), key=str)


@dataclass
class FlowGraph:
    kind: FlowKind
    nodes: dict[NodeId, FlowNode] = field(default_factory=dict)
    edges: dict[tuple[NodeId, NodeId], FlowEdge] = field(default_factory=dict)

    def add_node(self, id: NodeId, role: Role = Role.TRANSMISSION, agent: str | None = None) -> FlowNode:
        if id in self.nodes:
            raise ValueError(f"duplicate {self.kind.value} node {id!r}")
        node = self.nodes[id] = FlowNode(id, self.kind, role, agent)
        return node

    def add_edge(self, a: NodeId, b: NodeId, capacity: float = math.inf, flow: float = 0.0) -> FlowEdge:
        for end in (a, b):
            if end not in self.nodes:
                raise UnknownNode(end)
        if (a, b) in self.edges or (self.kind in ANTISYMMETRIC and (b, a) in self.edges):
            raise ValueError(f"duplicate {self.kind.value} edge {a!r}-{b!r}")
        edge = self.edges[(a, b)] = FlowEdge(a, b, capacity)
        if flow:
            self.set_flow(a, b, flow)
        return edge

    def _lookup(self, a: NodeId, b: NodeId) -> tuple[FlowEdge, float]:
        """The stored edge carrying f(a, b) and the sign mapping its flow to f(a, b)."""
        if (a, b) in self.edges:
            return self.edges[(a, b)], 1.0
        if self.kind in ANTISYMMETRIC and (b, a) in self.edges:
            return self.edges[(b, a)], -1.0
        raise UnknownEdge((self.kind.value, a, b))

    def set_flow(self, a: NodeId, b: NodeId, value: float) -> None:
        edge, sign = self._lookup(a, b)
        if abs(value) > edge.capacity:
            raise CapacityExceeded(
                f"{self.kind.value} flow {value} on {a!r}->{b!r} exceeds capacity {edge.capacity}"
            )
        edge.flow = sign * value

    def flow(self, a: NodeId, b: NodeId) -> float:
        edge, sign = self._lookup(a, b)
        return sign * edge.flow

    def balance(self, node: NodeId) -> float:
        if node not in self.nodes:
            raise UnknownNode((self.kind.value, node))
        total = 0.0
        for (a, b), edge in self.edges.items():
            if a == node:
                total += edge.flow
            elif b == node:
                total -= edge.flow
        return total


@dataclass(frozen=True)
class Violation:
    rule: str  # Capacity | Antisymmetry | Conservation | AgentDisjoint | AgentNode | Edge
    kind: FlowKind | None
    element: tuple
    detail: str = ""


class MultiNetwork:
    """Energy, information and payment flow graphs plus the agents spanning them."""

    def __init__(self, agents: Iterable[Agent] = ()):
        self.networks = {kind: FlowGraph(kind) for kind in FlowKind}
        self.agents: list[Agent] = list(agents)

    def __getitem__(self, kind: FlowKind) -> FlowGraph:
        return self.networks[kind]

    def __eq__(self, other):
        if not isinstance(other, MultiNetwork):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def add_node(self, kind: FlowKind, id: NodeId, role: Role = Role.TRANSMISSION, agent: str | None = None):
        return self.networks[kind].add_node(id, role, agent)

    def add_edge(self, kind: FlowKind, a: NodeId, b: NodeId, capacity: float = math.inf, flow: float = 0.0):
        return self.networks[kind].add_edge(a, b, capacity, flow)

    def add_agent(self, agent: Agent) -> Agent:
        self.agents.append(agent)
        for kind, node in agent.controlled:
            if node in self.networks[kind].nodes:
                self.networks[kind].nodes[node].agent = agent.id
        return agent

    def set_flow(self, kind: FlowKind, a: NodeId, b: NodeId, value: float) -> MultiNetwork:
        self.networks[kind].set_flow(a, b, value)
        return self

    def flow(self, kind: FlowKind, a: NodeId, b: NodeId) -> float:
        return self.networks[kind].flow(a, b)

    def node_balance(self, kind: FlowKind, node: NodeId) -> float:
        return self.networks[kind].balance(node)

    def accumulate_storage(self, kind: FlowKind, dt: float) -> None:
        """Integrate net inflow of every storage node over `dt` into its `stored` amount."""
        graph = self.networks[kind]
        for node in graph.nodes.values():
            if node.role is Role.STORAGE:
                node.stored -= graph.balance(node.id) * dt

    def validate(self, tolerance: float = 1e-9) -> list[Violation]:
        return validate(self, tolerance)

    def to_dict(self) -> dict:
        nets = {}
        for kind, g in self.networks.items():
            nets[kind.value] = {
                "nodes": [
                    {"id": n.id, "kind": kind.value, "role": n.role.value, "agent": n.agent, "stored": n.stored}
                    for n in g.nodes.values()
                ],
                "edges": [
                    {
                        "from": e.from_node,
                        "to": e.to_node,
                        "capacity": None if math.isinf(e.capacity) else e.capacity,
                        "flow": e.flow,
                    }
                    for e in g.edges.values()
                ],
            }
        agents = [
            {"id": a.id, "controlled": sorted(([k.value, n] for k, n in a.controlled), key=lambda p: (p[0], str(p[1])))}
            for a in self.agents
        ]
        return {"networks": nets, "agents": agents}

    @classmethod
    def from_dict(cls, doc: dict) -> MultiNetwork:
        """Build a network from its canonical document without enforcing the flow rules.

        Stored data may violate them; `validate` reports what is wrong.
        """
        net = cls()
        for kind_name, g in doc.get("networks", {}).items():
            graph = net.networks[FlowKind(kind_name)]
            for n in g.get("nodes", []):
                node = graph.add_node(n["id"], Role(n.get("role", "transmission")), n.get("agent"))
                node.stored = float(n.get("stored", 0.0))
            for e in g.get("edges", []):
                cap = e.get("capacity")
                edge = FlowEdge(e["from"], e["to"], math.inf if cap is None else float(cap))
                edge.flow = float(e.get("flow", 0.0))
                graph.edges[(edge.from_node, edge.to_node)] = edge
        for a in doc.get("agents", []):
            net.agents.append(Agent(a["id"], {(FlowKind(k), n) for k, n in a.get("controlled", [])}))
        return net

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> MultiNetwork:
        return cls.from_dict(json.loads(text))


def set_flow(net: MultiNetwork, kind: FlowKind, a: NodeId, b: NodeId, value: float) -> MultiNetwork:
    return net.set_flow(kind, a, b, value)


def node_balance(net: MultiNetwork, kind: FlowKind, node: NodeId) -> float:
    """Net outflow sum over neighbours B of f(node, B)."""
    return net.node_balance(kind, node)


def classify_node(balance: float, tolerance: float = 1e-9) -> Role:
    if tolerance < 0:
        raise ValueError("tolerance must be nonnegative")
    if balance < -tolerance:
        return Role.SINK
    if balance > tolerance:
        return Role.SOURCE
    return Role.TRANSMISSION


def validate(net: MultiNetwork, tolerance: float = 1e-9) -> list[Violation]:
    """List every broken rule; an empty list means the network is consistent."""
    out: list[Violation] = []
    for kind, g in net.networks.items():
        for (a, b), e in g.edges.items():
            if a not in g.nodes or b not in g.nodes or a == b:
                out.append(Violation("Edge", kind, (a, b), "dangling endpoint or self-loop"))
            if abs(e.flow) > e.capacity:
                out.append(Violation("Capacity", kind, (a, b), f"|{e.flow}| > {e.capacity}"))
            if kind in ANTISYMMETRIC and (b, a) in g.edges and repr(a) < repr(b):
                if e.flow != -g.edges[(b, a)].flow:
                    out.append(Violation("Antisymmetry", kind, (a, b), f"{e.flow} != -{g.edges[(b, a)].flow}"))
        for node in g.nodes.values():
            if node.role is Role.TRANSMISSION:
                bal = g.balance(node.id)
                if abs(bal) > tolerance:
                    out.append(Violation("Conservation", kind, (node.id,), f"net flow {bal}"))
    owner: dict[tuple[FlowKind, NodeId], str] = {}
    for agent in net.agents:
        for kind, node in sorted(agent.controlled, key=lambda p: (p[0].value, str(p[1]))):
            if node not in net.networks[kind].nodes:
                out.append(Violation("AgentNode", kind, (agent.id, node), "controlled node does not exist"))
            if (kind, node) in owner and owner[(kind, node)] != agent.id:
                out.append(Violation("AgentDisjoint", kind, (node,), f"{owner[(kind, node)]} and {agent.id}"))
            owner.setdefault((kind, node), agent.id)
    return out

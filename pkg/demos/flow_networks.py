"""Build a small multi-network by hand and let the validator find problems.

Energy and payments are antisymmetric (a flow a->b is a flow -f b->a),
information is not: a reply needs its own link.
"""

from gridflows.flowcore import Agent, CapacityExceeded, FlowKind, MultiNetwork, Role, classify_node

E, I, P = FlowKind.ENERGY, FlowKind.INFORMATION, FlowKind.PAYMENT

net = MultiNetwork()
for node, role in [("plant", Role.SOURCE), ("substation", Role.TRANSMISSION), ("house", Role.SINK)]:
    net.add_node(E, node, role)
net.add_edge(E, "plant", "substation", capacity=10.0)
net.add_edge(E, "substation", "house", capacity=4.0)

net.set_flow(E, "plant", "substation", 3.5).set_flow(E, "substation", "house", 3.5)
print("flow substation->plant:", net.flow(E, "substation", "plant"))
print("substation balance:", net.node_balance(E, "substation"),
      "->", classify_node(net.node_balance(E, "substation")).value)

try:
    net.set_flow(E, "substation", "house", 5.0)
except CapacityExceeded as exc:
    print("rejected:", exc)

for node in ("meter-box", "utility-server"):
    net.add_node(I, node, Role.STORAGE)
net.add_edge(I, "meter-box", "utility-server", capacity=9600.0)
for acct in ("household", "utility"):
    net.add_node(P, acct, Role.STORAGE)
net.add_edge(P, "household", "utility")

net.add_agent(Agent("household", {(E, "house"), (I, "meter-box"), (P, "household")}))
net.add_agent(Agent("utility", {(E, "plant"), (I, "utility-server"), (P, "utility")}))
print("violations:", net.validate())

# A second agent claiming the house breaks disjointness; an unbalanced
# substation breaks conservation.
net.add_agent(Agent("intruder", {(E, "house")}))
net.set_flow(E, "plant", "substation", 4.0)
for v in net.validate():
    print(f"  {v.rule:13s} {v.kind.value if v.kind else '':12s} {v.element} {v.detail}")

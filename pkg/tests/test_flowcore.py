import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridflows.flowcore import (
    Agent,
    CapacityExceeded,
    FlowKind,
    MultiNetwork,
    Role,
    UnknownEdge,
    UnknownNode,
    classify_node,
    node_balance,
    set_flow,
    validate,
)

E, I, P = FlowKind.ENERGY, FlowKind.INFORMATION, FlowKind.PAYMENT


def chain(kind=E, capacity=10.0):
    net = MultiNetwork()
    net.add_node(kind, "a", Role.SOURCE)
    net.add_node(kind, "b", Role.TRANSMISSION)
    net.add_node(kind, "c", Role.SINK)
    net.add_edge(kind, "a", "b", capacity)
    net.add_edge(kind, "b", "c", capacity)
    return net


def test_energy_flow_is_antisymmetric():
    net = set_flow(chain(), E, "a", "b", 5.0)
    assert net.flow(E, "b", "a") == -5.0
    assert net.flow(E, "a", "b") == 5.0


def test_setting_reverse_direction_stores_negated_flow():
    net = chain()
    net.set_flow(E, "b", "a", 2.5)
    assert net.flow(E, "a", "b") == -2.5


def test_capacity_exceeded():
    net = chain()
    with pytest.raises(CapacityExceeded):
        net.set_flow(E, "a", "b", 11.0)
    with pytest.raises(CapacityExceeded):
        net.set_flow(E, "b", "a", 10.5)
    assert net.flow(E, "a", "b") == 0.0


def test_payment_flow_at_full_capacity_accepted():
    net = chain(P)
    net.set_flow(P, "a", "b", 10.0)
    assert net.flow(P, "b", "a") == -10.0
    assert not [v for v in validate(net) if v.rule == "Capacity"]


def test_payment_capacity_unbounded_by_default():
    net = MultiNetwork()
    net.add_node(P, "x", Role.STORAGE)
    net.add_node(P, "y", Role.STORAGE)
    net.add_edge(P, "x", "y")
    net.set_flow(P, "x", "y", 1e12)
    assert net[P].edges[("x", "y")].capacity == math.inf


def test_information_is_not_antisymmetric():
    net = chain(I)
    net.set_flow(I, "a", "b", 3.0)
    with pytest.raises(UnknownEdge):
        net.flow(I, "b", "a")
    net.add_edge(I, "b", "a", 10.0)
    assert net.flow(I, "b", "a") == 0.0


def test_unknown_edge_and_node():
    net = chain()
    with pytest.raises(UnknownEdge):
        net.set_flow(E, "a", "c", 1.0)
    with pytest.raises(UnknownNode):
        node_balance(net, E, "zz")


def test_duplicate_reverse_energy_edge_rejected():
    net = chain()
    with pytest.raises(ValueError):
        net.add_edge(E, "b", "a", 1.0)


def test_balance_examples():
    net = chain()
    net.set_flow(E, "a", "b", 3.0).set_flow(E, "b", "c", 3.0)
    assert node_balance(net, E, "b") == 0.0
    net.add_node(E, "lonely")
    assert node_balance(net, E, "lonely") == 0.0

    src = MultiNetwork()
    for n in ("s", "u", "v"):
        src.add_node(E, n)
    src.add_edge(E, "s", "u", 5.0, flow=2.0)
    src.add_edge(E, "s", "v", 5.0, flow=1.5)
    assert node_balance(src, E, "s") == 3.5


@pytest.mark.parametrize(
    "balance, role",
    [(-2.0, Role.SINK), (0.0, Role.TRANSMISSION), (4.2, Role.SOURCE), (5e-10, Role.TRANSMISSION)],
)
def test_classify_node(balance, role):
    assert classify_node(balance, 1e-9) is role


def test_classify_rejects_negative_tolerance():
    with pytest.raises(ValueError):
        classify_node(0.0, -1.0)


def test_validate_well_formed_chain():
    net = chain()
    net.set_flow(E, "a", "b", 4.0).set_flow(E, "b", "c", 4.0)
    assert validate(net) == []


def test_validate_agent_disjoint():
    net = chain()
    net.add_agent(Agent("x", {(E, "b")}))
    net.add_agent(Agent("y", {(E, "b")}))
    rules = [(v.rule, v.element) for v in validate(net)]
    assert rules == [("AgentDisjoint", ("b",))]


def test_validate_transmission_imbalance():
    net = chain()
    net.set_flow(E, "a", "b", 1.0)
    rules = [(v.rule, v.element) for v in validate(net, 1e-9)]
    assert rules == [("Conservation", ("b",))]


def test_validate_reports_stored_violations():
    doc = chain().to_dict()
    doc["networks"]["energy"]["edges"][0]["flow"] = 12.0
    doc["networks"]["energy"]["edges"].append({"from": "b", "to": "a", "capacity": 10.0, "flow": 12.0})
    doc["agents"] = [{"id": "ghost", "controlled": [["energy", "nowhere"]]}]
    rules = sorted(v.rule for v in validate(MultiNetwork.from_dict(doc)))
    assert rules == ["AgentNode", "Antisymmetry", "Capacity", "Capacity"]


def test_storage_accumulates_inflow():
    net = MultiNetwork()
    net.add_node(E, "grid", Role.SOURCE)
    net.add_node(E, "ev", Role.STORAGE)
    net.add_edge(E, "grid", "ev", 10.0, flow=2.0)
    net.accumulate_storage(E, dt=3.0)
    assert net[E].nodes["ev"].stored == 6.0
    assert validate(net) == []


def test_json_round_trip():
    net = chain()
    net.set_flow(E, "a", "b", 1.25)
    net.add_agent(Agent("op", {(E, "a")}))
    again = MultiNetwork.from_json(net.to_json())
    assert again == net
    assert again.to_dict()["networks"]["energy"]["edges"][0] == {"from": "a", "to": "b", "capacity": 10.0, "flow": 1.25}
    assert again[E].nodes["a"].agent == "op"


flows = st.floats(-20, 20, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(kind=st.sampled_from([E, P]), values=st.lists(st.tuples(st.booleans(), flows), min_size=1, max_size=20))
def test_antisymmetry_after_any_sequence(kind, values):
    net = chain(kind, capacity=10.0)
    for forward, v in values:
        a, b = ("a", "b") if forward else ("b", "a")
        try:
            net.set_flow(kind, a, b, v)
        except CapacityExceeded:
            assert abs(v) > 10.0
        else:
            assert abs(v) <= 10.0
        assert net.flow(kind, "a", "b") == -net.flow(kind, "b", "a")


@settings(max_examples=200, deadline=None)
@given(cap=st.floats(0, 50), value=flows)
def test_capacity_rejects_exactly_the_over_capacity(cap, value):
    net = chain(E, capacity=cap)
    if abs(value) > cap:
        with pytest.raises(CapacityExceeded):
            net.set_flow(E, "a", "b", value)
    else:
        net.set_flow(E, "a", "b", value)
        assert abs(net.flow(E, "a", "b")) <= cap


@settings(max_examples=200, deadline=None)
@given(v=st.floats(0, 10, allow_nan=False))
def test_equal_in_and_out_is_transmission(v):
    net = chain()
    net.set_flow(E, "a", "b", v).set_flow(E, "b", "c", v)
    assert classify_node(node_balance(net, E, "b")) is Role.TRANSMISSION


@settings(max_examples=100, deadline=None)
@given(v1=flows, v2=flows)
def test_validate_is_idempotent_and_pure(v1, v2):
    doc = chain().to_dict()
    doc["networks"]["energy"]["edges"][0]["flow"] = v1
    doc["networks"]["energy"]["edges"][1]["flow"] = v2
    net = MultiNetwork.from_dict(doc)
    before = net.to_dict()
    assert validate(net) == validate(net)
    assert net.to_dict() == before

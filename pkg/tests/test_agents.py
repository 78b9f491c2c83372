from decimal import Decimal

import pytest

from gridflows.agents import (
    ConsumerAgent,
    GridOperatorAgent,
    Observation,
    Pay,
    PolicyAgent,
    SendMessage,
    SetSwitch,
    bill_payload,
    evaluate_utility,
    parse_bill,
    partition_actions,
    step_agent,
    welfare,
)
from gridflows.flowcore import FlowKind
from gridflows.infonet import Message

D = Decimal


def bill(amount="3.50", bill_id="op-bill-1"):
    return Message("op", "home", bill_payload(bill_id, D(amount), "operator", (0, 6), D("12.0")))


def test_consumer_charges_below_threshold():
    c = ConsumerAgent("c", price_threshold="0.25")
    assert c.act(Observation(0, {"ev": {"soc": 0.5}}, price=D("0.25"))) == [SetSwitch("switch", True)]
    assert c.act(Observation(0, {"ev": {"soc": 0.5}}, price=D("0.26"))) == [SetSwitch("switch", False)]
    assert c.act(Observation(0, {"ev": {"soc": 1.0}}, price=D("0.10"))) == [SetSwitch("switch", False)]


def test_consumer_pays_bills_from_inbox():
    c = ConsumerAgent("c", account="home-acct", fee="0.05")
    noise = Message("op", "home", b"not json")
    actions = c.act(Observation(5, {}, [bill(), noise], price=D("1")))
    pays = [a for a in actions if isinstance(a, Pay)]
    assert len(pays) == 1
    tx = pays[0].transaction
    assert (tx.from_account, tx.to_account, tx.amount, tx.fee, tx.at, tx.ref) == (
        "home-acct", "operator", D("3.50"), D("0.05"), 5.0, "op-bill-1")


def test_operator_bills_each_period():
    op = GridOperatorAgent("op", meter="m", address="op", customer_address="home", billing_period=2)
    reading = lambda t, e, p: Observation(t, {"m": {"step": t - 1, "energy_kwh": e, "price": p}})
    assert op.act(Observation(0, {})) == []
    assert op.act(reading(1, "2.0", "0.30")) == []
    (send,) = op.act(reading(2, "1.5", "0.20"))
    assert isinstance(send, SendMessage)
    doc = parse_bill(send.message)
    assert D(doc["amount"]) == D("0.900") and doc["period"] == [0, 2] and D(doc["energy_kwh"]) == D("3.5")
    assert op.accrued == 0
    assert op.act(reading(3, "0", "0.20")) == [] and op.act(reading(4, "0", "0.20")) == []
    assert op.bills_sent == 1


def test_default_controlled_sets():
    c = ConsumerAgent("c")
    assert c.controls(FlowKind.ENERGY, "switch") and c.controls(FlowKind.PAYMENT, "consumer")
    op = GridOperatorAgent("op")
    assert list(op.nodes(FlowKind.INFORMATION)) == ["operator"]


def test_partition_rejects_uncontrolled_targets():
    c = ConsumerAgent("c", switch="sw", storage="ev")
    ok, bad = partition_actions(c, [SetSwitch("sw", True), SetSwitch("other", True)])
    assert ok == [SetSwitch("sw", True)] and bad == [SetSwitch("other", True)]
    assert step_agent(c, Observation(0, {}, price=D("0"))) == [SetSwitch("sw", True)]


def test_utilities():
    c = ConsumerAgent("c", soc_weight=10.0)
    hist = [Observation(0, {"ev": {"soc": 0.2}}, balance=D("100")), Observation(1, {"ev": {"soc": 0.5}}, balance=D("97"))]
    assert evaluate_utility(c, hist) == pytest.approx(-3.0 + 5.0)
    op = GridOperatorAgent("op")
    assert evaluate_utility(op, [Observation(0, balance=D("0")), Observation(1, balance=D("2.5"))]) == 2.5
    with pytest.raises(ValueError):
        evaluate_utility(op, [])
    custom = PolicyAgent("x", utility=lambda h: len(h))
    assert evaluate_utility(custom, hist) == 2.0
    assert welfare({"a": 1.5, "b": -0.5}) == 1.0

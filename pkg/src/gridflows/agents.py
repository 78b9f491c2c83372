"""Agents that observe their controlled nodes and act on the three networks.

The built-in policies are plain threshold rules: a consumer charging an EV
when the tariff is low enough and paying bills on arrival, and a grid operator
metering energy and billing the consumer once per billing period.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Union

from .flowcore import Agent, FlowKind
from .infonet import Message
from .paynet import Transaction, to_decimal


@dataclass
class Observation:
    time: int
    energy_state: dict = field(default_factory=dict)
    inbox: list[Message] = field(default_factory=list)
    balance: Decimal = Decimal(0)
    price: Decimal = Decimal(0)


@dataclass(frozen=True)
class SetSwitch:
    node: str
    on: bool


@dataclass(frozen=True)
class SetSetpoint:
    node: str
    power_kw: float


@dataclass(frozen=True)
class SendMessage:
    message: Message


@dataclass(frozen=True)
class Pay:
    transaction: Transaction


Action = Union[SetSwitch, SetSetpoint, SendMessage, Pay]


def target(action: Action) -> tuple[FlowKind, str]:
    """The (network, node) an action manipulates; the actor must control it."""
    if isinstance(action, (SetSwitch, SetSetpoint)):
        return FlowKind.ENERGY, action.node
    if isinstance(action, SendMessage):
        return FlowKind.INFORMATION, action.message.sender
    if isinstance(action, Pay):
        return FlowKind.PAYMENT, action.transaction.from_account
    raise TypeError(f"not an action: {action!r}")


def action_to_dict(action: Action) -> dict:
    if isinstance(action, SetSwitch):
        return {"type": "set_switch", "node": action.node, "on": action.on}
    if isinstance(action, SetSetpoint):
        return {"type": "set_setpoint", "node": action.node, "power_kw": action.power_kw}
    if isinstance(action, SendMessage):
        m = action.message
        return {
            "type": "send_message",
            "sender": m.sender,
            "receiver": m.receiver,
            "size_bits": m.size_bits,
            "payload": m.payload.decode("utf-8", "replace"),
        }
    return {"type": "pay", **action.transaction.to_dict()}


class PolicyAgent(Agent):
    """Agent with a decision rule. Subclasses implement `act` and `evaluate`."""

    def act(self, obs: Observation) -> list[Action]:
        return []

    def evaluate(self, history: list[Observation]) -> float:
        if self.utility is not None:
            return float(self.utility(history))
        return 0.0


def bill_payload(bill_id: str, amount: Decimal, pay_to: str, period: tuple[int, int], energy_kwh: Decimal) -> bytes:
    doc = {
        "kind": "bill",
        "bill_id": bill_id,
        "amount": str(amount),
        "pay_to": pay_to,
        "period": list(period),
        "energy_kwh": str(energy_kwh),
    }
    return json.dumps(doc, sort_keys=True).encode()


def parse_bill(msg: Message) -> dict | None:
    try:
        doc = json.loads(msg.payload.decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        return None
    return doc if isinstance(doc, dict) and doc.get("kind") == "bill" else None


@dataclass(eq=False)
class ConsumerAgent(PolicyAgent):
    switch: str = "switch"
    storage: str = "ev"
    address: str = "consumer"
    account: str = "consumer"
    price_threshold: Decimal = Decimal("0.30")
    soc_weight: float = 0.0
    fee: Decimal = Decimal(0)

    def __post_init__(self):
        self.price_threshold = to_decimal(self.price_threshold)
        self.fee = to_decimal(self.fee)
        if not self.controlled:
            self.controlled = {
                (FlowKind.ENERGY, self.switch),
                (FlowKind.ENERGY, self.storage),
                (FlowKind.INFORMATION, self.address),
                (FlowKind.PAYMENT, self.account),
            }

    def act(self, obs: Observation) -> list[Action]:
        soc = obs.energy_state.get(self.storage, {}).get("soc", 0.0)
        charge = to_decimal(obs.price) <= self.price_threshold and soc < 1.0
        actions: list[Action] = [SetSwitch(self.switch, charge)]
        for msg in obs.inbox:
            bill = parse_bill(msg)
            if bill is None or Decimal(bill["amount"]) <= 0:
                continue
            tx = Transaction(self.account, bill["pay_to"], Decimal(bill["amount"]), self.fee, float(obs.time), bill["bill_id"])
            actions.append(Pay(tx))
        return actions

    def evaluate(self, history: list[Observation]) -> float:
        if self.utility is not None:
            return float(self.utility(history))
        paid = history[0].balance - history[-1].balance
        soc = history[-1].energy_state.get(self.storage, {}).get("soc", 0.0)
        return -float(paid) + self.soc_weight * soc


@dataclass(eq=False)
class GridOperatorAgent(PolicyAgent):
    meter: str = "meter"
    address: str = "operator"
    account: str = "operator"
    customer_address: str = "consumer"
    billing_period: int = 24
    accrued: Decimal = Decimal(0)
    accrued_energy: Decimal = Decimal(0)
    period_start: int = 0
    bills_sent: int = 0

    def __post_init__(self):
        if self.billing_period < 1:
            raise ValueError("billing_period must be positive")
        if not self.controlled:
            self.controlled = {
                (FlowKind.ENERGY, self.meter),
                (FlowKind.INFORMATION, self.address),
                (FlowKind.PAYMENT, self.account),
            }

    def act(self, obs: Observation) -> list[Action]:
        reading = obs.energy_state.get(self.meter)
        if reading and reading.get("step") is not None:
            energy = Decimal(reading["energy_kwh"])
            self.accrued += Decimal(reading["price"]) * energy
            self.accrued_energy += energy
        if obs.time == 0 or obs.time % self.billing_period:
            return []
        period = (self.period_start, obs.time)
        amount, energy = self.accrued, self.accrued_energy
        self.accrued = self.accrued_energy = Decimal(0)
        self.period_start = obs.time
        if amount <= 0:
            return []
        self.bills_sent += 1
        bill_id = f"{self.id}-bill-{self.bills_sent}"
        payload = bill_payload(bill_id, amount, self.account, period, energy)
        return [SendMessage(Message(self.address, self.customer_address, payload))]

    def evaluate(self, history: list[Observation]) -> float:
        if self.utility is not None:
            return float(self.utility(history))
        return float(history[-1].balance - history[0].balance)


def partition_actions(agent: Agent, actions: list[Action]) -> tuple[list[Action], list[Action]]:
    ok, rejected = [], []
    for a in actions:
        (ok if agent.controls(*target(a)) else rejected).append(a)
    return ok, rejected


def step_agent(agent: PolicyAgent, obs: Observation) -> list[Action]:
    """The agent's actions for this observation, restricted to nodes it controls."""
    return partition_actions(agent, agent.act(obs))[0]


def evaluate_utility(agent: PolicyAgent, history: list[Observation]) -> float:
    if not history:
        raise ValueError("history must be nonempty")
    return agent.evaluate(history)


def welfare(utilities: dict[str, float]) -> float:
    return float(sum(utilities.values()))

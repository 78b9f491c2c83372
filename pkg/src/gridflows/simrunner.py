"""Coupled step loop over the energy, information and payment networks.

Each step runs six phases in a fixed order:

1. observe the state left by the previous step,
2. step agents in id order,
3. apply switch and setpoint actions to the case,
4. advance the information network by one step,
5. solve the power flow and read meters and storage,
6. settle the payments issued in phase 2.

Everything random comes from the scenario seed, so a scenario and its seed
determine the trace byte for byte.
"""

from __future__ import annotations

import copy
import csv
import importlib
import io
import json
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path

import numpy as np

from . import cdf
from .agents import (
    ConsumerAgent,
    GridOperatorAgent,
    Observation,
    Pay,
    PolicyAgent,
    SendMessage,
    SetSetpoint,
    SetSwitch,
    action_to_dict,
    partition_actions,
    welfare,
)
from .flowcore import CapacityExceeded, FlowKind, MultiNetwork, Role
from .infonet import TRACE_COLUMNS, InfoNetwork, Link
from .paynet import Ledger, PaymentError, to_decimal
from .powerflow import BRANCH_COLUMNS, BUS_COLUMNS, Diverged, PowerFlowSolution, SolverConfig, solve

ENERGY_QUANTUM = Decimal("0.000001")  # kWh


class ScenarioError(ValueError):
    pass


class PowerFlowDiverged(RuntimeError):
    def __init__(self, step: int, cause: str = ""):
        self.step = step
        super().__init__(f"power flow diverged at step {step}" + (f": {cause}" if cause else ""))


@dataclass
class Scenario:
    case: cdf.PowerFlowCase
    steps: int = 24
    step_seconds: float = 3600.0
    seed: int = 0
    links: list[dict] = field(default_factory=list)
    accounts: dict = field(default_factory=dict)
    devices: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    agents: list[dict] = field(default_factory=list)
    solver: dict = field(default_factory=dict)
    fee: Decimal = Decimal(0)
    fee_sink: str = "fee-sink"
    name: str = ""

    def __post_init__(self):
        if self.steps < 1:
            raise ScenarioError("steps must be at least 1")
        if not self.step_seconds > 0:
            raise ScenarioError("step_seconds must be positive")
        self.fee = to_decimal(self.fee)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | str = ".") -> Scenario:
        case_ref = doc["case"]
        base_dir = Path(base_dir)
        if "inline" in case_ref:
            case = cdf.case_from_dict(case_ref["inline"])
        elif "cdf" in case_ref:
            case = cdf.read_cdf(base_dir / case_ref["cdf"])
        elif "json" in case_ref:
            case = cdf.import_case((base_dir / case_ref["json"]).read_text())
        else:
            raise ScenarioError("case needs one of 'inline', 'cdf' or 'json'")
        return cls(
            case=case,
            steps=int(doc.get("steps", 24)),
            step_seconds=float(doc.get("step_seconds", 3600.0)),
            seed=int(doc.get("seed", 0)),
            links=list(doc.get("links", [])),
            accounts=dict(doc.get("accounts", {})),
            devices=dict(doc.get("devices", {})),
            schedule=dict(doc.get("schedule", {})),
            agents=list(doc.get("agents", [])),
            solver=dict(doc.get("solver", {})),
            fee=to_decimal(doc.get("fee", "0")),
            fee_sink=doc.get("fee_sink", "fee-sink"),
            name=doc.get("name", ""),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "steps": self.steps,
            "step_seconds": self.step_seconds,
            "seed": self.seed,
            "case": {"inline": cdf.case_to_dict(self.case)},
            "links": self.links,
            "accounts": {k: str(v) for k, v in self.accounts.items()},
            "devices": self.devices,
            "schedule": self.schedule,
            "agents": self.agents,
            "solver": self.solver,
            "fee": str(self.fee),
            "fee_sink": self.fee_sink,
        }

    def replace(self, **changes) -> Scenario:
        out = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(out, k, v)
        out.__post_init__()
        return out


def load_scenario(path) -> Scenario:
    path = Path(path)
    return Scenario.from_dict(json.loads(path.read_text()), path.parent)


def _profile(values, t: int, default):
    if values is None:
        return default
    if isinstance(values, (list, tuple)):
        if not values:
            return default
        return values[t % len(values)]
    return values


def _make_agent(cfg: dict) -> PolicyAgent:
    kind = cfg.get("type", "custom")
    params = dict(cfg.get("params", {}))
    controlled = {(FlowKind(k), n) for k, nodes in cfg.get("controlled", {}).items() for n in nodes}
    if kind == "consumer":
        return ConsumerAgent(cfg["id"], controlled, **params)
    if kind == "operator":
        return GridOperatorAgent(cfg["id"], controlled, **params)
    if kind == "custom":
        module, _, name = cfg["factory"].partition(":")
        factory = getattr(importlib.import_module(module), name)
        return factory(id=cfg["id"], controlled=controlled, **params)
    raise ScenarioError(f"unknown agent type {kind!r}")


@dataclass
class Trace:
    records: list[dict] = field(default_factory=list)
    status: str = "completed"
    halted_at: int | None = None
    error: PowerFlowDiverged | None = None
    solutions: list[PowerFlowSolution] = field(default_factory=list, repr=False)
    message_rows: list[dict] = field(default_factory=list, repr=False)
    ledger: Ledger | None = field(default=None, repr=False)
    utilities: dict[str, float] = field(default_factory=dict)

    def end_record(self) -> dict:
        return {
            "type": "end",
            "status": self.status,
            "halted_at": self.halted_at,
            "steps_run": len(self.records),
            "utilities": self.utilities,
            "welfare": welfare(self.utilities),
            "balances": {k: str(v) for k, v in sorted(self.ledger.balances().items())} if self.ledger else {},
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        lines.append(json.dumps(self.end_record(), sort_keys=True))
        return "\n".join(lines) + "\n"

    def buses_csv(self) -> str:
        return _step_csv(BUS_COLUMNS, [(s, sol.bus_rows()) for s, sol in enumerate(self.solutions)])

    def branches_csv(self) -> str:
        return _step_csv(BRANCH_COLUMNS, [(s, sol.branch_rows()) for s, sol in enumerate(self.solutions)])

    def messages_csv(self) -> str:
        return _rows_csv(TRACE_COLUMNS, self.message_rows)

    def utilities_csv(self) -> str:
        return _rows_csv(["agent", "utility"], [{"agent": k, "utility": v} for k, v in self.utilities.items()])

    @property
    def transactions(self) -> list[dict]:
        return [tx for r in self.records for tx in r["transactions"]]


def _rows_csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _step_csv(columns, steps) -> str:
    return _rows_csv(["step", *columns], [{"step": s, **row} for s, rows in steps for row in rows])


class _World:
    """Mutable state of one simulation run."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.case = sc.case.copy()
        self.base_load = {b.number: (b.p_load, b.q_load) for b in self.case.buses}
        self.config = SolverConfig(**sc.solver)
        self.dt = sc.step_seconds

        self.info = InfoNetwork(seed=sc.seed)
        for link in sc.links:
            self.info.add_link(
                Link(
                    link["from"],
                    link["to"],
                    float(link["bit_rate"]),
                    float(link.get("latency", 0.0)),
                    float(link.get("reliability", 1.0)),
                    float(link["timeout"]) if link.get("timeout") is not None else math.inf,
                )
            )
        self.ledger = Ledger.with_balances(sc.accounts, sc.fee_sink)

        self.switches = {s["node"]: dict(s, on=bool(s.get("on", False))) for s in sc.devices.get("switches", [])}
        self.storages = {}
        for s in sc.devices.get("storages", []):
            st = dict(s)
            st["soc"] = float(st.get("soc", 0.0))
            st["setpoint_kw"] = float(st.get("max_power_kw", 0.0))
            st["power_kw"] = 0.0
            self.storages[s["node"]] = st
        self.meters = {m["node"]: dict(m) for m in sc.devices.get("meters", [])}
        self.readings: dict[str, dict] = {}

        self.net = self._build_network()
        self.agents = sorted((_make_agent(cfg) for cfg in sc.agents), key=lambda a: a.id)
        for agent in self.agents:
            self.net.add_agent(agent)
        problems = [v for v in self.net.validate() if v.rule in ("AgentDisjoint", "AgentNode", "Edge")]
        if problems:
            raise ScenarioError(f"invalid scenario network: {problems}")
        self.history: dict[str, list[Observation]] = {a.id: [] for a in self.agents}

    def _build_network(self) -> MultiNetwork:
        net = MultiNetwork()
        energy = net[FlowKind.ENERGY]
        for meter in self.meters.values():
            path = meter.get("path") or [meter["node"]]
            cap = float(meter["capacity_kw"]) * 1e3 if meter.get("capacity_kw") is not None else math.inf
            for i, node in enumerate(path):
                if node in energy.nodes:
                    continue
                if node in self.storages:
                    role = Role.STORAGE
                elif i == 0 and len(path) > 1:
                    role = Role.SOURCE
                else:
                    role = Role.TRANSMISSION
                energy.add_node(node, role)
            for a, b in zip(path, path[1:]):
                energy.add_edge(a, b, cap)
        for node in [*self.switches, *self.storages]:
            if node not in energy.nodes:
                energy.add_node(node, Role.STORAGE if node in self.storages else Role.TRANSMISSION)
        info = net[FlowKind.INFORMATION]
        for (a, b), link in sorted(self.info.links.items()):
            for end in (a, b):
                if end not in info.nodes:
                    # endpoints store and replicate data, so no balance rule applies
                    info.add_node(end, Role.STORAGE)
            info.add_edge(a, b, link.bit_rate)
        pay = net[FlowKind.PAYMENT]
        for acct in sorted(self.ledger.accounts):
            pay.add_node(acct, Role.STORAGE)
        return net

    # -- phase 1
    def observe(self, agent: PolicyAgent, t: int, drain: bool) -> Observation:
        state = {}
        for node in agent.nodes(FlowKind.ENERGY):
            if node in self.switches:
                state[node] = {"on": self.switches[node]["on"]}
            elif node in self.storages:
                st = self.storages[node]
                state[node] = {"soc": st["soc"], "power_kw": st["power_kw"]}
            elif node in self.meters:
                state[node] = dict(self.readings.get(node, {}))
            else:
                state[node] = {}
        inbox = []
        for addr in agent.nodes(FlowKind.INFORMATION):
            inbox.extend(self.info.drain_inbox(addr) if drain else self.info.peek_inbox(addr))
        balance = sum((self.ledger.balance(a) for a in agent.nodes(FlowKind.PAYMENT) if a in self.ledger.accounts), Decimal(0))
        return Observation(t, state, inbox, balance, self.price(t))

    def price(self, t: int) -> Decimal:
        return to_decimal(_profile(self.sc.schedule.get("price"), t, "0"))

    # -- phase 3
    def apply_energy_actions(self, actions: list) -> None:
        for a in actions:
            if isinstance(a, SetSwitch) and a.node in self.switches:
                self.switches[a.node]["on"] = a.on
            elif isinstance(a, SetSetpoint) and a.node in self.storages:
                st = self.storages[a.node]
                st["setpoint_kw"] = min(max(a.power_kw, 0.0), float(st.get("max_power_kw", a.power_kw)))

    def load_case(self, t: int) -> None:
        for bus in self.case.buses:
            bus.p_load, bus.q_load = self.base_load[bus.number]
        for key, values in self.sc.schedule.get("load", {}).items():
            bus = self.case.bus(int(key))
            bus.p_load = float(_profile(values, t, bus.p_load))
        for node, st in self.storages.items():
            fed = any(sw["on"] for sw in self.switches.values() if sw.get("feeds") == node)
            headroom_kw = (1.0 - st["soc"]) * float(st["capacity_kwh"]) * 3600.0 / self.dt
            st["power_kw"] = max(0.0, min(st["setpoint_kw"], headroom_kw)) if fed else 0.0
            self.case.bus(int(st["bus"])).p_load += st["power_kw"] / 1e3

    # -- phase 5
    def read_physics(self, t: int, sol: PowerFlowSolution) -> dict:
        metering = {}
        for node, m in self.meters.items():
            a, b = m["branch"]
            if m.get("side", "to") == "to":
                p_pu = -sol.flow(b, a).real
            else:
                p_pu = sol.flow(a, b).real
            power_kw = float(p_pu * sol.mva_base * 1e3)
            energy = (to_decimal(power_kw) * to_decimal(self.dt) / 3600).quantize(ENERGY_QUANTUM, ROUND_HALF_EVEN)
            energy = energy + Decimal(0)  # normalise -0
            reading = {"step": t, "power_kw": power_kw, "energy_kwh": str(energy), "price": str(self.price(t))}
            self.readings[node] = reading
            metering[node] = reading
            path = m.get("path") or []
            for x, y in zip(path, path[1:]):
                try:
                    self.net.set_flow(FlowKind.ENERGY, x, y, power_kw * 1e3)
                except CapacityExceeded:
                    # keep the physical value; validate() reports the overload
                    self.net[FlowKind.ENERGY].edges[(x, y)].flow = power_kw * 1e3
        for st in self.storages.values():
            st["soc"] = min(1.0, st["soc"] + st["power_kw"] * self.dt / 3600.0 / float(st["capacity_kwh"]))
        self.net.accumulate_storage(FlowKind.ENERGY, self.dt)
        return metering

    # -- phase 6
    def settle(self, pays: list[Pay], t: int) -> list[dict]:
        out = []
        per_pair: dict[tuple[str, str], float] = {}
        for p in pays:
            tx = p.transaction
            rec = tx.to_dict()
            try:
                self.ledger.apply(tx)
                rec["status"] = "applied"
                per_pair[(tx.from_account, tx.to_account)] = per_pair.get((tx.from_account, tx.to_account), 0.0) + float(tx.amount)
                if tx.fee:
                    key = (tx.from_account, self.ledger.fee_sink)
                    per_pair[key] = per_pair.get(key, 0.0) + float(tx.fee)
            except (PaymentError, KeyError) as exc:
                rec["status"] = "failed"
                rec["error"] = type(exc).__name__
            out.append(rec)
        pay = self.net[FlowKind.PAYMENT]
        for edge in pay.edges.values():
            edge.flow = 0.0
        for (a, b), amount in per_pair.items():
            if (a, b) not in pay.edges and (b, a) not in pay.edges:
                pay.add_edge(a, b)
            pay.set_flow(a, b, pay.flow(a, b) + amount)
        return out

    def info_flows(self, t0: float, t1: float) -> None:
        for (a, b) in self.net[FlowKind.INFORMATION].edges:
            self.net.set_flow(FlowKind.INFORMATION, a, b, self.info.bits_transmitted(a, b, t0, t1) / (t1 - t0))


def _summary(sol: PowerFlowSolution) -> dict:
    return {
        **sol.summary(),
        "v_mag_pu": [float(x) for x in sol.v_mag],
        "v_ang_deg": [float(x) for x in sol.v_ang_deg],
        "slack_p_pu": float(sol.injections[sol.bus_types.index(cdf.BusType.SLACK)].real),
        "loss_p_pu": float(np.sum(sol.losses.real)),
    }


def run(scenario: Scenario) -> Trace:
    """Simulate the scenario; a mid-run power-flow failure halts with a partial trace."""
    w = _World(scenario)
    trace = Trace(ledger=w.ledger)
    w.load_case(0)
    try:
        solve(w.case, w.config)
    except Diverged as exc:
        raise ScenarioError(f"initial power flow does not converge: {exc}") from None

    for t in range(scenario.steps):
        t0, t1 = t * w.dt, (t + 1) * w.dt
        record: dict = {"type": "step", "step": t, "time": t0, "price": str(w.price(t))}

        observations = {a.id: w.observe(a, t, drain=True) for a in w.agents}
        for a in w.agents:
            w.history[a.id].append(observations[a.id])
        record["inbox"] = {
            aid: [m.payload.decode("utf-8", "replace") for m in obs.inbox] for aid, obs in observations.items()
        }

        actions, rejected = {}, {}
        energy_actions, pays = [], []
        for a in w.agents:
            ok, bad = partition_actions(a, a.act(observations[a.id]))
            actions[a.id] = [action_to_dict(x) for x in ok]
            if bad:
                rejected[a.id] = [action_to_dict(x) for x in bad]
            for x in ok:
                if isinstance(x, (SetSwitch, SetSetpoint)):
                    energy_actions.append(x)
                elif isinstance(x, SendMessage):
                    w.info.send(x.message, t0)
                elif isinstance(x, Pay):
                    pays.append(x)
        record["actions"] = actions
        record["rejected"] = rejected

        w.apply_energy_actions(energy_actions)
        w.load_case(t)

        record["deliveries"] = [
            {"ticket": ticket, "status": res.status.value, "at": res.at} for ticket, res in w.info.advance(t1)
        ]
        w.info_flows(t0, t1)

        try:
            sol = solve(w.case, w.config)
        except Diverged as exc:
            record["power_flow"] = {"converged": False, "error": str(exc)}
            trace.records.append(record)
            trace.status, trace.halted_at = "diverged", t
            trace.error = PowerFlowDiverged(t, str(exc))
            break
        trace.solutions.append(sol)
        record["power_flow"] = _summary(sol)
        record["metering"] = w.read_physics(t, sol)
        record["storage"] = {n: {"soc": st["soc"], "power_kw": st["power_kw"]} for n, st in w.storages.items()}
        record["switches"] = {n: sw["on"] for n, sw in w.switches.items()}

        record["transactions"] = w.settle(pays, t0)
        record["violations"] = [
            {"rule": v.rule, "kind": v.kind.value if v.kind else None, "element": [str(e) for e in v.element]}
            for v in w.net.validate(tolerance=1e-6)
        ]

        utilities = {}
        for a in w.agents:
            snapshot = w.observe(a, t + 1, drain=False)
            utilities[a.id] = a.evaluate(w.history[a.id] + [snapshot])
        record["utilities"] = utilities
        trace.utilities = utilities
        trace.records.append(record)

    trace.message_rows = w.info.trace_rows()
    if trace.status != "completed" and "transactions" not in trace.records[-1]:
        trace.records[-1]["transactions"] = []
    return trace


def replay_check(scenario: Scenario, trace: Trace) -> bool:
    return run(scenario).to_jsonl() == trace.to_jsonl()

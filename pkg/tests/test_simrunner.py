import json
from decimal import Decimal

import pytest

from gridflows import data_path
from gridflows.simrunner import Scenario, ScenarioError, load_scenario, replay_check, run

D = Decimal


@pytest.fixture(scope="module")
def scenario():
    return load_scenario(data_path("ev_scenario.json"))


@pytest.fixture(scope="module")
def trace(scenario):
    return run(scenario)


def test_runs_all_steps(trace):
    assert trace.status == "completed"
    assert len(trace.records) == 24 and len(trace.solutions) == 24
    assert all(r["power_flow"]["converged"] for r in trace.records)
    assert all(r["violations"] == [] for r in trace.records)


def test_charging_follows_price(scenario, trace):
    prices = scenario.schedule["price"]
    soc_before = [0.15] + [r["storage"]["ev"]["soc"] for r in trace.records]
    for r, p, soc in zip(trace.records, prices, soc_before):
        on = r["switches"]["switch"]
        assert on == (D(p) <= D("0.25") and soc < 1.0)
        assert (r["storage"]["ev"]["power_kw"] > 0) == on
    socs = [r["storage"]["ev"]["soc"] for r in trace.records]
    assert socs == sorted(socs) and socs[-1] <= 1.0


def test_bills_paid_after_delivery(trace):
    applied = [(r["step"], tx) for r in trace.records for tx in r["transactions"] if tx["status"] == "applied"]
    assert [s for s, _ in applied] == [7, 13, 19]
    assert [tx["ref"] for _, tx in applied] == ["operator-bill-1", "operator-bill-2", "operator-bill-3"]


def test_receipts_equal_metered_charges(scenario, trace):
    # every completed billing period (steps 0..17) is charged at the step's price
    charges = sum(
        (D(r["metering"]["meter"]["price"]) * D(r["metering"]["meter"]["energy_kwh"]) for r in trace.records[:18]),
        D(0),
    )
    ledger = trace.ledger
    assert ledger.balance("operator") == charges
    assert ledger.balance("fee-sink") == D("0.15")
    assert ledger.total() == D("200.00")
    assert ledger.balance("consumer") == D("200.00") - charges - D("0.15")


def test_meter_reads_power_into_home(scenario, trace):
    r = trace.records[0]
    load_kw = scenario.schedule["load"]["2"][0] * 1e3
    ev_kw = r["storage"]["ev"]["power_kw"]
    assert r["metering"]["meter"]["power_kw"] == pytest.approx(load_kw + ev_kw, rel=1e-9)


def test_replay_is_byte_identical(scenario, trace):
    assert replay_check(scenario, trace)
    text = trace.to_jsonl()
    assert json.loads(text.splitlines()[-1])["type"] == "end"


def test_csv_outputs(trace):
    assert trace.buses_csv().splitlines()[0] == "step,number,type,v_mag_pu,v_ang_deg,p_pu,q_pu"
    assert len(trace.branches_csv().splitlines()) == 1 + 24
    assert trace.messages_csv().count("delivered") == 3
    assert trace.utilities_csv().splitlines()[0] == "agent,utility"


def test_divergence_halts_with_partial_trace(scenario):
    load = list(scenario.schedule["load"]["2"])
    load[3] = 50.0  # far beyond what the feeder can carry
    sc = scenario.replace(schedule={**scenario.schedule, "load": {"2": load}})
    tr = run(sc)
    assert tr.status == "diverged" and tr.halted_at == 3
    assert len(tr.records) == 4 and tr.records[-1]["power_flow"]["converged"] is False
    assert tr.error.step == 3


def test_uncontrolled_actions_are_rejected(scenario):
    agents = scenario.agents + [{"id": "zz-meddler", "type": "custom", "factory": "sim_helpers:meddler",
                                 "controlled": {"payment": ["meddler"]}}]
    tr = run(scenario.replace(agents=agents, accounts={**scenario.accounts, "meddler": "0"}))
    assert all("zz-meddler" in r["rejected"] for r in tr.records)
    assert [r["switches"]["switch"] for r in tr.records] == [r["switches"]["switch"] for r in run(scenario).records]


def test_overlapping_agents_rejected(scenario):
    agents = [dict(a) for a in scenario.agents]
    agents[1] = {**agents[1], "controlled": {**agents[1]["controlled"], "energy": ["meter", "switch"]}}
    with pytest.raises(ScenarioError):
        run(scenario.replace(agents=agents))


def test_scenario_validation_and_round_trip(scenario):
    with pytest.raises(ScenarioError):
        scenario.replace(steps=0)
    again = Scenario.from_dict(json.loads(json.dumps(scenario.to_dict())))
    assert again.case == scenario.case and again.fee == scenario.fee
    assert run(again.replace(steps=8)).to_jsonl() == run(scenario.replace(steps=8)).to_jsonl()


def with_prices(scenario, price, **changes):
    return scenario.replace(schedule={**scenario.schedule, "price": [price]}, **changes)


def test_cheap_flat_price_charges_every_step(scenario):
    devices = json.loads(json.dumps(scenario.devices))
    devices["storages"][0]["capacity_kwh"] = 1000.0  # large enough never to fill in a day
    tr = run(with_prices(scenario, "0.10", devices=devices))
    assert all(r["switches"]["switch"] and r["storage"]["ev"]["power_kw"] == 7.4 for r in tr.records)
    bills = [p for r in tr.records for p in r["inbox"].get("consumer", [])]
    pays = tr.transactions
    # periods ending at steps 6, 12 and 18 are billed; the one ending at 24 lies past the horizon
    assert len(bills) == 3 and len(pays) == 3
    assert [json.loads(b)["bill_id"] for b in bills] == [p["ref"] for p in pays]


def test_expensive_price_never_charges(scenario):
    # without the household base load the only metered energy would be the EV's
    tr = run(scenario.replace(schedule={"price": ["0.90"]}))
    assert not any(r["switches"]["switch"] for r in tr.records)
    assert all(r["storage"]["ev"]["soc"] == 0.15 for r in tr.records)
    assert tr.transactions == [] and tr.ledger.balance("operator") == D("0.00")


def test_single_step_without_agents(scenario):
    tr = run(scenario.replace(steps=1, agents=[]))
    assert len(tr.records) == 1 and len(tr.solutions) == 1
    assert tr.message_rows == [] and tr.transactions == []


def test_truncation_is_a_prefix(scenario):
    full = run(scenario).records
    short = run(scenario.replace(steps=10)).records
    assert short == full[:10]


def test_seed_matters_on_lossy_links(scenario):
    links = [dict(link, reliability=0.5) for link in scenario.links]
    lossy = scenario.replace(links=links, seed=1)
    trace = run(lossy)
    assert replay_check(lossy, trace)
    assert not replay_check(lossy.replace(seed=2), trace)

import json

import pytest

from gridflows import data_path
from gridflows.cdf import (
    Branch,
    Bus,
    BusType,
    DuplicateBusNumber,
    MalformedCard,
    MissingSection,
    MultipleSlackBuses,
    NoSlackBus,
    PowerFlowCase,
    UnknownBusInBranch,
    export_case,
    import_case,
    parse_cdf,
    read_cdf,
    with_extra_load,
    with_phase_shift,
    write_cdf,
)

FIXTURES = ["ieee14.cdf", "twobus.cdf", "twobus_noload.cdf"]


@pytest.fixture(scope="module")
def ieee14():
    return read_cdf(data_path("ieee14.cdf"))


@pytest.fixture(scope="module")
def ieee14_text():
    return data_path("ieee14.cdf").read_text()


def test_ieee14_counts(ieee14):
    assert len(ieee14.buses) == 14
    assert len(ieee14.branches) == 20
    assert ieee14.mva_base == 100.0
    assert ieee14.slack.number == 1
    assert ieee14.title == "IEEE 14 Bus Test Case"


def test_ieee14_field_values(ieee14):
    b2 = ieee14.bus(2)
    assert b2.bus_type is BusType.PV
    assert (b2.v_mag, b2.v_ang, b2.p_load, b2.q_load, b2.p_gen, b2.q_gen) == (1.045, -4.98, 21.7, 12.7, 40.0, 42.4)
    assert (b2.q_max, b2.q_min) == (50.0, -40.0)
    assert ieee14.bus(9).shunt_b == 0.19
    br = ieee14.branch(1, 2)
    assert (br.r, br.x, br.b_charging, br.tap_ratio, br.is_transformer) == (0.01938, 0.05917, 0.0528, 1.0, False)
    assert ieee14.branch(5, 6).tap_ratio == 0.932


def test_ieee14_nominal_voltages(ieee14):
    kv = [b.base_kv for b in ieee14.buses]
    assert kv.count(69.0) == 5
    assert kv.count(18.0) == 1
    assert sum(1 for v in kv if v in (13.8, 18.0)) == 9


def test_transformers_flagged(ieee14):
    flagged = {(br.from_bus, br.to_bus) for br in ieee14.branches if br.is_transformer}
    assert flagged == {(4, 7), (4, 9), (5, 6)}
    doc = json.loads(export_case(ieee14))
    b49 = next(b for b in doc["branches"] if (b["from"], b["to"]) == (4, 9))
    assert b49["is_transformer"] is True


def test_minimal_two_bus():
    case = read_cdf(data_path("twobus.cdf"))
    assert len(case.buses) == 2 and len(case.branches) == 1
    assert json.loads(export_case(case))["buses"][0]["bus_type"] == "Slack"


@pytest.mark.parametrize("name", FIXTURES)
def test_round_trip(name):
    case = read_cdf(data_path(name))
    assert import_case(export_case(case)) == case
    assert parse_cdf(write_cdf(case)) == case


def test_zero_tap_reads_as_one(ieee14):
    assert all(br.tap_ratio == 1.0 for br in ieee14.branches if not br.is_transformer)


def test_missing_bus_terminator(ieee14_text):
    text = ieee14_text.replace("-999\nBRANCH", "BRANCH", 1)
    # the branch section then swallows into the bus section and the bus cards fail first
    with pytest.raises((MissingSection, MalformedCard)):
        parse_cdf(text)
    lines = ieee14_text.splitlines()
    bus_only = "\n".join(lines[:16])  # title, header, 14 bus cards, no -999
    with pytest.raises(MissingSection):
        parse_cdf(bus_only)


def test_missing_branch_section(ieee14_text):
    head = ieee14_text.split("BRANCH DATA FOLLOWS")[0]
    with pytest.raises(MissingSection):
        parse_cdf(head)


def test_malformed_card_reports_line(ieee14_text):
    lines = ieee14_text.splitlines()
    lines[4] = lines[4][:40] + "   xx.x  " + lines[4][49:]
    with pytest.raises(MalformedCard) as err:
        parse_cdf("\n".join(lines))
    assert err.value.line == 5


def test_duplicate_bus(ieee14_text):
    lines = ieee14_text.splitlines()
    lines.insert(3, lines[2])
    with pytest.raises(DuplicateBusNumber) as err:
        parse_cdf("\n".join(lines))
    assert err.value.line == 4


def test_unknown_bus_in_branch(ieee14_text):
    lines = ieee14_text.splitlines()
    i = lines.index(next(l for l in lines if l.startswith("   1    2")))
    lines[i] = "  99" + lines[i][4:]
    with pytest.raises(UnknownBusInBranch) as err:
        parse_cdf("\n".join(lines))
    assert err.value.line == i + 1


def test_slack_count_enforced():
    none = PowerFlowCase(100.0, [Bus(1, "a", 1.0), Bus(2, "b", 1.0)], [Branch(1, 2, 0.0, 0.1)])
    with pytest.raises(NoSlackBus):
        parse_cdf(write_cdf(none))
    two = PowerFlowCase(100.0, [Bus(1, "a", 1.0, BusType.SLACK), Bus(2, "b", 1.0, BusType.SLACK)], [Branch(1, 2, 0.0, 0.1)])
    with pytest.raises(MultipleSlackBuses):
        parse_cdf(write_cdf(two))


def test_zero_impedance_card_rejected():
    case = PowerFlowCase(100.0, [Bus(1, "a", 1.0, BusType.SLACK), Bus(2, "b", 1.0)], [Branch(1, 2, 0.0, 0.1)])
    text = write_cdf(case).replace("        0.1", "        0.0")
    with pytest.raises(MalformedCard):
        parse_cdf(text)


def test_bus_type_one_is_pq(ieee14_text):
    lines = ieee14_text.splitlines()
    lines[5] = lines[5][:24] + " 1" + lines[5][26:]
    assert parse_cdf("\n".join(lines)).bus(4).bus_type is BusType.PQ


def test_phase_shift_override(ieee14):
    shifted = with_phase_shift(ieee14, 4, 9, 5.0)
    assert shifted.branch(4, 9).phase_shift == 5.0
    assert ieee14.branch(4, 9).phase_shift == 0.0
    assert with_phase_shift(ieee14, 9, 4, 5.0).branch(4, 9).phase_shift == -5.0


def test_extra_load_hook(ieee14):
    loaded = with_extra_load(ieee14, 9, q_mvar=10.0)
    assert loaded.bus(9).q_load == pytest.approx(26.6)
    assert ieee14.bus(9).q_load == 16.6

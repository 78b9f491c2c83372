"""IEEE Common Data Format reader/writer and the in-memory power-flow case.

The CDF is a fixed-column card format. Column positions below are 1-based and
inclusive, exactly as published with the format; a blank numeric field reads
as 0.0.
"""

from __future__ import annotations

import copy
import enum
import json
from dataclasses import asdict, dataclass, field


class BusType(enum.Enum):
    PQ = "PQ"
    PV = "PV"
    SLACK = "Slack"


_BUS_CODES = {0: BusType.PQ, 1: BusType.PQ, 2: BusType.PV, 3: BusType.SLACK}
_CODE_OF = {BusType.PQ: 0, BusType.PV: 2, BusType.SLACK: 3}


@dataclass
class Bus:
    number: int
    name: str = ""
    base_kv: float = 1.0
    bus_type: BusType = BusType.PQ
    v_mag: float = 1.0
    v_ang: float = 0.0
    p_load: float = 0.0
    q_load: float = 0.0
    p_gen: float = 0.0
    q_gen: float = 0.0
    q_min: float = 0.0
    q_max: float = 0.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0


@dataclass
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap_ratio: float = 1.0
    phase_shift: float = 0.0
    is_transformer: bool = False


@dataclass
class PowerFlowCase:
    mva_base: float = 100.0
    buses: list[Bus] = field(default_factory=list)
    branches: list[Branch] = field(default_factory=list)
    title: str = ""

    def bus(self, number: int) -> Bus:
        for b in self.buses:
            if b.number == number:
                return b
        raise KeyError(number)

    def branch(self, from_bus: int, to_bus: int) -> Branch:
        for br in self.branches:
            if (br.from_bus, br.to_bus) == (from_bus, to_bus):
                return br
        for br in self.branches:
            if (br.from_bus, br.to_bus) == (to_bus, from_bus):
                return br
        raise KeyError((from_bus, to_bus))

    @property
    def slack(self) -> Bus:
        return next(b for b in self.buses if b.bus_type is BusType.SLACK)

    def copy(self) -> PowerFlowCase:
        return copy.deepcopy(self)


class CdfError(ValueError):
    """Base class for case parsing and validation errors."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingSection(CdfError):
    pass


class MalformedCard(CdfError):
    pass


class DuplicateBusNumber(CdfError):
    pass


class UnknownBusInBranch(CdfError):
    pass


class NoSlackBus(CdfError):
    pass


class MultipleSlackBuses(CdfError):
    pass


# (attribute, first column, last column); 1-based inclusive
_BUS_COLUMNS = [
    ("number", 1, 4),
    ("name", 6, 17),
    ("type", 25, 26),
    ("v_mag", 28, 33),
    ("v_ang", 34, 40),
    ("p_load", 41, 49),
    ("q_load", 50, 59),
    ("p_gen", 60, 67),
    ("q_gen", 68, 75),
    ("base_kv", 77, 83),
    ("q_max", 91, 98),
    ("q_min", 99, 106),
    ("shunt_g", 107, 114),
    ("shunt_b", 115, 122),
]

_BRANCH_COLUMNS = [
    ("from_bus", 1, 4),
    ("to_bus", 6, 9),
    ("type", 19, 19),
    ("r", 20, 29),
    ("x", 30, 40),
    ("b_charging", 41, 50),
    ("tap_ratio", 77, 82),
    ("phase_shift", 84, 90),
]


def _field(line: str, first: int, last: int) -> str:
    return line[first - 1 : last].strip()


def _number(line: str, first: int, last: int, lineno: int, what: str) -> float:
    s = _field(line, first, last)
    if not s:
        return 0.0
    try:
        return float(s)
    except ValueError:
        raise MalformedCard(f"bad {what} field {s!r} (columns {first}-{last})", lineno) from None


def _integer(line: str, first: int, last: int, lineno: int, what: str) -> int:
    s = _field(line, first, last)
    try:
        return int(s)
    except ValueError:
        raise MalformedCard(f"bad {what} field {s!r} (columns {first}-{last})", lineno) from None


def _section(lines: list[str], header: str, start: int) -> tuple[list[tuple[int, str]], int]:
    """Return the (lineno, card) pairs of a section and the terminator's line index."""
    for i in range(start, len(lines)):
        if lines[i].startswith(header):
            break
    else:
        raise MissingSection(f"no {header!r} section")
    cards = []
    for j in range(i + 1, len(lines)):
        if lines[j].startswith("-999"):
            return cards, j
        if lines[j].strip():
            cards.append((j + 1, lines[j]))
    raise MissingSection(f"{header!r} section has no -999 terminator", i + 1)


def _parse_bus(line: str, lineno: int) -> Bus:
    number = _integer(line, 1, 4, lineno, "bus number")
    code = _integer(line, 25, 26, lineno, "bus type") if _field(line, 25, 26) else 0
    if code not in _BUS_CODES:
        raise MalformedCard(f"unknown bus type code {code}", lineno)
    num = {a: _number(line, f, l, lineno, a) for a, f, l in _BUS_COLUMNS[3:]}
    if num["base_kv"] <= 0:
        raise MalformedCard(f"bus {number} base kV must be positive", lineno)
    return Bus(number=number, name=_field(line, 6, 17), bus_type=_BUS_CODES[code], **num)


def _parse_branch(line: str, lineno: int) -> Branch:
    f = _integer(line, 1, 4, lineno, "from bus")
    t = _integer(line, 6, 9, lineno, "to bus")
    code = _integer(line, 19, 19, lineno, "branch type") if _field(line, 19, 19) else 0
    r, x, b, tap, shift = (_number(line, a, z, lineno, n) for n, a, z in _BRANCH_COLUMNS[3:])
    if r == 0.0 and x == 0.0:
        raise MalformedCard(f"branch {f}-{t} has zero impedance", lineno)
    if tap < 0:
        raise MalformedCard(f"branch {f}-{t} has negative tap ratio", lineno)
    is_xfmr = code != 0 or tap != 0.0 or shift != 0.0
    return Branch(f, t, r, x, b, tap if tap != 0.0 else 1.0, shift, is_xfmr)


def validate_case(case: PowerFlowCase, line: int | None = None) -> None:
    """Raise a CdfError if bus numbering, branch endpoints or the slack are inconsistent."""
    if case.mva_base <= 0:
        raise MalformedCard("MVA base must be positive", line)
    if not case.buses:
        raise MissingSection("case has no buses", line)
    seen = set()
    for bus in case.buses:
        if bus.number in seen:
            raise DuplicateBusNumber(f"bus {bus.number} defined twice", line)
        seen.add(bus.number)
    for br in case.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in seen:
                raise UnknownBusInBranch(f"branch {br.from_bus}-{br.to_bus} references bus {end}", line)
    slacks = [b.number for b in case.buses if b.bus_type is BusType.SLACK]
    if not slacks:
        raise NoSlackBus("no slack (type 3) bus", line)
    if len(slacks) > 1:
        raise MultipleSlackBuses(f"slack buses {slacks}; exactly one required", line)


def parse_cdf(text: str) -> PowerFlowCase:
    """Parse IEEE CDF text into a PowerFlowCase.

    Only the title card and the bus and branch sections are read; loss-zone,
    interchange and tie-line sections are ignored.
    """
    lines = text.splitlines()
    if not lines:
        raise MissingSection("empty file")
    title_card = lines[0]
    try:
        mva_base = float(_field(title_card, 32, 37) or "100.0")
    except ValueError:
        raise MalformedCard("bad MVA base on title card", 1) from None
    title = _field(title_card, 46, 73) or title_card.strip()

    bus_cards, end = _section(lines, "BUS DATA FOLLOWS", 1)
    buses = []
    seen: dict[int, int] = {}
    for lineno, card in bus_cards:
        bus = _parse_bus(card, lineno)
        if bus.number in seen:
            raise DuplicateBusNumber(f"bus {bus.number} already defined on line {seen[bus.number]}", lineno)
        seen[bus.number] = lineno
        buses.append(bus)

    branch_cards, branch_end = _section(lines, "BRANCH DATA FOLLOWS", end + 1)
    branches = []
    for lineno, card in branch_cards:
        br = _parse_branch(card, lineno)
        for end_bus in (br.from_bus, br.to_bus):
            if end_bus not in seen:
                raise UnknownBusInBranch(f"branch {br.from_bus}-{br.to_bus} references bus {end_bus}", lineno)
        branches.append(br)

    case = PowerFlowCase(mva_base=mva_base, buses=buses, branches=branches, title=title)
    validate_case(case, line=end + 1)
    return case


def read_cdf(path) -> PowerFlowCase:
    with open(path, encoding="ascii", errors="replace") as fh:
        return parse_cdf(fh.read())


def _put(card: list[str], value: str, first: int, last: int) -> None:
    width = last - first + 1
    if len(value) > width:
        raise ValueError(f"{value!r} does not fit columns {first}-{last}")
    card[first - 1 : last] = list(value.rjust(width))


def _fit(v: float, width: int) -> str:
    if v == int(v) and abs(v) < 10 ** (width - 3):
        return f"{v:.1f}"
    for digits in range(width - 1, 0, -1):
        s = f"{v:.{digits}f}".rstrip("0")
        if len(s) <= width:
            return s
    return f"{v:.{width}g}"


def write_cdf(case: PowerFlowCase) -> str:
    """Render a case as CDF text.

    Numbers are written with as many decimals as their columns hold, so values
    with more significant digits than the format allows are rounded.
    """
    out = []
    title = [" "] * 73
    _put(title, _fit(case.mva_base, 6), 32, 37)
    title[45 : 45 + len(case.title[:28])] = list(case.title[:28])
    out.append("".join(title).rstrip())
    out.append(f"BUS DATA FOLLOWS{len(case.buses):>30} ITEMS")
    for bus in case.buses:
        card = [" "] * 127
        _put(card, str(bus.number), 1, 4)
        card[5 : 5 + len(bus.name[:12])] = list(bus.name[:12])
        _put(card, "1", 19, 20)
        _put(card, "1", 21, 23)
        _put(card, str(_CODE_OF[bus.bus_type]), 25, 26)
        for attr, first, last in _BUS_COLUMNS[3:]:
            _put(card, _fit(getattr(bus, attr), last - first + 1), first, last)
        _put(card, _fit(bus.v_mag if bus.bus_type is not BusType.PQ else 0.0, 6), 85, 90)
        _put(card, "0", 124, 127)
        out.append("".join(card).rstrip())
    out.append("-999")
    out.append(f"BRANCH DATA FOLLOWS{len(case.branches):>27} ITEMS")
    for br in case.branches:
        card = [" "] * 126
        _put(card, str(br.from_bus), 1, 4)
        _put(card, str(br.to_bus), 6, 9)
        _put(card, "1", 11, 12)
        _put(card, "1", 13, 14)
        _put(card, "1", 17, 17)
        _put(card, "1" if br.is_transformer else "0", 19, 19)
        # R starts right after the type column; keep one blank so cards stay readable
        _put(card, _fit(br.r, 9), 21, 29)
        _put(card, _fit(br.x, 11), 30, 40)
        _put(card, _fit(br.b_charging, 10), 41, 50)
        for first, last in ((51, 55), (57, 61), (63, 67)):
            _put(card, "0", first, last)
        tap = br.tap_ratio if (br.is_transformer and (br.tap_ratio != 1.0 or br.phase_shift)) else 0.0
        _put(card, _fit(tap, 6), 77, 82)
        _put(card, _fit(br.phase_shift, 7), 84, 90)
        out.append("".join(card).rstrip())
    out.append("-999")
    out.append("END OF DATA")
    return "\n".join(out) + "\n"


def case_to_dict(case: PowerFlowCase) -> dict:
    buses = []
    for bus in case.buses:
        d = asdict(bus)
        d["bus_type"] = bus.bus_type.value
        buses.append(d)
    branches = []
    for br in case.branches:
        d = asdict(br)
        d["from"] = d.pop("from_bus")
        d["to"] = d.pop("to_bus")
        branches.append(d)
    return {"title": case.title, "mva_base": case.mva_base, "buses": buses, "branches": branches}


def case_from_dict(doc: dict) -> PowerFlowCase:
    buses = [Bus(**{**b, "bus_type": BusType(b["bus_type"])}) for b in doc["buses"]]
    branches = []
    for b in doc["branches"]:
        b = dict(b)
        branches.append(Branch(from_bus=b.pop("from"), to_bus=b.pop("to"), **b))
    case = PowerFlowCase(float(doc["mva_base"]), buses, branches, doc.get("title", ""))
    validate_case(case)
    return case


def export_case(case: PowerFlowCase) -> str:
    """Canonical JSON document for a case; `import_case` inverts it exactly."""
    return json.dumps(case_to_dict(case), indent=2)


def import_case(text: str) -> PowerFlowCase:
    return case_from_dict(json.loads(text))


def with_phase_shift(case: PowerFlowCase, from_bus: int, to_bus: int, degrees: float) -> PowerFlowCase:
    """Copy of `case` whose branch from_bus-to_bus carries a fixed phase shift."""
    out = case.copy()
    br = out.branch(from_bus, to_bus)
    # a shift given against the stored branch orientation flips sign
    br.phase_shift = degrees if (br.from_bus, br.to_bus) == (from_bus, to_bus) else -degrees
    br.is_transformer = True
    return out


def with_extra_load(case: PowerFlowCase, bus: int, p_mw: float = 0.0, q_mvar: float = 0.0) -> PowerFlowCase:
    out = case.copy()
    b = out.bus(bus)
    b.p_load += p_mw
    b.q_load += q_mvar
    return out

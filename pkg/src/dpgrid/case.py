"""Network case data, maintenance plans and region partitioning.

The case file is a single JSON document with sections ``horizon``, ``buses``,
``lines``, ``generators``, ``demand`` and ``maintenance``; the partition file
maps bus ids to region ids.  Loaders are strict: unknown fields are rejected
and every type invariant is checked up front so downstream modules can assume
clean data.  All quantities use one consistent power base, phase angles are
in radians and costs in currency units per hour / MWh / window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import CaseError, PartitionError

#: Relative 24h demand shape used by ``scaled_demand``: a morning ramp, a broad
#: daytime plateau and an evening peak, normalized so the maximum equals 1.
DEFAULT_DAILY_SHAPE = (
    0.62, 0.58, 0.55, 0.54, 0.55, 0.60,
    0.70, 0.82, 0.90, 0.93, 0.95, 0.96,
    0.95, 0.93, 0.92, 0.93, 0.96, 1.00,
    0.99, 0.95, 0.88, 0.80, 0.72, 0.66,
)


def scaled_demand(peak_mw: float, hours: int, shape=DEFAULT_DAILY_SHAPE) -> tuple[float, ...]:
    """Hourly demand profile scaling a static peak load by a daily shape."""
    return tuple(round(peak_mw * shape[(t - 1) % len(shape)], 6) for t in range(1, hours + 1))


@dataclass(frozen=True)
class Line:
    u: str
    v: str
    gamma: float  # flow per radian of angle difference
    f_max: float  # thermal capacity

    @property
    def key(self) -> tuple[str, str]:
        return (self.u, self.v)


@dataclass(frozen=True)
class Generator:
    gid: str
    bus: str
    dispatch_cost: float
    commitment_cost: float
    p_min: float
    p_max: float
    ramp: float
    min_up: int
    min_down: int


@dataclass(frozen=True)
class MaintenanceSpec:
    """Maintenance requirement for one degraded generator."""

    window_costs: tuple[float, ...]  # one entry per maintenance window
    preferred_window: int
    max_deviation: int = 4

    def admissible_windows(self, n_windows: int) -> tuple[int, ...]:
        lo = self.preferred_window - self.max_deviation
        hi = self.preferred_window + self.max_deviation
        return tuple(m for m in range(1, n_windows + 1) if lo <= m <= hi)


@dataclass(frozen=True)
class PowerCase:
    """Immutable network description. Validate with :meth:`validate`."""

    buses: tuple[str, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    demand: dict[str, tuple[float, ...]]
    horizon: int
    window_hours: int
    maintenance: dict[str, MaintenanceSpec] = field(default_factory=dict)

    @property
    def n_windows(self) -> int:
        return self.horizon // self.window_hours

    def generator(self, gid: str) -> Generator:
        for g in self.generators:
            if g.gid == gid:
                return g
        raise KeyError(gid)

    def validate(self) -> None:
        bus_set = set(self.buses)
        if len(bus_set) != len(self.buses):
            raise CaseError("duplicate bus ids")
        if not self.buses:
            raise CaseError("case has no buses")
        seen_pairs = set()
        for ln in self.lines:
            if ln.u not in bus_set:
                raise CaseError(f"line {ln.u}-{ln.v}: endpoint {ln.u!r} is not a bus")
            if ln.v not in bus_set:
                raise CaseError(f"line {ln.u}-{ln.v}: endpoint {ln.v!r} is not a bus")
            if ln.u == ln.v:
                raise CaseError(f"line {ln.u}-{ln.v} is a self-loop")
            pair = frozenset((ln.u, ln.v))
            if pair in seen_pairs:
                raise CaseError(f"duplicate line {ln.u}-{ln.v}")
            seen_pairs.add(pair)
            if ln.gamma == 0:
                raise CaseError(f"line {ln.u}-{ln.v}: zero susceptance factor")
            if ln.f_max <= 0:
                raise CaseError(f"line {ln.u}-{ln.v}: capacity must be positive")
        gen_ids = set()
        for g in self.generators:
            if g.gid in gen_ids:
                raise CaseError(f"duplicate generator id {g.gid!r}")
            gen_ids.add(g.gid)
            if g.bus not in bus_set:
                raise CaseError(f"generator {g.gid}: host bus {g.bus!r} is not a bus")
            if g.p_min > g.p_max:
                raise CaseError(f"generator {g.gid}: p_min exceeds p_max")
            if g.p_min < 0:
                raise CaseError(f"generator {g.gid}: p_min must be nonnegative")
            if g.ramp <= 0:
                raise CaseError(f"generator {g.gid}: ramp must be positive")
            if g.min_up < 1 or g.min_down < 1:
                raise CaseError(f"generator {g.gid}: min up/down times must be >= 1")
        if self.horizon < 1:
            raise CaseError("horizon must be at least one hour")
        if self.window_hours < 1:
            raise CaseError("maintenance window length must be at least one hour")
        if self.horizon % self.window_hours != 0:
            raise CaseError(
                f"horizon {self.horizon} is not a multiple of the window length {self.window_hours}"
            )
        missing = bus_set - set(self.demand)
        if missing:
            raise CaseError(f"demand missing for buses {sorted(missing)}")
        unknown = set(self.demand) - bus_set
        if unknown:
            raise CaseError(f"demand given for unknown buses {sorted(unknown)}")
        for b, profile in self.demand.items():
            if len(profile) != self.horizon:
                raise CaseError(
                    f"demand profile for bus {b} has {len(profile)} entries, expected {self.horizon}"
                )
        n_windows = self.n_windows
        for gid, spec in self.maintenance.items():
            if gid not in gen_ids:
                raise CaseError(f"maintenance entry for unknown generator {gid!r}")
            if len(spec.window_costs) != n_windows:
                raise CaseError(
                    f"maintenance costs for {gid} have {len(spec.window_costs)} entries, "
                    f"expected {n_windows}"
                )
            if any(k < 0 for k in spec.window_costs):
                raise CaseError(f"maintenance cost for {gid} must be nonnegative")
            if spec.max_deviation < 0:
                raise CaseError(f"maintenance deviation for {gid} must be nonnegative")
            if not spec.admissible_windows(n_windows):
                raise CaseError(
                    f"generator {gid} has no admissible maintenance window within "
                    f"{spec.max_deviation} of window {spec.preferred_window}"
                )


def maintenance_windows(case: PowerCase) -> list[tuple[int, ...]]:
    """Equal, contiguous hour blocks covering the horizon, one per window."""
    case.validate()
    w = case.window_hours
    return [
        tuple(range((m - 1) * w + 1, m * w + 1))
        for m in range(1, case.n_windows + 1)
    ]


def window_of_hour(case: PowerCase, t: int) -> int:
    """Window index (1-based) containing hour t."""
    return (t - 1) // case.window_hours + 1


# ---------------------------------------------------------------------------
# serialization

_CASE_KEYS = {"horizon", "buses", "lines", "generators", "demand", "maintenance"}
_HORIZON_KEYS = {"hours", "maintenance_window_hours"}
_LINE_KEYS = {"from", "to", "susceptance", "capacity"}
_GEN_KEYS = {
    "id", "bus", "dispatch_cost", "commitment_cost",
    "p_min", "p_max", "ramp", "min_up", "min_down",
}
_MAINT_KEYS = {"window_costs", "preferred_window", "max_deviation"}


def _reject_unknown(mapping: dict, allowed: set[str], where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise CaseError(f"unknown field(s) {sorted(unknown)} in {where}")


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise CaseError(f"missing field {key!r} in {where}")
    return mapping[key]


def case_from_dict(doc: dict) -> PowerCase:
    if not isinstance(doc, dict):
        raise CaseError("case document must be a JSON object")
    _reject_unknown(doc, _CASE_KEYS, "case")
    horizon_doc = _require(doc, "horizon", "case")
    _reject_unknown(horizon_doc, _HORIZON_KEYS, "horizon")
    horizon = int(_require(horizon_doc, "hours", "horizon"))
    window_hours = int(_require(horizon_doc, "maintenance_window_hours", "horizon"))

    buses = tuple(str(b) for b in _require(doc, "buses", "case"))

    lines = []
    for i, entry in enumerate(_require(doc, "lines", "case")):
        where = f"lines[{i}]"
        _reject_unknown(entry, _LINE_KEYS, where)
        lines.append(
            Line(
                u=str(_require(entry, "from", where)),
                v=str(_require(entry, "to", where)),
                gamma=float(_require(entry, "susceptance", where)),
                f_max=float(_require(entry, "capacity", where)),
            )
        )

    gens = []
    for i, entry in enumerate(_require(doc, "generators", "case")):
        where = f"generators[{i}]"
        _reject_unknown(entry, _GEN_KEYS, where)
        gens.append(
            Generator(
                gid=str(_require(entry, "id", where)),
                bus=str(_require(entry, "bus", where)),
                dispatch_cost=float(_require(entry, "dispatch_cost", where)),
                commitment_cost=float(_require(entry, "commitment_cost", where)),
                p_min=float(_require(entry, "p_min", where)),
                p_max=float(_require(entry, "p_max", where)),
                ramp=float(_require(entry, "ramp", where)),
                min_up=int(_require(entry, "min_up", where)),
                min_down=int(_require(entry, "min_down", where)),
            )
        )

    demand_doc = _require(doc, "demand", "case")
    demand = {str(b): tuple(float(v) for v in prof) for b, prof in demand_doc.items()}

    maint = {}
    for gid, entry in _require(doc, "maintenance", "case").items():
        where = f"maintenance[{gid}]"
        _reject_unknown(entry, _MAINT_KEYS, where)
        maint[str(gid)] = MaintenanceSpec(
            window_costs=tuple(float(k) for k in _require(entry, "window_costs", where)),
            preferred_window=int(_require(entry, "preferred_window", where)),
            max_deviation=int(entry.get("max_deviation", 4)),
        )

    case = PowerCase(
        buses=buses,
        lines=tuple(lines),
        generators=tuple(gens),
        demand=demand,
        horizon=horizon,
        window_hours=window_hours,
        maintenance=maint,
    )
    case.validate()
    return case


def case_to_dict(case: PowerCase) -> dict:
    return {
        "horizon": {
            "hours": case.horizon,
            "maintenance_window_hours": case.window_hours,
        },
        "buses": list(case.buses),
        "lines": [
            {"from": ln.u, "to": ln.v, "susceptance": ln.gamma, "capacity": ln.f_max}
            for ln in case.lines
        ],
        "generators": [
            {
                "id": g.gid,
                "bus": g.bus,
                "dispatch_cost": g.dispatch_cost,
                "commitment_cost": g.commitment_cost,
                "p_min": g.p_min,
                "p_max": g.p_max,
                "ramp": g.ramp,
                "min_up": g.min_up,
                "min_down": g.min_down,
            }
            for g in case.generators
        ],
        "demand": {b: list(prof) for b, prof in case.demand.items()},
        "maintenance": {
            gid: {
                "window_costs": list(spec.window_costs),
                "preferred_window": spec.preferred_window,
                "max_deviation": spec.max_deviation,
            }
            for gid, spec in case.maintenance.items()
        },
    }


def load_case(path) -> PowerCase:
    """Parse and validate a case file."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CaseError(f"case file {path} is not valid JSON: {exc}") from exc
    return case_from_dict(doc)


def dump_case(case: PowerCase, path) -> None:
    case.validate()
    with open(path, "w") as fh:
        json.dump(case_to_dict(case), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_partition(path, case: PowerCase) -> "RegionPartition":
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PartitionError(f"partition file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise PartitionError("partition file must map bus ids to region ids")
    return partition(case, {str(b): int(r) for b, r in doc.items()})


def dump_partition(bus_region_map: dict[str, int], path) -> None:
    with open(path, "w") as fh:
        json.dump({b: int(r) for b, r in bus_region_map.items()}, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# region partition


@dataclass(frozen=True)
class TieLine:
    """A cross-region line oriented from the owning region's boundary bus."""

    u: str           # boundary bus of the owning region
    v: str           # foreign endpoint
    gamma: float
    f_max: float
    neighbor: int    # region owning v

    @property
    def key(self) -> tuple[str, str]:
        return (self.u, self.v)


class RegionPartition:
    """Region decomposition with derived bus classifications.

    For each region r the constructor derives the internal set I_r, the
    boundary set U_r (buses with a line crossing into another region), the
    foreign set V_r (outside buses adjacent to U_r), neighbor regions N_r,
    oriented tie lines, per-bus adjacency splits and generator memberships.
    """

    def __init__(self, case: PowerCase, bus_region: dict[str, int]):
        self.case = case
        self.bus_region = dict(sorted(bus_region.items()))
        self.regions = tuple(sorted(set(bus_region.values())))
        self._internal: dict[int, tuple[str, ...]] = {}
        self._boundary: dict[int, tuple[str, ...]] = {}
        self._foreign: dict[int, tuple[str, ...]] = {}
        self._neighbors: dict[int, tuple[int, ...]] = {}
        self._ties: dict[int, tuple[TieLine, ...]] = {}
        self._lines: dict[int, tuple[Line, ...]] = {}
        self._gens: dict[int, tuple[Generator, ...]] = {}
        self._adjacency: dict[str, tuple[str, ...]] = {}
        self._derive()

    def _derive(self) -> None:
        case, bus_region = self.case, self.bus_region
        adj: dict[str, set[str]] = {b: set() for b in case.buses}
        for ln in case.lines:
            adj[ln.u].add(ln.v)
            adj[ln.v].add(ln.u)
        self._adjacency = {b: tuple(sorted(n)) for b, n in adj.items()}

        for r in self.regions:
            own = [b for b in case.buses if bus_region[b] == r]
            boundary = set()
            foreign = set()
            neighbors = set()
            ties = []
            lines = []
            for ln in case.lines:
                r_u, r_v = bus_region[ln.u], bus_region[ln.v]
                if r_u == r and r_v == r:
                    lines.append(ln)
                elif r_u == r:
                    boundary.add(ln.u)
                    foreign.add(ln.v)
                    neighbors.add(r_v)
                    ties.append(TieLine(ln.u, ln.v, ln.gamma, ln.f_max, r_v))
                    lines.append(ln)
                elif r_v == r:
                    boundary.add(ln.v)
                    foreign.add(ln.u)
                    neighbors.add(r_u)
                    ties.append(TieLine(ln.v, ln.u, ln.gamma, ln.f_max, r_u))
                    lines.append(ln)
            self._internal[r] = tuple(sorted(set(own) - boundary))
            self._boundary[r] = tuple(sorted(boundary))
            self._foreign[r] = tuple(sorted(foreign))
            self._neighbors[r] = tuple(sorted(neighbors))
            self._ties[r] = tuple(sorted(ties, key=lambda tl: tl.key))
            self._lines[r] = tuple(sorted(lines, key=lambda ln: ln.key))
            self._gens[r] = tuple(
                sorted((g for g in case.generators if bus_region[g.bus] == r), key=lambda g: g.gid)
            )

    # -- accessors ---------------------------------------------------------

    def internal(self, r: int) -> tuple[str, ...]:
        return self._internal[r]

    def boundary(self, r: int) -> tuple[str, ...]:
        return self._boundary[r]

    def foreign(self, r: int) -> tuple[str, ...]:
        return self._foreign[r]

    def monitored(self, r: int) -> tuple[str, ...]:
        """B_r: boundary plus foreign buses, the consensus-coupled set."""
        return tuple(sorted(set(self._boundary[r]) | set(self._foreign[r])))

    def own_buses(self, r: int) -> tuple[str, ...]:
        return tuple(sorted(set(self._internal[r]) | set(self._boundary[r])))

    def all_buses(self, r: int) -> tuple[str, ...]:
        return tuple(
            sorted(set(self._internal[r]) | set(self._boundary[r]) | set(self._foreign[r]))
        )

    def neighbors(self, r: int) -> tuple[int, ...]:
        return self._neighbors[r]

    def tie_lines(self, r: int) -> tuple[TieLine, ...]:
        return self._ties[r]

    def lines_of(self, r: int) -> tuple[Line, ...]:
        """Internal plus tie lines, i.e. every line visible to region r."""
        return self._lines[r]

    def generators(self, r: int) -> tuple[Generator, ...]:
        return self._gens[r]

    def degraded(self, r: int) -> tuple[str, ...]:
        return tuple(
            sorted(g.gid for g in self._gens[r] if g.gid in self.case.maintenance)
        )

    def region_of(self, bus: str) -> int:
        return self.bus_region[bus]

    def bus_neighbors(self, r: int, bus: str) -> dict[str, tuple[str, ...]]:
        """Adjacent buses of `bus` split into internal/boundary/foreign of r."""
        splits = {"internal": [], "boundary": [], "foreign": []}
        internal = set(self._internal[r])
        boundary = set(self._boundary[r])
        for nb in self._adjacency[bus]:
            if nb in internal:
                splits["internal"].append(nb)
            elif nb in boundary:
                splits["boundary"].append(nb)
            elif self.bus_region[nb] != r:
                splits["foreign"].append(nb)
        return {k: tuple(v) for k, v in splits.items()}

    def bus_neighbor_regions(self, r: int, bus: str) -> tuple[int, ...]:
        """N_r^b: regions reached from boundary bus b over tie lines."""
        return tuple(
            sorted({tl.neighbor for tl in self._ties[r] if tl.u == bus})
        )

    def shared_buses(self, r: int, other: int) -> tuple[str, ...]:
        """Buses whose values are exchanged between two adjacent regions."""
        shared = set()
        for tl in self._ties[r]:
            if tl.neighbor == other:
                shared.add(tl.u)
                shared.add(tl.v)
        return tuple(sorted(shared))


def partition(case: PowerCase, bus_region_map: dict[str, int]) -> RegionPartition:
    """Build and validate a region partition from a bus-to-region map."""
    case.validate()
    unknown = set(bus_region_map) - set(case.buses)
    if unknown:
        raise PartitionError(f"partition maps unknown buses {sorted(unknown)}")
    uncovered = set(case.buses) - set(bus_region_map)
    if uncovered:
        raise PartitionError(f"uncovered buses {sorted(uncovered)}")
    regions = sorted(set(bus_region_map.values()))
    expected = list(range(1, len(regions) + 1))
    if regions != expected:
        missing = sorted(set(expected) - set(regions)) or regions
        raise PartitionError(
            f"region ids must be contiguous starting at 1; empty/invalid region(s) {missing}"
        )
    return RegionPartition(case, bus_region_map)

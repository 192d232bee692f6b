"""Bundled desk-scale demonstration cases.

Two networks ship with the package: a 7-bus system split into three regions
(the smallest topology exercising every coupling pattern, including a
boundary bus tied to two different neighbors) and a 14-bus system with
2- and 4-region partitions.  Power quantities are expressed in per-unit on a
common system base, so typical line flows are O(1) and the stock noise
scales (0.015 to 0.30) span a few percent up to a large fraction of a line's
loading, matching the regime the consensus and chart parameters are tuned
for.  Costs are per unit-hour; parameters are chosen so the bundled solver
handles every experiment comfortably (well-separated costs, ramps above
minimum outputs, capacity covering peak demand even with one unit down).
"""

from __future__ import annotations

from .case import Generator, Line, MaintenanceSpec, PowerCase, scaled_demand


def seven_bus(horizon: int = 24, window_hours: int = 6) -> tuple[PowerCase, dict[str, int]]:
    """7-bus, 3-region network: regions {A,B,C}, {D,E}, {F,G}.

    Boundary sets come out as U1={B,C}, U2={E}, U3={F,G} with tie lines B-G,
    C-E and E-F; bus E couples region 2 to both neighbors.
    """
    lines = (
        Line("A", "B", 11.0, 1.00),
        Line("A", "C", 10.0, 1.00),
        Line("B", "G", 9.0, 0.60),
        Line("C", "E", 8.0, 0.60),
        Line("D", "E", 10.5, 1.00),
        Line("E", "F", 9.5, 0.60),
        Line("F", "G", 10.0, 0.80),
    )
    gens = (
        Generator("GA", "A", dispatch_cost=160.0, commitment_cost=4.0,
                  p_min=0.10, p_max=1.20, ramp=0.60, min_up=3, min_down=3),
        Generator("GD", "D", dispatch_cost=260.0, commitment_cost=3.0,
                  p_min=0.08, p_max=0.70, ramp=0.40, min_up=2, min_down=2),
        Generator("GF", "F", dispatch_cost=420.0, commitment_cost=2.0,
                  p_min=0.05, p_max=0.50, ramp=0.30, min_up=1, min_down=1),
    )
    peaks = {"A": 0.10, "B": 0.25, "C": 0.20, "D": 0.10, "E": 0.30, "F": 0.05, "G": 0.15}
    demand = {b: scaled_demand(p, horizon) for b, p in peaks.items()}
    n_windows = horizon // window_hours
    maintenance = {
        "GD": MaintenanceSpec(
            window_costs=tuple([3.0, 1.0, 4.0, 6.0][m % 4] for m in range(n_windows)),
            preferred_window=min(2, n_windows),
            max_deviation=4,
        ),
    }
    case = PowerCase(
        buses=tuple("ABCDEFG"),
        lines=lines,
        generators=gens,
        demand=demand,
        horizon=horizon,
        window_hours=window_hours,
        maintenance=maintenance,
    )
    case.validate()
    region_map = {"A": 1, "B": 1, "C": 1, "D": 2, "E": 2, "F": 3, "G": 3}
    return case, region_map


_FOURTEEN_BUS_LINES = (
    # tie-line capacities (B04-B07, B04-B09, B05-B06) cap imports into the
    # second region below its peak demand, so local units stay load-bearing
    ("B01", "B02", 16.0, 1.60), ("B01", "B05", 9.0, 1.00),
    ("B02", "B03", 10.0, 1.00), ("B02", "B04", 10.5, 1.00),
    ("B02", "B05", 10.0, 1.00), ("B03", "B04", 9.5, 0.80),
    ("B04", "B05", 12.0, 1.00), ("B04", "B07", 9.0, 0.25),
    ("B04", "B09", 8.0, 0.20),  ("B05", "B06", 9.5, 0.25),
    ("B06", "B11", 8.5, 0.60),  ("B06", "B12", 8.0, 0.60),
    ("B06", "B13", 9.0, 0.60),  ("B07", "B08", 11.0, 0.80),
    ("B07", "B09", 10.0, 0.80), ("B09", "B10", 8.5, 0.60),
    ("B09", "B14", 8.0, 0.60),  ("B10", "B11", 8.0, 0.50),
    ("B12", "B13", 7.5, 0.50),  ("B13", "B14", 8.5, 0.50),
)


def fourteen_bus(
    horizon: int = 24, window_hours: int = 6, regions: int = 2
) -> tuple[PowerCase, dict[str, int]]:
    """14-bus network with a 2- or 4-region partition."""
    if regions not in (2, 4):
        raise ValueError("the 14-bus case ships 2- and 4-region partitions")
    lines = tuple(Line(u, v, g, f) for u, v, g, f in _FOURTEEN_BUS_LINES)
    # small commitment costs and long up/down times keep the relaxation tight,
    # which the bundled branch-and-bound appreciates
    gens = (
        Generator("G01", "B01", dispatch_cost=150.0, commitment_cost=1.5,
                  p_min=0.15, p_max=1.70, ramp=0.85, min_up=4, min_down=4),
        Generator("G06", "B06", dispatch_cost=360.0, commitment_cost=1.0,
                  p_min=0.08, p_max=0.60, ramp=0.30, min_up=3, min_down=3),
        Generator("G08", "B08", dispatch_cost=520.0, commitment_cost=0.8,
                  p_min=0.05, p_max=0.45, ramp=0.25, min_up=2, min_down=2),
    )
    peaks = {
        "B01": 0.00, "B02": 0.18, "B03": 0.30, "B04": 0.25, "B05": 0.15,
        "B06": 0.12, "B07": 0.00, "B08": 0.00, "B09": 0.20, "B10": 0.12,
        "B11": 0.08, "B12": 0.10, "B13": 0.12, "B14": 0.15,
    }
    demand = {b: scaled_demand(p, horizon) for b, p in peaks.items()}
    n_windows = horizon // window_hours
    # window costs are strongly separated so relaxed and binary phases agree
    # on the choice; preferred windows sit in the low-demand shoulders
    maintenance = {
        "G06": MaintenanceSpec(
            window_costs=tuple([1.0, 6.0, 9.0, 12.0][m % 4] for m in range(n_windows)),
            preferred_window=1,
            max_deviation=4,
        ),
        "G08": MaintenanceSpec(
            window_costs=tuple([12.0, 9.0, 6.0, 1.0][m % 4] for m in range(n_windows)),
            preferred_window=min(4, n_windows),
            max_deviation=4,
        ),
    }
    case = PowerCase(
        buses=tuple(f"B{i:02d}" for i in range(1, 15)),
        lines=lines,
        generators=gens,
        demand=demand,
        horizon=horizon,
        window_hours=window_hours,
        maintenance=maintenance,
    )
    case.validate()
    if regions == 2:
        region_map = {b: (1 if b in {"B01", "B02", "B03", "B04", "B05"} else 2)
                      for b in case.buses}
    else:
        groups = {
            1: {"B01", "B02", "B05"},
            2: {"B03", "B04"},
            3: {"B06", "B11", "B12", "B13"},
            4: {"B07", "B08", "B09", "B10", "B14"},
        }
        region_map = {b: r for r, bs in groups.items() for b in bs}
    return case, region_map


def chain_three_region() -> tuple[PowerCase, dict[str, int]]:
    """Minimal 3-bus chain with one region per bus (line overlay topology)."""
    case = PowerCase(
        buses=("N1", "N2", "N3"),
        lines=(Line("N1", "N2", 10.0, 0.50), Line("N2", "N3", 10.0, 0.50)),
        generators=(
            Generator("GN1", "N1", dispatch_cost=200.0, commitment_cost=1.0,
                      p_min=0.02, p_max=0.40, ramp=0.40, min_up=1, min_down=1),
        ),
        demand={
            "N1": (0.04,) * 4,
            "N2": (0.06,) * 4,
            "N3": (0.05,) * 4,
        },
        horizon=4,
        window_hours=2,
        maintenance={},
    )
    case.validate()
    return case, {"N1": 1, "N2": 2, "N3": 3}

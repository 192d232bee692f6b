"""Control chart on phase-angle discrepancies and the local stopping rule.

Per monitored bus, per-iteration discrepancies (own noisy estimate minus the
received one, averaged over hours) accumulate in a window of ``window``
iterations; each full window emits one chart point.  Under agreement the
point is the mean of independent symmetric noise terms and so fluctuates
inside a band derived from the noise scale; points outside the band are
alarms.  Every ``points_per_block`` points form a decision block: a bus
trips its block when it collects more than ``max_alarms_per_block`` alarms,
and the region-level verdict combines the residual tolerances with the
tripped-bus count kappa.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError

MODE_MEAN = "mean"
MODE_SUM = "sum"


@dataclass(frozen=True)
class ChartConfig:
    window: int = 10              # iterations per chart point (S_w)
    points_per_block: int = 4     # points per decision block (S_p)
    noise_scale: float = 0.015    # scale of one discrepancy's noise
    limit_multiplier: float = 1.0
    cl: float = 0.1               # convergence limit parameter
    mode: str = MODE_MEAN
    max_alarms_per_block: int = 1
    m_alpha: float = 1.0

    def __post_init__(self):
        if self.window < 1 or self.points_per_block < 1:
            raise ConfigError("window and points_per_block must be >= 1")
        if self.limit_multiplier <= 0:
            raise ConfigError("limit multiplier must be positive")
        if self.cl <= 0:
            raise ConfigError("convergence limit must be positive")
        if self.mode not in (MODE_MEAN, MODE_SUM):
            raise ConfigError(f"unknown chart mode {self.mode!r}")

    @property
    def threshold(self) -> float:
        """Alarm band half-width for one chart point."""
        var_one = 2.0 * (self.noise_scale * self.m_alpha) ** 2
        if self.mode == MODE_MEAN:
            return self.limit_multiplier * math.sqrt(var_one / self.window)
        return self.limit_multiplier * math.sqrt(var_one * self.window)

    @property
    def block_iterations(self) -> int:
        return self.window * self.points_per_block

    @property
    def chart_active(self) -> bool:
        """A zero band (noiseless runs) disables the alarm veto."""
        return self.threshold > 0.0


def alarm_check(point: float, config: ChartConfig) -> bool:
    """True when the point falls strictly outside the alarm band."""
    return abs(point) > config.threshold


@dataclass
class ChartState:
    config: ChartConfig
    buses: tuple[str, ...]
    iteration: int = 0
    _window: dict = field(default_factory=dict)       # bus -> list of discrepancies
    _block_points: dict = field(default_factory=dict) # bus -> points in current block
    _block_alarms: dict = field(default_factory=dict) # bus -> alarms in current block
    points: dict = field(default_factory=dict)        # bus -> all completed points
    last_block_kappa: int | None = None
    blocks_completed: int = 0

    def __post_init__(self):
        for b in self.buses:
            self._window[b] = []
            self._block_points[b] = 0
            self._block_alarms[b] = 0
            self.points[b] = []

    def record_iteration(self, discrepancies: dict[str, float]) -> list[tuple[str, float, bool]]:
        """Append one per-bus discrepancy; returns points completed this call."""
        self.iteration += 1
        emitted: list[tuple[str, float, bool]] = []
        for b in self.buses:
            w = self._window[b]
            w.append(float(discrepancies[b]))
            if len(w) >= self.config.window:
                point = sum(w) / len(w) if self.config.mode == MODE_MEAN else sum(w)
                w.clear()
                alarmed = alarm_check(point, self.config)
                self.points[b].append(point)
                self._block_points[b] += 1
                if alarmed:
                    self._block_alarms[b] += 1
                emitted.append((b, point, alarmed))
        if self.buses and self._block_points[self.buses[0]] >= self.config.points_per_block:
            tripped = sum(
                1
                for b in self.buses
                if self._block_alarms[b] > self.config.max_alarms_per_block
            )
            self.last_block_kappa = tripped
            self.blocks_completed += 1
            for b in self.buses:
                self._block_points[b] = 0
                self._block_alarms[b] = 0
        elif not self.buses and self.iteration % self.config.block_iterations == 0:
            self.last_block_kappa = 0
            self.blocks_completed += 1
        return emitted

    @property
    def kappa(self) -> int:
        """Tripped-bus count of the most recent completed block."""
        if self.last_block_kappa is None:
            raise ConfigError("no decision block completed yet")
        return self.last_block_kappa


def local_convergence(
    state: ChartState,
    primal_residual: float,
    dual_residual: float,
    n_coupled_buses: int,
    horizon: int,
    config: ChartConfig | None = None,
) -> bool:
    """Region-local stopping verdict at a decision-block boundary.

    Both residuals must fall below ``cl * |B_r| * |T|`` and, when the chart is
    active, the tripped-bus count of the block must satisfy ``kappa <= 1`` and
    ``kappa < |B_r|``.  Only meaningful at iteration counts that are multiples
    of ``window * points_per_block``.
    """
    cfg = config or state.config
    if state.blocks_completed < 1:
        return False
    beta = cfg.cl * n_coupled_buses * horizon
    if n_coupled_buses == 0:
        beta = float("inf")  # isolated region: residuals are identically zero
    if not (primal_residual < beta and dual_residual < beta):
        return False
    if not cfg.chart_active or not state.buses:
        return True
    kappa = state.kappa
    return kappa <= 1 and kappa < n_coupled_buses

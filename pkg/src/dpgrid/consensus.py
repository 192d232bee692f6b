"""EWMA-smoothed consensus state and dual updates for one region.

Received noisy neighbor estimates are smoothed with mixing factor eta
(first exchange initializes the memory to the received value), consensus is
the arithmetic mean of own and smoothed values, and multipliers follow the
standard scaled ascent lam <- lam + rho*(own - consensus).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

#: Published mixing factors, keyed by (noise scale, gamma).
ETA_TABLE = {
    (0.015, 4): 0.997, (0.015, 8): 0.9976, (0.015, 12): 0.9982,
    (0.015, 16): 0.9988, (0.015, 20): 0.9994,
    (0.03, 4): 0.994, (0.03, 8): 0.9952, (0.03, 12): 0.9964,
    (0.03, 16): 0.9976, (0.03, 20): 0.9988,
    (0.075, 4): 0.985, (0.075, 8): 0.988, (0.075, 12): 0.991,
    (0.075, 16): 0.994, (0.075, 20): 0.997,
    (0.15, 4): 0.97, (0.15, 8): 0.976, (0.15, 12): 0.982,
    (0.15, 16): 0.988, (0.15, 20): 0.994,
    (0.3, 4): 0.94, (0.3, 8): 0.952, (0.3, 12): 0.964,
    (0.3, 16): 0.976, (0.3, 20): 0.988,
}


def mixing_factor(scale: float, gamma: int, mode: str = "table") -> float:
    """EWMA mixing factor for a noise scale and tuning index gamma.

    ``table`` mode looks the value up in the published grid; ``formula`` mode
    evaluates ``1 - (0.24 - 0.01*gamma)*scale``, which reproduces every table
    cell to four decimals.
    """
    if mode == "formula":
        return 1.0 - (0.24 - 0.01 * gamma) * scale
    if mode != "table":
        raise ConfigError(f"unknown mixing-factor mode {mode!r}")
    key = (round(float(scale), 6), int(gamma))
    try:
        return ETA_TABLE[key]
    except KeyError:
        raise ConfigError(
            f"no tabulated mixing factor for scale={scale}, gamma={gamma}; "
            "use mode='formula' or an explicit eta"
        ) from None


def ewma_update(prev, received, eta: float, first: bool = False):
    """Smooth a received value; the first exchange seeds the memory."""
    if not 0.0 < eta <= 1.0:
        raise ConfigError(f"eta must lie in (0, 1], got {eta}")
    received = np.asarray(received, dtype=float)
    if first:
        return received.copy()
    return eta * received + (1.0 - eta) * np.asarray(prev, dtype=float)


def intermediate_consensus(own, smoothed):
    """Arithmetic mean of the own value and the smoothed neighbor estimate."""
    own = np.asarray(own, dtype=float)
    smoothed = np.asarray(smoothed, dtype=float)
    if own.shape != smoothed.shape:
        raise ConfigError(
            f"consensus operands have mismatched shapes {own.shape} vs {smoothed.shape}"
        )
    return 0.5 * (own + smoothed)


def dual_update(duals, own, consensus, rho: float):
    """One multiplier ascent step on the consensus residual."""
    return np.asarray(duals, dtype=float) + rho * (
        np.asarray(own, dtype=float) - np.asarray(consensus, dtype=float)
    )


@dataclass
class ConsensusState:
    """Per-region coordination state over B_r buses and oriented tie lines.

    Arrays are aligned with the region's sorted monitored-bus and tie-line
    orderings: rows index buses/ties, columns index hours.
    """

    buses: tuple[str, ...]
    ties: tuple[tuple[str, str], ...]
    horizon: int
    rho_theta: float = 1.0
    rho_f: float = 1.0
    eta: float = 1.0
    lam: np.ndarray = field(init=False)
    phi: np.ndarray = field(init=False)
    theta_bar: np.ndarray = field(init=False)
    f_bar: np.ndarray = field(init=False)
    theta_bar_prev: np.ndarray | None = field(init=False, default=None)
    ewma_theta: dict = field(init=False, default_factory=dict)  # (bus, sender) -> (T,)
    ewma_f: dict = field(init=False, default_factory=dict)      # tie key -> (T,)
    active: bool = field(init=False, default=False)

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        if self.rho_theta <= 0 or self.rho_f <= 0:
            raise ConfigError("penalty parameters must be positive")
        nb, nt, T = len(self.buses), len(self.ties), self.horizon
        self.lam = np.zeros((nb, T))
        self.phi = np.zeros((nt, T))
        self.theta_bar = np.zeros((nb, T))
        self.f_bar = np.zeros((nt, T))

    def bus_row(self, bus: str) -> int:
        return self.buses.index(bus)

    def update_from_neighbors(
        self,
        own_theta: np.ndarray,
        own_flow: np.ndarray,
        received_theta: dict[tuple[str, int], np.ndarray],
        implied_flow: dict[tuple[str, str], np.ndarray],
        first: bool,
    ) -> None:
        """One full consensus step: EWMA, averaging, dual ascent.

        ``received_theta`` maps (bus, sender region) to the neighbor's noisy
        angles; ``implied_flow`` maps a tie key to the flow reconstructed from
        the neighbor's noisy angles in this region's orientation.  When a bus
        is shared with several neighbors, their smoothed estimates are
        averaged before forming the consensus mean.
        """
        for key, vals in received_theta.items():
            prev = self.ewma_theta.get(key)
            self.ewma_theta[key] = ewma_update(
                prev if prev is not None else vals, vals, self.eta, first=first or prev is None
            )
        for key, vals in implied_flow.items():
            prev = self.ewma_f.get(key)
            self.ewma_f[key] = ewma_update(
                prev if prev is not None else vals, vals, self.eta, first=first or prev is None
            )

        smoothed_theta = np.zeros_like(own_theta)
        for i, bus in enumerate(self.buses):
            entries = [v for (b, _s), v in self.ewma_theta.items() if b == bus]
            if not entries:
                smoothed_theta[i] = own_theta[i]
            else:
                smoothed_theta[i] = np.mean(entries, axis=0)
        smoothed_flow = np.zeros_like(own_flow)
        for i, key in enumerate(self.ties):
            smoothed_flow[i] = self.ewma_f[key]

        self.theta_bar_prev = self.theta_bar.copy() if self.active else None
        self.theta_bar = intermediate_consensus(own_theta, smoothed_theta)
        self.f_bar = intermediate_consensus(own_flow, smoothed_flow) if own_flow.size else own_flow.copy()
        self.lam = dual_update(self.lam, own_theta, self.theta_bar, self.rho_theta)
        self.phi = dual_update(self.phi, own_flow, self.f_bar, self.rho_f)
        self.active = True

    def residuals(self, own_theta: np.ndarray) -> tuple[float, float]:
        """(primal, dual) l1 residuals of the phase-angle consensus."""
        if not self.active:
            return float("inf"), float("inf")
        primal = float(np.sum(np.abs(own_theta - self.theta_bar)))
        if self.theta_bar_prev is None:
            dual = float("inf") if self.theta_bar.size else 0.0
        else:
            dual = float(np.sum(np.abs(self.theta_bar - self.theta_bar_prev)))
        if own_theta.size == 0:
            primal, dual = 0.0, 0.0
        return primal, dual

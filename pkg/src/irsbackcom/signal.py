"""Composite twice-reflected channels, tag SNR and harvested power.

Everything here is linear-unit math on a :class:`~irsbackcom.channel.ChannelSet`.
The reader's DC terms (CE -> reader and CE -> IRS -> reader) are never formed;
they carry no tag data and are removed before detection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .channel import ChannelSet, Scenario

TWO_PI = 2 * np.pi


class PhaseConfig:
    """IRS phase shifts and the matching unit-modulus coefficients."""

    __slots__ = ("theta",)

    def __init__(self, theta):
        self.theta = np.mod(np.asarray(theta, dtype=float), TWO_PI)

    @classmethod
    def from_coefficients(cls, v) -> "PhaseConfig":
        return cls(np.angle(np.asarray(v)))

    @classmethod
    def zeros(cls, n: int) -> "PhaseConfig":
        return cls(np.zeros(n))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "PhaseConfig":
        return cls(rng.uniform(0.0, TWO_PI, n))

    @property
    def v(self) -> np.ndarray:
        """Reflection coefficients ``exp(j theta)`` (the diagonal of Theta)."""
        return np.exp(1j * self.theta)

    @property
    def N(self) -> int:
        return self.theta.size

    def copy(self) -> "PhaseConfig":
        return PhaseConfig(self.theta.copy())

    def __repr__(self):
        return f"PhaseConfig(N={self.N})"


@dataclass
class TagState:
    alpha: float = 1.0
    xi: float = 0.0
    b_mag_sq: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha={self.alpha} outside [0, 1]")
        if self.xi == 0:
            self.alpha = 1.0


@dataclass
class DesignPoint:
    """A full assignment of the design variables ``(w, Theta, alpha, G)``."""

    w: np.ndarray
    phases: PhaseConfig
    alphas: np.ndarray
    combiners: np.ndarray  # (K, M), row k is g_k

    @property
    def power(self) -> float:
        return float(np.vdot(self.w, self.w).real)

    def copy(self) -> "DesignPoint":
        return DesignPoint(self.w.copy(), self.phases.copy(), np.array(self.alphas, float),
                           self.combiners.copy())


def _v(phases) -> np.ndarray:
    return phases.v if isinstance(phases, PhaseConfig) else np.asarray(phases, complex)


def composite_ce_tag(channels: ChannelSet, phases, k: int) -> np.ndarray:
    """``h_{k,1} = h_TI^H Theta H_CI + h_CT``, a length-L row."""
    v = _v(phases)
    return (channels.h_TI[k].conj() * v) @ channels.H_CI + channels.h_CT[k]


def composite_tag_reader(channels: ChannelSet, phases, k: int) -> np.ndarray:
    """``h_{k,2} = H_RI^H Theta h_TI + h_TR``, a length-M column."""
    v = _v(phases)
    return channels.H_RI.conj().T @ (v * channels.h_TI[k]) + channels.h_TR[k]


def cascade(channels: ChannelSet, phases, k: int) -> np.ndarray:
    """M x L end-to-end matrix ``h_{k,2} h_{k,1}``."""
    return np.outer(composite_tag_reader(channels, phases, k),
                    composite_ce_tag(channels, phases, k))


def tag_snr(channels: ChannelSet, point: DesignPoint, k: int, noise_power: float,
            b_mag_sq: float = 1.0) -> float:
    g = point.combiners[k]
    gg = float(np.vdot(g, g).real)
    if gg == 0:
        raise ValueError("zero combiner")
    h1w = composite_ce_tag(channels, point.phases, k) @ point.w
    gh2 = np.vdot(g, composite_tag_reader(channels, point.phases, k))
    return float(point.alphas[k] * b_mag_sq * abs(gh2 * h1w) ** 2 / (noise_power * gg))


def incident_power(channels: ChannelSet, phases, w: np.ndarray, k: int) -> float:
    """``|h_{k,1} w|^2``, the power reaching tag ``k``."""
    return float(abs(composite_ce_tag(channels, phases, k) @ w) ** 2)


def harvested_power(channels: ChannelSet, point: DesignPoint, k: int, eta: float = 1.0) -> float:
    return float((1.0 - point.alphas[k]) * eta * incident_power(channels, point.phases, point.w, k))


@dataclass
class FeasibilityReport:
    snr_residual: np.ndarray  # gamma_k - gamma_th (linear)
    circuit_residual: np.ndarray  # harvested - xi; +inf when xi == 0
    combiner_slack: np.ndarray  # 1 - ||g_k||^2

    def min_residual(self) -> float:
        """Smallest residual, each normalized by its requirement."""
        return float(min(self.snr_residual.min(), self.combiner_slack.min()))

    def feasible(self, gamma_th: float, xi: float, rtol: float = 1e-8) -> bool:
        ok = np.all(self.snr_residual >= -rtol * gamma_th)
        if xi > 0:
            ok &= np.all(self.circuit_residual >= -rtol * xi)
        return bool(ok and np.all(self.combiner_slack >= -rtol))


def feasibility_report(channels: ChannelSet, point: DesignPoint,
                       scenario: Scenario) -> FeasibilityReport:
    K = channels.K
    snr = np.array([tag_snr(channels, point, k, scenario.noise_power, scenario.b_mag_sq)
                    for k in range(K)])
    if scenario.xi_watts == 0:
        circ = np.full(K, np.inf)
    else:
        circ = np.array([harvested_power(channels, point, k, scenario.eta) - scenario.xi_watts
                         for k in range(K)])
    slack = 1.0 - np.sum(np.abs(point.combiners) ** 2, axis=1)
    return FeasibilityReport(snr - scenario.gamma_th, circ, slack)

"""Deployment geometry and Rician channel generation.

All terminals live in the z = 0 plane; the IRS is a vertical square array of
half-wavelength spaced elements centred at ``irs_center``.  Path loss is
absorbed into the channel coefficients at generation time, so the optimizers
never see geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class ScenarioError(ValueError):
    """Raised for an invalid or inconsistent scenario description."""


def db_to_lin(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(watts):
    return 10.0 * np.log10(np.asarray(watts, dtype=float)) + 30.0


def _as_point(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if p.size == 2:
        p = np.append(p, 0.0)
    if p.size != 3:
        raise ScenarioError(f"positions must have 2 or 3 coordinates, got {p.size}")
    return p


@dataclass
class Scenario:
    """Node layout, RF constants and requirement thresholds.

    Powers are stored the way the config file carries them (dBm / dB); the
    ``*_lin`` properties give the linear values used internally.
    ``irs_normal`` is optional: when ``None`` the surface faces the centroid
    of the CE, the reader and the tags.
    """

    ce_position: np.ndarray
    reader_position: np.ndarray
    irs_center: np.ndarray
    tag_positions: List[np.ndarray]
    L: int = 4
    M: int = 1
    N: int = 64
    K: int = 1
    carrier_freq_hz: float = 915e6
    rician_k_db: float = 3.0
    pathloss_exponent: float = 2.1
    irs_q: float = 0.285
    noise_power_dbm: float = -110.0
    gamma_th_db: float = 8.0
    xi_watts: float = 0.0
    eta: float = 1.0
    b_mag_sq: float = 1.0
    lipschitz_ell: float = 2.5e-16
    conv_eps: float = 1e-4
    rand_count_R: int = 200
    sr_precision_T: float = 2 * math.pi / 360
    irs_normal: Optional[np.ndarray] = None
    element_spacing_wl: float = 0.5
    antenna_spacing_wl: float = 0.5

    def __post_init__(self):
        self.ce_position = _as_point(self.ce_position)
        self.reader_position = _as_point(self.reader_position)
        self.irs_center = _as_point(self.irs_center)
        self.tag_positions = [_as_point(p) for p in self.tag_positions]
        if self.irs_normal is not None:
            self.irs_normal = _as_point(self.irs_normal)
        self.validate()

    def validate(self) -> None:
        for name in ("L", "M", "K", "rand_count_R"):
            if int(getattr(self, name)) < 1:
                raise ScenarioError(f"{name} must be >= 1")
        if self.N < 0:
            raise ScenarioError("N must be >= 0")
        if math.isqrt(self.N) ** 2 != self.N:
            raise ScenarioError(f"N={self.N} is not a perfect square")
        if len(self.tag_positions) != self.K:
            raise ScenarioError(
                f"K={self.K} but {len(self.tag_positions)} tag positions given")
        if not math.isfinite(self.rician_k_db):
            raise ScenarioError("rician_k_db must be finite")
        if not 0.0 <= self.eta <= 1.0:
            raise ScenarioError("eta must lie in [0, 1]")
        if self.conv_eps <= 0:
            raise ScenarioError("conv_eps must be positive")
        if self.xi_watts < 0:
            raise ScenarioError("xi_watts must be nonnegative")
        if self.carrier_freq_hz <= 0:
            raise ScenarioError("carrier_freq_hz must be positive")
        if self.irs_normal is not None and np.linalg.norm(self.irs_normal) == 0:
            raise ScenarioError("irs_normal must be nonzero")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    @property
    def noise_power(self) -> float:
        return float(dbm_to_watts(self.noise_power_dbm))

    @property
    def gamma_th(self) -> float:
        return float(db_to_lin(self.gamma_th_db))

    @property
    def k_factor(self) -> float:
        return float(db_to_lin(self.rician_k_db))

    def with_changes(self, **kw) -> "Scenario":
        """Copy with some fields replaced; K follows ``tag_positions``."""
        if "tag_positions" in kw and "K" not in kw:
            kw["K"] = len(kw["tag_positions"])
        return replace(self, **kw)


@dataclass
class Geometry:
    element_positions: np.ndarray  # (N, 3)
    irs_normal: np.ndarray  # (3,)
    ce_antennas: np.ndarray  # (L, 3)
    reader_antennas: np.ndarray  # (M, 3)
    wavelength: float


@dataclass
class ChannelSet:
    """One realization of every link, path loss included.

    Shapes follow the system model: ``h_CT`` (K, L) holds the K row vectors,
    ``h_TI`` (K, N) the K column vectors ``h_{T_k I}`` stacked as rows,
    ``H_RI`` is (N, M) so that ``H_RI.conj().T`` maps IRS to reader, and
    ``h_TR`` is (K, M).
    """

    h_CT: np.ndarray
    H_CI: np.ndarray
    H_CR: np.ndarray
    h_TI: np.ndarray
    H_RI: np.ndarray
    h_TR: np.ndarray

    @property
    def K(self) -> int:
        return self.h_CT.shape[0]

    @property
    def L(self) -> int:
        return self.h_CT.shape[1]

    @property
    def N(self) -> int:
        return self.H_CI.shape[0]

    @property
    def M(self) -> int:
        return self.h_TR.shape[1]

    def tag(self, k: int) -> "ChannelSet":
        """Single-tag view of tag ``k``."""
        s = slice(k, k + 1)
        return replace(self, h_CT=self.h_CT[s], h_TI=self.h_TI[s], h_TR=self.h_TR[s])

    def without_irs(self) -> "ChannelSet":
        return replace(self, H_CI=np.zeros_like(self.H_CI), h_TI=np.zeros_like(self.h_TI),
                       H_RI=np.zeros_like(self.H_RI))

    def with_ce_tag_irs_removed(self) -> "ChannelSet":
        """Drop the C-I-T reflection, keeping the T-I-R one."""
        return replace(self, H_CI=np.zeros_like(self.H_CI))

    def with_tag_reader_irs_removed(self) -> "ChannelSet":
        """Drop the T-I-R reflection, keeping the C-I-T one."""
        return replace(self, H_RI=np.zeros_like(self.H_RI))


def _ula(center: np.ndarray, count: int, spacing: float) -> np.ndarray:
    # linear array along the y axis
    offsets = (np.arange(count) - (count - 1) / 2.0) * spacing
    pos = np.tile(center, (count, 1))
    pos[:, 1] += offsets
    return pos


def build_geometry(scenario: Scenario) -> Geometry:
    """Element grid and array layouts for ``scenario``."""
    lam = scenario.wavelength
    n_side = math.isqrt(scenario.N)
    if n_side ** 2 != scenario.N:
        raise ScenarioError(f"N={scenario.N} is not a perfect square")

    if scenario.irs_normal is not None:
        normal = scenario.irs_normal / np.linalg.norm(scenario.irs_normal)
    else:
        pts = np.vstack([scenario.ce_position, scenario.reader_position,
                         *scenario.tag_positions])
        normal = pts.mean(axis=0) - scenario.irs_center
        if np.linalg.norm(normal) == 0:
            raise ScenarioError("IRS centre coincides with the node centroid")
        normal = normal / np.linalg.norm(normal)

    zhat = np.array([0.0, 0.0, 1.0])
    u = np.cross(zhat, normal)
    if np.linalg.norm(u) < 1e-12:
        u = np.array([1.0, 0.0, 0.0])
    u /= np.linalg.norm(u)
    vert = np.cross(normal, u)

    d = scenario.element_spacing_wl * lam
    grid = (np.arange(n_side) - (n_side - 1) / 2.0) * d
    gu, gv = np.meshgrid(grid, grid, indexing="ij")
    elements = (scenario.irs_center[None, :] + gu.reshape(-1, 1) * u[None, :]
                + gv.reshape(-1, 1) * vert[None, :])

    a = scenario.antenna_spacing_wl * lam
    return Geometry(
        element_positions=elements.reshape(scenario.N, 3),
        irs_normal=normal,
        ce_antennas=_ula(scenario.ce_position, scenario.L, a),
        reader_antennas=_ula(scenario.reader_position, scenario.M, a),
        wavelength=lam,
    )


def direct_path_gain(dist_m, delta: float, lambda_m: float):
    """Amplitude gain ``(lambda/4pi) * d**(-delta/2)`` of a direct link."""
    dist_m = np.asarray(dist_m, dtype=float)
    if np.any(dist_m <= 0):
        raise ValueError("distance must be positive")
    return lambda_m / (4 * np.pi) * dist_m ** (-delta / 2.0)


def _hop_cosine(element: np.ndarray, node: np.ndarray, normal: np.ndarray):
    r = node - element
    dist = np.linalg.norm(r, axis=-1)
    if np.any(dist == 0):
        raise ValueError("node coincides with an IRS element")
    cos = (r @ normal) / dist
    # nodes behind the surface receive nothing
    return np.clip(cos, 0.0, None), dist


def irs_element_gain(tx_pos, element_index: int, rx_pos, geometry: Geometry,
                     scenario: Scenario) -> float:
    """Per-element reflection term of the IRS path loss.

    Returns ``(lambda/4pi) * pi * cos_tx**q * cos_rx**q / (d_tx*d_rx)**(delta/2)``,
    the per-element amplitude on the same footing as ``d**(-delta/2)`` for a
    direct link.  The end-to-end amplitude of the reflected path through one
    element is ``lambda/4pi`` times this value.
    """
    el = geometry.element_positions[element_index]
    c1, d1 = _hop_cosine(el, _as_point(tx_pos), geometry.irs_normal)
    c2, d2 = _hop_cosine(el, _as_point(rx_pos), geometry.irs_normal)
    q, delta = scenario.irs_q, scenario.pathloss_exponent
    lam = geometry.wavelength
    return float(lam / (4 * np.pi) * np.pi * c1 ** q * c2 ** q / (d1 * d2) ** (delta / 2))


def irs_hop_amplitude(node: np.ndarray, geometry: Geometry, scenario: Scenario) -> np.ndarray:
    """Per-element share of the IRS path loss for the hop element <-> ``node``.

    The product of the two hop amplitudes of a reflected path equals
    ``lambda/4pi * irs_element_gain``.
    """
    c, d = _hop_cosine(geometry.element_positions, _as_point(node), geometry.irs_normal)
    lam = geometry.wavelength
    return (lam / (4 * np.pi) * np.sqrt(np.pi) * c ** scenario.irs_q
            * d ** (-scenario.pathloss_exponent / 2))


def sample_rician(rows: int, cols: int, k_factor_linear: float, los_matrix,
                  rng: np.random.Generator) -> np.ndarray:
    """Unit-power Rician matrix ``sqrt(K/(K+1)) los + sqrt(1/(K+1)) g``."""
    los = np.asarray(los_matrix, dtype=complex)
    if los.shape != (rows, cols):
        raise ValueError(f"los_matrix shape {los.shape} != {(rows, cols)}")
    if k_factor_linear < 0:
        raise ValueError("K-factor must be nonnegative")
    g = (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2)
    k = k_factor_linear
    return np.sqrt(k / (k + 1)) * los + np.sqrt(1 / (k + 1)) * g


def _los(tx: np.ndarray, rx: np.ndarray, lam: float) -> np.ndarray:
    """Geometric phase matrix, rows indexed by ``rx``, columns by ``tx``."""
    d = np.linalg.norm(rx[:, None, :] - tx[None, :, :], axis=-1)
    return np.exp(-2j * np.pi * d / lam)


def generate_channels(scenario: Scenario, geometry: Geometry,
                      rng: np.random.Generator) -> ChannelSet:
    """Draw one realization of every link.

    Draw order is fixed (CT, CI, CR, TI, RI, TR) so a seed reproduces the
    same small-scale fading whatever the node positions are.
    """
    lam = geometry.wavelength
    kf = scenario.k_factor
    delta = scenario.pathloss_exponent
    L, M, N, K = scenario.L, scenario.M, scenario.N, scenario.K
    ce, rd, els = geometry.ce_antennas, geometry.reader_antennas, geometry.element_positions
    tags = scenario.tag_positions

    h_CT = np.empty((K, L), complex)
    for k, t in enumerate(tags):
        g = direct_path_gain(np.linalg.norm(t - scenario.ce_position), delta, lam)
        h_CT[k] = g * sample_rician(1, L, kf, _los(ce, t[None, :], lam), rng)[0]

    a_ce = irs_hop_amplitude(scenario.ce_position, geometry, scenario)
    H_CI = a_ce[:, None] * sample_rician(N, L, kf, _los(ce, els, lam), rng)

    g_cr = direct_path_gain(np.linalg.norm(scenario.reader_position - scenario.ce_position),
                            delta, lam)
    H_CR = g_cr * sample_rician(M, L, kf, _los(ce, rd, lam), rng)

    # h_TI[k, n] is the tag -> element channel; its conjugate drives the IRS -> tag hop
    h_TI = np.empty((K, N), complex)
    for k, t in enumerate(tags):
        a_t = irs_hop_amplitude(t, geometry, scenario)
        h_TI[k] = a_t * sample_rician(N, 1, kf, _los(t[None, :], els, lam), rng)[:, 0]

    # H_RI^H is the physical IRS -> reader matrix
    a_r = irs_hop_amplitude(scenario.reader_position, geometry, scenario)
    G_IR = a_r[None, :] * sample_rician(M, N, kf, _los(els, rd, lam), rng)
    H_RI = G_IR.conj().T

    h_TR = np.empty((K, M), complex)
    for k, t in enumerate(tags):
        g = direct_path_gain(np.linalg.norm(scenario.reader_position - t), delta, lam)
        h_TR[k] = g * sample_rician(M, 1, kf, _los(t[None, :], rd, lam), rng)[:, 0]

    return ChannelSet(h_CT=h_CT, H_CI=H_CI, H_CR=H_CR, h_TI=h_TI, H_RI=H_RI, h_TR=h_TR)

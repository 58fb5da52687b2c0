"""Single semi-passive tag with a single-antenna reader.

With one tag and one reader antenna, MRT is the optimal beamformer and the
minimum power has a closed form, so only the IRS phases need optimizing.  Two
phase optimizers are provided: a minorization-maximization loop over the
quartic objective (closed-form unit-modulus step) and successive refinement
of one phase at a time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .channel import ChannelSet, Scenario
from .signal import PhaseConfig, composite_ce_tag, composite_tag_reader

log = logging.getLogger(__name__)

TWO_PI = 2 * np.pi


def _check_single(channels: ChannelSet):
    if channels.K != 1 or channels.M != 1:
        raise ValueError("single-tag solver needs K == 1 and M == 1")


def mrt_beamformer(channels: ChannelSet, phases, power: float, k: int = 0) -> np.ndarray:
    """Maximum ratio transmission along the conjugate cascaded channel."""
    h1 = composite_ce_tag(channels, phases, k)
    h2 = composite_tag_reader(channels, phases, k)
    n1, n2 = np.linalg.norm(h1), np.linalg.norm(h2)
    if n1 == 0 or n2 == 0:
        raise ValueError("cascaded channel is zero")
    rot = np.conj(h2[0]) / abs(h2[0]) if h2[0] != 0 else 1.0
    return np.sqrt(power) * rot * h1.conj() / n1


def cascade_gain(channels: ChannelSet, phases, k: int = 0) -> float:
    """``||h_2||^2 ||h_1||^2``, the squared norm of the cascaded channel."""
    h1 = composite_ce_tag(channels, phases, k)
    h2 = composite_tag_reader(channels, phases, k)
    return float(np.vdot(h1, h1).real * np.vdot(h2, h2).real)


def min_power_given_phases(channels: ChannelSet, phases, gamma_th: float, noise: float,
                           b_mag_sq: float = 1.0, k: int = 0) -> float:
    """Smallest transmit power meeting the SNR target with MRT; ``inf`` if unreachable."""
    g = cascade_gain(channels, phases, k)
    if g == 0:
        return np.inf
    return gamma_th * noise / (b_mag_sq * g)


# --------------------------------------------------------------------------
# quartic form and MM


@dataclass
class QuarticForm:
    """Matrices of the quartic objective ``F(vbar) = (vbar^H S vbar + c2)(vbar^H R vbar + c1)``.

    ``vbar = [conj(exp(j theta)); 1]``.
    """

    R: np.ndarray
    S: np.ndarray
    c1: float
    c2: float

    def objective(self, vbar: np.ndarray) -> float:
        qr = np.vdot(vbar, self.R @ vbar).real
        qs = np.vdot(vbar, self.S @ vbar).real
        return float((qs + self.c2) * (qr + self.c1))

    def gradient_matrix(self, vbar0: np.ndarray) -> np.ndarray:
        """Hermitian ``T`` with ``T vbar0`` the conjugate gradient of F at ``vbar0``."""
        Rv = self.R @ vbar0
        Sv = self.S @ vbar0
        return (np.outer(Rv, Sv.conj()) + np.outer(Sv, Rv.conj())
                + self.c2 * self.R + self.c1 * self.S)

    def curvature_bound(self) -> float:
        """A Lipschitz constant of the gradient valid on ``||vbar||^2 <= N + 1``."""
        n = self.R.shape[0]
        nr = np.linalg.norm(self.R, 2)
        ns = np.linalg.norm(self.S, 2)
        fr = nr * n + self.c1
        fs = ns * n + self.c2
        return float(2 * nr * fs + 2 * ns * fr + 8 * nr * ns * n)


def _block(phi: np.ndarray, const) -> np.ndarray:
    """``[[phi phi^H, phi const^H], [const phi^H, 0]]``."""
    n = phi.shape[0]
    phi = phi.reshape(n, -1)
    const = np.atleast_1d(const).reshape(1, -1)
    out = np.zeros((n + 1, n + 1), complex)
    out[:n, :n] = phi @ phi.conj().T
    out[:n, n] = (phi @ const.conj().T)[:, 0]
    out[n, :n] = out[:n, n].conj()
    return out


def build_quartic(channels: ChannelSet) -> QuarticForm:
    _check_single(channels)
    h_ti = channels.h_TI[0]
    phi_cit = h_ti.conj()[:, None] * channels.H_CI
    phi_tir = channels.H_RI[:, 0].conj() * h_ti
    h_ct = channels.h_CT[0]
    h_tr = channels.h_TR[0, 0]
    return QuarticForm(
        R=_block(phi_cit, h_ct),
        S=_block(phi_tir, h_tr),
        c1=float(np.vdot(h_ct, h_ct).real),
        c2=float(abs(h_tr) ** 2),
    )


def vbar_from_phases(phases: PhaseConfig) -> np.ndarray:
    return np.append(phases.v.conj(), 1.0)


def phases_from_vbar(vbar: np.ndarray) -> PhaseConfig:
    return PhaseConfig(-np.angle(vbar[:-1]))


def first_minorizer(form: QuarticForm, vbar: np.ndarray, vbar0: np.ndarray, ell: float) -> float:
    """First-order expansion of F at ``vbar0`` minus ``ell/2 ||vbar - vbar0||^2``."""
    d = vbar - vbar0
    tv0 = form.gradient_matrix(vbar0) @ vbar0
    return float(form.objective(vbar0) + 2 * np.vdot(tv0, d).real
                 - ell / 2 * np.vdot(d, d).real)


def minorizer_matrix(form: QuarticForm, vbar0: np.ndarray, ell: float) -> np.ndarray:
    """``U`` such that the first minorizer is ``vvbar^H U vvbar + const`` (times ell/2)."""
    n = vbar0.size
    T = form.gradient_matrix(vbar0)
    b = -(2.0 / ell) * (T @ vbar0) - vbar0
    U = np.zeros((n + 1, n + 1), complex)
    U[:n, :n] = -np.eye(n)
    U[:n, n] = -b
    U[n, :n] = -b.conj()
    return U


def second_minorizer(U: np.ndarray, vv: np.ndarray, vv0: np.ndarray, lam_min: float) -> float:
    """Lower bound on ``vv^H U vv`` that touches it at ``vv0``."""
    X = lam_min * np.eye(U.shape[0])
    return float(np.vdot(vv, X @ vv).real + 2 * np.vdot(vv, (U - X) @ vv0).real
                 + np.vdot(vv0, (X - U) @ vv0).real)


@dataclass
class MmState:
    v_bar0: np.ndarray
    T: Optional[np.ndarray] = None
    U: Optional[np.ndarray] = None
    lambda_minus: float = np.nan
    objective_trace: List[float] = field(default_factory=list)


def mm_step(state: MmState, form: QuarticForm, ell: float) -> MmState:
    """One closed-form MM update of the phases.

    The two pinned entries of the extended vector are reset to 1 after the
    elementwise phase extraction, which is the exact maximizer of the linear
    surrogate under those constraints.
    """
    vbar0 = state.v_bar0
    n = vbar0.size
    U = minorizer_matrix(form, vbar0, ell)
    lam = float(np.linalg.eigvalsh(U)[0])
    vv0 = np.append(vbar0, 1.0)
    y = (U - lam * np.eye(n + 1)) @ vv0
    vv = np.exp(1j * np.angle(y))
    vbar = vv[:n].copy()
    vbar[n - 1] = 1.0
    trace = list(state.objective_trace)
    if not trace:
        trace.append(form.objective(vbar0))
    trace.append(form.objective(vbar))
    return MmState(v_bar0=vbar, T=form.gradient_matrix(vbar0), U=U, lambda_minus=lam,
                   objective_trace=trace)


def _rel_change(new: float, old: float) -> float:
    return abs(new - old) / max(abs(old), 1e-30)


@dataclass
class SingleTagResult:
    phases: PhaseConfig
    power: float
    trace: List[float]
    iterations: int
    converged: bool


def mm_optimize(channels: ChannelSet, scenario: Scenario,
                rng: Optional[np.random.Generator] = None,
                init: Optional[PhaseConfig] = None, max_iters: int = 5000) -> SingleTagResult:
    """Maximize the cascaded gain with the MM iteration, then apply the closed-form power.

    Starts from ``init`` or from random phases drawn from ``rng``.  If a step
    ever lowers the objective (``ell`` too small to be a curvature bound),
    the step is discarded and ``ell`` is raised tenfold.
    """
    _check_single(channels)
    form = build_quartic(channels)
    if init is None:
        rng = rng if rng is not None else np.random.default_rng()
        init = PhaseConfig.random(channels.N, rng)
    ell = scenario.lipschitz_ell
    state = MmState(v_bar0=vbar_from_phases(init))
    f_prev = form.objective(state.v_bar0)
    trace = [f_prev]
    converged = False
    it = 0
    while it < max_iters:
        it += 1
        new = mm_step(MmState(v_bar0=state.v_bar0), form, ell)
        f_new = new.objective_trace[-1]
        if f_new < f_prev * (1 - 1e-12):
            log.warning("MM step decreased objective; raising ell to %.3g", ell * 10)
            ell *= 10
            continue
        state = new
        trace.append(f_new)
        if _rel_change(f_new, f_prev) < scenario.conv_eps:
            converged = True
            break
        f_prev = f_new
    phases = phases_from_vbar(state.v_bar0)
    power = min_power_given_phases(channels, phases, scenario.gamma_th, scenario.noise_power,
                                   scenario.b_mag_sq)
    return SingleTagResult(phases, power, trace, it, converged)


# --------------------------------------------------------------------------
# successive refinement


def sr_decompose(channels: ChannelSet, w: np.ndarray, phases, n: int) -> Tuple[complex, complex, complex]:
    """Coefficients of ``F(s) = |h1 s^2 + h_sigma s + h4|^2`` for element ``n``."""
    _check_single(channels)
    v = phases.v if isinstance(phases, PhaseConfig) else np.asarray(phases, complex)
    a = channels.H_RI[:, 0].conj() * channels.h_TI[0]
    c = channels.h_TI[0].conj() * (channels.H_CI @ w)
    A = a @ v + channels.h_TR[0, 0]
    B = c @ v + channels.h_CT[0] @ w
    return _coeffs(a[n], c[n], A - a[n] * v[n], B - c[n] * v[n])


def _coeffs(an, cn, a_rest, b_rest):
    return an * cn, an * b_rest + cn * a_rest, a_rest * b_rest


def sr_objective(dec, theta):
    h1, hs, h4 = dec
    s = np.exp(1j * np.asarray(theta))
    return np.abs(h1 * s * s + hs * s + h4) ** 2


def phase_grid(T: float) -> np.ndarray:
    return np.arange(0.0, TWO_PI - 1e-12, T)


def sr_step(dec, mode: str = "exact", T: float = TWO_PI / 360,
            grid: Optional[np.ndarray] = None) -> float:
    """Best phase for one element: grid search (``exact``) or the dominant-term closed form."""
    if mode == "approx":
        theta_s4 = np.angle(dec[1] * np.conj(dec[2]))
        return float(np.mod(TWO_PI - theta_s4, TWO_PI))
    if mode != "exact":
        raise ValueError(f"unknown SR mode {mode!r}")
    grid = phase_grid(T) if grid is None else grid
    return float(grid[np.argmax(sr_objective(dec, grid))])


def sr_sweep(channels: ChannelSet, w: np.ndarray, theta: np.ndarray, mode: str, T: float,
             trace: Optional[list] = None) -> np.ndarray:
    """One pass over all elements, in order; updates ``theta`` in place.

    A candidate is accepted only if it does not lower F, so F is
    nondecreasing across updates.
    """
    a = channels.H_RI[:, 0].conj() * channels.h_TI[0]
    c = channels.h_TI[0].conj() * (channels.H_CI @ w)
    v = np.exp(1j * theta)
    A = a @ v + channels.h_TR[0, 0]
    B = c @ v + channels.h_CT[0] @ w
    grid = phase_grid(T)
    for n in range(theta.size):
        a_rest = A - a[n] * v[n]
        b_rest = B - c[n] * v[n]
        dec = _coeffs(a[n], c[n], a_rest, b_rest)
        cand = sr_step(dec, mode, T, grid)
        if sr_objective(dec, cand) > sr_objective(dec, theta[n]):
            theta[n] = cand
            v[n] = np.exp(1j * cand)
        A = a_rest + a[n] * v[n]
        B = b_rest + c[n] * v[n]
        if trace is not None:
            trace.append(float(abs(A * B) ** 2))
    return theta


def sr_optimize(channels: ChannelSet, scenario: Scenario, mode: str = "exact",
                init: Optional[PhaseConfig] = None, max_outer: int = 100,
                max_sweeps: int = 200) -> SingleTagResult:
    """Alternate phase sweeps with MRT until the transmit power settles."""
    _check_single(channels)
    theta = (init.theta.copy() if init is not None else np.zeros(channels.N))
    T = scenario.sr_precision_T
    eps = scenario.conv_eps
    trace: List[float] = []
    power = min_power_given_phases(channels, PhaseConfig(theta), scenario.gamma_th,
                                   scenario.noise_power, scenario.b_mag_sq)
    converged = False
    sweeps = 0
    for outer in range(max_outer):
        w = mrt_beamformer(channels, PhaseConfig(theta), 1.0)
        f_old = None
        for _ in range(max_sweeps):
            sweeps += 1
            sr_sweep(channels, w, theta, mode, T, trace)
            f_new = trace[-1]
            if f_old is not None and _rel_change(f_new, f_old) < eps:
                break
            f_old = f_new
        new_power = min_power_given_phases(channels, PhaseConfig(theta), scenario.gamma_th,
                                           scenario.noise_power, scenario.b_mag_sq)
        done = _rel_change(new_power, power) < eps
        power = new_power
        if done:
            converged = True
            break
    return SingleTagResult(PhaseConfig(theta), power, trace, sweeps, converged)

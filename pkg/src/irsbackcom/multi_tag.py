"""Multi-tag, multi-antenna reader: alternating optimization of (w, Theta, alpha, G).

Each outer iteration solves the relaxed beamforming SDP (with Gaussian
randomization), updates the IRS phases by either the MM/SDR routine or
successive refinement, picks splitting coefficients inside their feasible
interval and sets matched-filter combiners.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .channel import ChannelSet, Scenario
from .sdp import (OPTIMAL, Constraint, SdpProblem, gaussian_randomize,
                  scale_to_most_violated, solve_sdp)
from .signal import (DesignPoint, PhaseConfig, composite_ce_tag, composite_tag_reader,
                     feasibility_report)
from .single_tag import QuarticForm, _block, _coeffs, _rel_change, phase_grid, sr_objective

log = logging.getLogger(__name__)


class InfeasibleError(RuntimeError):
    """No transmit beamformer satisfies the constraints."""


@dataclass
class AoConfig:
    phase_method: str = "sr"
    max_outer_iters: int = 30
    eps: float = 1e-4
    sr_precision_T: float = 2 * np.pi / 360
    rand_count_R: int = 200
    mm_max_inner: int = 10
    sr_max_sweeps: int = 50
    warm_start: bool = True

    def __post_init__(self):
        if self.phase_method not in ("mm", "sr", "fixed"):
            raise ValueError(f"phase_method must be 'mm', 'sr' or 'fixed', got {self.phase_method!r}")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if 2 * np.pi / self.sr_precision_T < 8:
            raise ValueError("sr_precision_T must split the circle into at least 8 steps")

    @classmethod
    def from_scenario(cls, scenario: Scenario, **kw) -> "AoConfig":
        base = dict(eps=scenario.conv_eps, sr_precision_T=scenario.sr_precision_T,
                    rand_count_R=scenario.rand_count_R)
        base.update(kw)
        return cls(**base)


# --------------------------------------------------------------------------
# per-tag quadratic forms


@dataclass
class TagQuadratics:
    """``|g^H h_2|^2 = vbar^H A vbar + |b|^2`` and ``|h_1 w|^2 = vbar^H C vbar + |d|^2``."""

    A: np.ndarray
    C: np.ndarray
    a: np.ndarray
    b: complex
    c: np.ndarray
    d: complex

    def quartic(self) -> QuarticForm:
        return QuarticForm(R=self.C, S=self.A, c1=abs(self.d) ** 2, c2=abs(self.b) ** 2)


def _tag_vectors(channels: ChannelSet, w: np.ndarray, g: np.ndarray, k: int):
    a = (channels.H_RI @ g).conj() * channels.h_TI[k]
    b = np.vdot(g, channels.h_TR[k])
    c = channels.h_TI[k].conj() * (channels.H_CI @ w)
    d = channels.h_CT[k] @ w
    return a, b, c, d


def build_tag_quadratics(channels: ChannelSet, w: np.ndarray, combiner: np.ndarray,
                         k: int) -> TagQuadratics:
    a, b, c, d = _tag_vectors(channels, w, combiner, k)
    return TagQuadratics(A=_block(a, b), C=_block(c, d), a=a, b=b, c=c, d=d)


# --------------------------------------------------------------------------
# transmit beamforming


def _snr_requirement(scenario: Scenario, alpha: float, g: np.ndarray) -> float:
    """Required ``|g^H h_2|^2 |h_1 w|^2`` for tag SNR to reach the target."""
    return scenario.gamma_th * scenario.noise_power * np.vdot(g, g).real / (alpha * scenario.b_mag_sq)


def _beam_constraints(channels, phases, alphas, combiners, scenario):
    """``(Q, rhs)`` pairs with ``Re w^H Q w >= rhs`` for every tag."""
    out = []
    for k in range(channels.K):
        h1 = composite_ce_tag(channels, phases, k)
        h2 = composite_tag_reader(channels, phases, k)
        H1 = np.outer(h1.conj(), h1)
        gain = abs(np.vdot(combiners[k], h2)) ** 2
        out.append((gain * H1, _snr_requirement(scenario, alphas[k], combiners[k])))
        if scenario.xi_watts > 0:
            out.append(((1 - alphas[k]) * scenario.eta * H1, scenario.xi_watts))
    return out


@dataclass
class BeamformingResult:
    w: np.ndarray
    sdr_power: float
    status: str


def solve_tx_beamforming(channels: ChannelSet, phases: PhaseConfig, alphas, combiners,
                         scenario: Scenario, rng: Optional[np.random.Generator] = None,
                         count_R: Optional[int] = None,
                         incumbent: Optional[np.ndarray] = None) -> BeamformingResult:
    """Relaxed beamforming SDP followed by randomization and constraint scaling.

    ``incumbent`` (a previous beamformer) joins the randomized candidates, so
    the returned power never exceeds its rescaled power.
    """
    rng = rng if rng is not None else np.random.default_rng()
    R = count_R or scenario.rand_count_R
    L = channels.L
    cons = _beam_constraints(channels, phases, alphas, combiners, scenario)
    for Q, rhs in cons:
        if rhs > 0 and np.real(np.trace(Q)) <= 0:
            raise InfeasibleError("a tag has zero cascaded channel")
    prob = SdpProblem(np.eye(L), [Constraint(Q, ">=", rhs) for Q, rhs in cons])
    sol = solve_sdp(prob)
    if sol.status != OPTIMAL and sol.status != "max_iter":
        raise InfeasibleError(f"beamforming SDP status {sol.status}")

    def score(w):
        ws = scale_to_most_violated(w, cons)
        return -np.inf if ws is None else -np.vdot(ws, ws).real

    res = gaussian_randomize(sol.X, R, score, rng=rng)
    best = scale_to_most_violated(res.vector, cons)
    if incumbent is not None:
        inc = scale_to_most_violated(incumbent, cons)
        if inc is not None and (best is None or np.vdot(inc, inc).real < np.vdot(best, best).real):
            best = inc
    if best is None:
        raise InfeasibleError("no usable beamforming direction")
    return BeamformingResult(best, float(np.real(np.trace(sol.X))), sol.status)


# --------------------------------------------------------------------------
# splitting coefficients and combiners


def alpha_interval(channels: ChannelSet, w: np.ndarray, phases, combiner: np.ndarray,
                   k: int, scenario: Scenario) -> Tuple[float, float]:
    """Feasible range of the splitting coefficient of tag ``k`` for fixed ``w``, ``Theta``, ``g``.

    ``w`` may also be a PSD matrix ``W``.
    """
    h1 = composite_ce_tag(channels, phases, k)
    if w.ndim == 2:
        incident = float(np.real(h1 @ w @ h1.conj()))
    else:
        incident = float(abs(h1 @ w) ** 2)
    gain = abs(np.vdot(combiner, composite_tag_reader(channels, phases, k))) ** 2
    gg = np.vdot(combiner, combiner).real
    if incident <= 0 or gain <= 0:
        raise ValueError("denominators must be positive")
    lo = scenario.gamma_th * scenario.noise_power * gg / (scenario.b_mag_sq * incident * gain)
    hi = 1.0 - scenario.xi_watts / (scenario.eta * incident)
    return lo, hi


def optimal_combiner(channels: ChannelSet, phases, w: np.ndarray, k: int) -> np.ndarray:
    """Matched filter ``h_2 (h_1 w)`` normalized to unit length."""
    g = composite_tag_reader(channels, phases, k) * (composite_ce_tag(channels, phases, k) @ w)
    n = np.linalg.norm(g)
    if n == 0:
        raise ValueError("cascaded channel is zero")
    return g / n


def normalize_residuals(residual) -> np.ndarray:
    """Affine map of the positive entries onto [0, 1]; everything else becomes 0.

    A lone positive value (or all-equal positives) maps to 1.
    """
    r = np.asarray(residual, dtype=float)
    out = np.zeros_like(r)
    pos = r > 0
    if not pos.any():
        return out
    lo, hi = r[pos].min(), r[pos].max()
    out[pos] = 1.0 if hi == lo else (r[pos] - lo) / (hi - lo)
    return out


# --------------------------------------------------------------------------
# phase updates


def _tag_margins(channels, v, w, alphas, combiners, scenario):
    """SNR and circuit margins (power units) for a batch of coefficient vectors.

    ``v`` has shape (N, R); returns two (K, R) arrays.
    """
    K = channels.K
    S = np.empty((K, v.shape[1]))
    C = np.empty((K, v.shape[1]))
    for k in range(K):
        a, b, c, d = _tag_vectors(channels, w, combiners[k], k)
        gh2 = a @ v + b
        h1w = c @ v + d
        gg = np.vdot(combiners[k], combiners[k]).real
        S[k] = (alphas[k] * scenario.b_mag_sq * np.abs(gh2 * h1w) ** 2 / gg
                - scenario.gamma_th * scenario.noise_power)
        C[k] = (1 - alphas[k]) * scenario.eta * np.abs(h1w) ** 2 - scenario.xi_watts
    return S, C


@dataclass
class PhaseUpdate:
    phases: PhaseConfig
    stalled: bool = False
    inner_iterations: int = 0
    objective_trace: List[float] = field(default_factory=list)


def phase_update_mm(channels: ChannelSet, w: np.ndarray, alphas, combiners,
                    scenario: Scenario, rng: Optional[np.random.Generator] = None,
                    init: Optional[PhaseConfig] = None, count_R: Optional[int] = None,
                    max_inner: int = 10, eps: Optional[float] = None) -> PhaseUpdate:
    """MM/SDR phase update.

    Each tag's quartic SNR constraint is replaced by its quadratic minorizer
    at the current point and lifted to a PSD matrix of size N + 2 (plus one
    diagonal entry per circuit slack variable when ``xi > 0``).  The SDP
    maximizes the total circuit slack; randomized unit-modulus candidates are
    checked against the exact constraints and the feasible one with the
    largest worst-tag relative surplus (SNR, or circuit where that is
    tighter) becomes the next expansion point.
    """
    rng = rng if rng is not None else np.random.default_rng()
    R = count_R or scenario.rand_count_R
    eps = scenario.conv_eps if eps is None else eps
    K, N = channels.K, channels.N
    ell = scenario.lipschitz_ell
    passive = scenario.xi_watts > 0
    quads = [build_tag_quadratics(channels, w, combiners[k], k) for k in range(K)]
    forms = [q.quartic() for q in quads]
    n_v = N + 2
    n = n_v + (K if passive else 0)

    theta = (init.theta.copy() if init is not None else rng.uniform(0, 2 * np.pi, N))
    vbar0 = np.append(np.exp(-1j * theta), 1.0)

    def margins(vs):
        return _tag_margins(channels, vs, w, alphas, combiners, scenario)

    need_s = scenario.gamma_th * scenario.noise_power

    def surplus(S, C):
        # relative margin of the tighter constraint of the worst tag: this is
        # what the rescaling in the next beamforming step can give back
        rel = S / need_s
        if passive:
            rel = np.minimum(rel, C / scenario.xi_watts)
        return rel.min(axis=0)

    S0, C0 = margins(np.exp(1j * theta)[:, None])
    best_obj = float(surplus(S0, C0)[0])
    trace = [best_obj]
    stalled = False
    it = 0
    for it in range(1, max_inner + 1):
        cons = [Constraint(np.r_[np.eye(n_v)[i], np.zeros(n - n_v)], "==", 1.0) for i in range(n_v)]
        for k in range(K):
            f = forms[k]
            T = f.gradient_matrix(vbar0)
            Tv = T @ vbar0
            # (ell/2) U_k and the minorizer's constant
            W = np.zeros((n, n), complex)
            W[: N + 1, : N + 1] = -ell / 2 * np.eye(N + 1)
            W[: N + 1, N + 1] = Tv + ell / 2 * vbar0
            W[N + 1, : N + 1] = W[: N + 1, N + 1].conj()
            const = f.objective(vbar0) - 2 * np.vdot(vbar0, Tv).real - ell / 2 * (N + 1)
            req = _snr_requirement(scenario, alphas[k], combiners[k])
            cons.append(Constraint(W, ">=", req - const))
            if passive:
                Cb = np.zeros((n, n), complex)
                Cb[: N + 1, : N + 1] = quads[k].C
                Cb[n_v + k, n_v + k] = -1.0 / ((1 - alphas[k]) * scenario.eta)
                rhs = scenario.xi_watts / ((1 - alphas[k]) * scenario.eta) - abs(quads[k].d) ** 2
                cons.append(Constraint(Cb, ">=", rhs))
        cost = np.zeros((n, n), complex)
        if passive:
            cost[n_v:, n_v:] = np.eye(K)
        sol = solve_sdp(SdpProblem(cost, cons, maximize=True))
        if sol.status == "infeasible":
            stalled = True
            break
        V = sol.X[:n_v, :n_v]

        def to_v(cand):
            # phases relative to the entry carrying the direct links
            return (cand[:N] * np.conj(cand[N])).conj()

        # batch-evaluate candidates once, then hand scores to the randomizer
        cache = {}

        def evaluate(cand):
            S, C = margins(to_v(cand)[:, None])
            ok = np.all(S >= 0) and (not passive or np.all(C >= 0))
            cache[id(cand)] = ok
            return float(surplus(S, C)[0])

        res = gaussian_randomize(V, R, evaluate,
                                 lambda cand: cache.pop(id(cand), False),
                                 rng=rng, unit_modulus=True)
        if not res.feasible or res.score <= best_obj:
            stalled = not res.feasible
            break
        prev = best_obj
        best_obj = res.score
        v_new = to_v(res.vector)
        theta = np.mod(np.angle(v_new), 2 * np.pi)
        vbar0 = np.append(v_new.conj(), 1.0)
        trace.append(best_obj)
        if _rel_change(best_obj, prev) < eps:
            break
    return PhaseUpdate(PhaseConfig(theta), stalled, it, trace)


def _ladder_choice(S_min: np.ndarray, C_min: Optional[np.ndarray]) -> int:
    """Index chosen by the S+/C+ fallback rules."""
    s_plus = normalize_residuals(S_min)
    if C_min is None:
        return int(np.argmax(s_plus)) if s_plus.any() else int(np.argmax(S_min))
    c_plus = normalize_residuals(C_min)
    prod = s_plus * c_plus
    if prod.any():
        return int(np.argmax(prod))
    if s_plus.any():
        return int(np.argmax(c_plus)) if c_plus.any() else int(np.argmax(C_min))
    return int(np.argmax(s_plus)) if s_plus.any() else int(np.argmax(S_min))


def phase_update_sr(channels: ChannelSet, w: np.ndarray, alphas, combiners,
                    scenario: Scenario, init: PhaseConfig, T: Optional[float] = None,
                    eps: Optional[float] = None, max_sweeps: int = 50) -> PhaseUpdate:
    """Successive refinement over a phase grid with worst-tag residuals.

    For element ``n`` the SNR and circuit margins of every tag are evaluated
    on the current phase followed by the grid ``0:T:2pi``; the worst-tag
    margins are normalized and combined by the S+/C+ rules.  The current
    phase is listed first so ties keep it.
    """
    T = scenario.sr_precision_T if T is None else T
    eps = scenario.conv_eps if eps is None else eps
    K, N = channels.K, channels.N
    passive = scenario.xi_watts > 0
    grid = phase_grid(T)
    theta = init.theta.copy()
    v = np.exp(1j * theta)
    vecs = [_tag_vectors(channels, w, combiners[k], k) for k in range(K)]
    gg = np.array([np.vdot(g, g).real for g in combiners])
    scale_s = np.asarray(alphas) * scenario.b_mag_sq / gg
    need_s = scenario.gamma_th * scenario.noise_power
    scale_c = (1 - np.asarray(alphas)) * scenario.eta

    def min_snr(theta_):
        vv = np.exp(1j * theta_)
        return min(scale_s[k] * abs((a @ vv + b) * (c @ vv + d)) ** 2
                   for k, (a, b, c, d) in enumerate(vecs))

    trace = [min_snr(theta)]
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        A = np.array([a @ v + b for a, b, _, _ in vecs])
        B = np.array([c @ v + d for _, _, c, d in vecs])
        for n in range(N):
            # incumbent first so ties keep it
            cand = np.concatenate(([theta[n]], grid))
            S = np.empty((K, cand.size))
            C = np.empty((K, cand.size)) if passive else None
            a_rest = np.empty(K, complex)
            b_rest = np.empty(K, complex)
            for k, (a, _, c, _) in enumerate(vecs):
                a_rest[k] = A[k] - a[n] * v[n]
                b_rest[k] = B[k] - c[n] * v[n]
                dec = _coeffs(a[n], c[n], a_rest[k], b_rest[k])
                S[k] = scale_s[k] * sr_objective(dec, cand) - need_s
                if passive:
                    C[k] = (scale_c[k] * np.abs(c[n] * np.exp(1j * cand) + b_rest[k]) ** 2
                            - scenario.xi_watts)
            idx = _ladder_choice(S.min(axis=0), C.min(axis=0) if passive else None)
            if idx > 0:
                theta[n] = cand[idx]
                v[n] = np.exp(1j * theta[n])
            for k, (a, _, c, _) in enumerate(vecs):
                A[k] = a_rest[k] + a[n] * v[n]
                B[k] = b_rest[k] + c[n] * v[n]
        trace.append(min_snr(theta))
        if _rel_change(trace[-1], trace[-2]) < eps:
            break
    return PhaseUpdate(PhaseConfig(theta), False, sweeps, trace)


# --------------------------------------------------------------------------
# alternating optimization


@dataclass
class SolveReport:
    status: str  # "converged", "max_iter", "stalled" or "infeasible"
    power: float
    point: Optional[DesignPoint]
    power_trace: List[float]
    iterations: int
    residuals: Optional[object] = None
    alpha_infeasible: int = 0
    sdr_trace: List[float] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.status != "infeasible"


def _random_combiners(K: int, M: int, rng) -> np.ndarray:
    G = rng.standard_normal((K, M)) + 1j * rng.standard_normal((K, M))
    return G / np.linalg.norm(G, axis=1, keepdims=True)


def ao_solve(channels: ChannelSet, scenario: Scenario, config: Optional[AoConfig] = None,
             rng: Optional[np.random.Generator] = None,
             init_phases: Optional[PhaseConfig] = None) -> SolveReport:
    """Minimize ``||w||^2`` over ``(w, Theta, alpha, G)`` by alternating updates.

    Any outer update that would raise the transmit power is rejected and the
    loop stops with status ``"stalled"``, so the power trace is nonincreasing.
    """
    config = config if config is not None else AoConfig.from_scenario(scenario)
    rng = rng if rng is not None else np.random.default_rng()
    K, M, N = channels.K, channels.M, channels.N
    passive = scenario.xi_watts > 0

    phases = init_phases.copy() if init_phases is not None else PhaseConfig.random(N, rng)
    alphas = np.full(K, 0.5 if passive else 1.0)
    combiners = _random_combiners(K, M, rng)

    try:
        bf = solve_tx_beamforming(channels, phases, alphas, combiners, scenario, rng,
                                  config.rand_count_R)
    except InfeasibleError as exc:
        log.info("infeasible at first beamforming solve: %s", exc)
        return SolveReport("infeasible", np.inf, None, [], 0)
    w = bf.w
    # initial alphas/combiners are arbitrary: tighten them before iterating
    combiners = np.array([optimal_combiner(channels, phases, w, k) for k in range(K)])
    power = float(np.vdot(w, w).real)
    trace = [power]
    sdr_trace = [bf.sdr_power]
    status = "max_iter"
    alpha_bad = 0
    it = 0
    for it in range(1, config.max_outer_iters + 1):
        if config.phase_method == "fixed":
            upd = PhaseUpdate(phases.copy())
        elif config.phase_method == "mm":
            upd = phase_update_mm(channels, w, alphas, combiners, scenario, rng,
                                  init=phases if config.warm_start else None,
                                  count_R=config.rand_count_R, max_inner=config.mm_max_inner,
                                  eps=config.eps)
        else:
            upd = phase_update_sr(channels, w, alphas, combiners, scenario, init=phases,
                                  T=config.sr_precision_T, eps=config.eps,
                                  max_sweeps=config.sr_max_sweeps)
        new_phases = upd.phases
        new_alphas = alphas.copy()
        if passive:
            for k in range(K):
                lo, hi = alpha_interval(channels, w, new_phases, combiners[k], k, scenario)
                if lo > hi:
                    alpha_bad += 1
                    continue
                new_alphas[k] = 0.5 * (max(lo, 0.0) + min(hi, 1.0))
        new_comb = np.array([optimal_combiner(channels, new_phases, w, k) for k in range(K)])
        try:
            bf = solve_tx_beamforming(channels, new_phases, new_alphas, new_comb, scenario, rng,
                                      config.rand_count_R, incumbent=w)
        except InfeasibleError:
            status = "stalled"
            break
        new_power = float(np.vdot(bf.w, bf.w).real)
        if new_power > power * (1 + 1e-9):
            status = "stalled"
            break
        rel = _rel_change(new_power, power)
        w, phases, alphas, combiners, power = bf.w, new_phases, new_alphas, new_comb, new_power
        trace.append(power)
        sdr_trace.append(bf.sdr_power)
        if rel < config.eps:
            status = "converged"
            break
    combiners = np.array([optimal_combiner(channels, phases, w, k) for k in range(K)])
    point = DesignPoint(w=w, phases=phases, alphas=alphas, combiners=combiners)
    return SolveReport(status, power, point, trace, it,
                       feasibility_report(channels, point, scenario), alpha_bad, sdr_trace)

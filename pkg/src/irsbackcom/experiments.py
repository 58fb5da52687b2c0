"""Monte Carlo sweeps, baseline phase rules, normalized gains and range extension."""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .channel import (ChannelSet, Scenario, build_geometry, dbm_to_watts, direct_path_gain,
                      generate_channels, irs_hop_amplitude, _as_point)
from .multi_tag import AoConfig, InfeasibleError, ao_solve
from .signal import PhaseConfig
from .single_tag import (_check_single, _rel_change, min_power_given_phases, mm_optimize,
                         mrt_beamformer, sr_optimize)

METHODS = ("mm", "sr", "no_irs", "random_phase", "bench_c", "bench_d", "bench_e", "bench_f")
SWEEPABLE = ("tag_x", "N", "xi", "K")
CSV_HEADER = ["swept", "method", "mean_dbm", "std_db", "n_feasible", "n_total", "mean_iters",
              "seconds"]


@dataclass
class SweepSpec:
    swept_variable: str
    values: List[float]
    methods: List[str]
    realizations: int = 100
    master_seed: Optional[int] = 0

    def __post_init__(self):
        if self.swept_variable not in SWEEPABLE:
            raise ValueError(f"cannot sweep {self.swept_variable!r}; choose from {SWEEPABLE}")
        if len(self.values) == 0:
            raise ValueError("values must be nonempty")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown method(s) {bad}; choose from {METHODS}")
        if not self.methods:
            raise ValueError("methods must be nonempty")


@dataclass
class ResultRow:
    swept: float
    method: str
    mean_dbm: float
    std_db: float
    n_feasible: int
    n_total: int
    mean_iters: float
    seconds: float
    powers: np.ndarray = field(default=None, repr=False)  # per-realization, nan if infeasible
    alphas: np.ndarray = field(default=None, repr=False)

    def as_csv(self) -> List[str]:
        return [repr(float(self.swept)), self.method, repr(float(self.mean_dbm)),
                repr(float(self.std_db)), str(self.n_feasible), str(self.n_total),
                repr(float(self.mean_iters)), repr(float(self.seconds))]


# --------------------------------------------------------------------------
# scenario handling


def tag_circle(center, radius: float, K: int) -> List[List[float]]:
    """``K`` tags equally spaced on a circle, the first on the +x side."""
    c = np.asarray(center, float)[:2]
    ang = 2 * np.pi * np.arange(K) / K
    return [list(c + radius * np.array([np.cos(a), np.sin(a)])) for a in ang]


def apply_swept(scenario: Scenario, variable: str, value, tag_center=None,
                tag_radius: float = 5.0) -> Scenario:
    if variable == "tag_x":
        y = _as_point(scenario.tag_positions[0])[1]
        return scenario.with_changes(tag_positions=[[float(value), y]])
    if variable == "N":
        return scenario.with_changes(N=int(value))
    if variable == "xi":
        return scenario.with_changes(xi_watts=float(dbm_to_watts(value)))
    if variable == "K":
        center = tag_center if tag_center is not None else scenario.tag_positions[0]
        return scenario.with_changes(tag_positions=tag_circle(center, tag_radius, int(value)))
    raise ValueError(f"cannot sweep {variable!r}")


# --------------------------------------------------------------------------
# baselines


def _single_link_ce_tag(channels: ChannelSet, max_iters: int = 100, eps: float = 1e-8):
    """Alternate MRT and per-element alignment on the combined CE-tag link only."""
    theta = np.zeros(channels.N)
    w = mrt_beamformer(channels.without_irs(), PhaseConfig(theta), 1.0)
    last = 0.0
    for _ in range(max_iters):
        c = channels.h_TI[0].conj() * (channels.H_CI @ w)
        d = channels.h_CT[0] @ w
        theta = np.mod(np.angle(d) - np.angle(c), 2 * np.pi)
        w = mrt_beamformer(channels, PhaseConfig(theta), 1.0)
        gain = abs((c * np.exp(1j * theta)).sum() + d)
        if _rel_change(gain, last) < eps:
            break
        last = gain
    return PhaseConfig(theta)


def baseline_phases(kind: str, channels: ChannelSet, scenario: Optional[Scenario] = None,
                    rng: Optional[np.random.Generator] = None) -> PhaseConfig:
    """Phase rules for the comparison schemes.

    ``random`` draws i.i.d. uniform phases.  ``c``/``e`` align the IRS to the
    combined CE-tag link only (alternating with MRT); ``d``/``f`` align it to
    the combined tag-reader link in closed form.  ``e``/``f`` share the
    phases of ``c``/``d``; they differ only in how power is evaluated (see
    :func:`baseline_power`).
    """
    if kind == "random":
        rng = rng if rng is not None else np.random.default_rng()
        return PhaseConfig.random(channels.N, rng)
    if kind not in ("c", "d", "e", "f"):
        raise ValueError(f"unknown baseline kind {kind!r}")
    if channels.K != 1 or channels.M != 1:
        raise ValueError("benchmarks c-f need a single tag and a single-antenna reader")
    if kind in ("c", "e"):
        return _single_link_ce_tag(channels)
    # each element's T-I-R term conj(H_RI) e^{j theta} h_TI lines up with h_TR
    term = channels.H_RI[:, 0].conj() * channels.h_TI[0]
    return PhaseConfig(np.angle(channels.h_TR[0, 0]) - np.angle(term))


def baseline_power(kind: str, channels: ChannelSet, scenario: Scenario,
                   phases: PhaseConfig) -> float:
    """Minimum MRT power for a baseline's phases.

    ``e`` drops the IRS term from the tag-reader link and ``f`` drops it from
    the CE-tag link, i.e. the power the single-reflection model would need.
    """
    ch = channels
    if kind == "e":
        ch = channels.with_tag_reader_irs_removed()
    elif kind == "f":
        ch = channels.with_ce_tag_irs_removed()
    return min_power_given_phases(ch, phases, scenario.gamma_th, scenario.noise_power,
                                  scenario.b_mag_sq)


def _unit(x):
    # unit magnitude, phase kept; exact zeros (removed links) stay zero
    x = np.asarray(x)
    mag = np.abs(x)
    return np.divide(x, mag, out=np.zeros_like(x), where=mag > 0)


def normalized_gains(channels: ChannelSet, phases, w: np.ndarray):
    """Alignment of the IRS with each combined link, ignoring path loss.

    Every channel entry is replaced by its unit-magnitude version; ``w`` is
    normalized to unit length.  Returns ``(h_CIT_hat, h_TIR_hat)``.
    """
    _check_single(channels)
    v = phases.v if isinstance(phases, PhaseConfig) else np.asarray(phases)
    w = np.asarray(w) / np.linalg.norm(w)
    hti = _unit(channels.h_TI[0])
    h1 = (hti.conj() * v) @ _unit(channels.H_CI) + _unit(channels.h_CT[0])
    h2 = (_unit(channels.H_RI[:, 0]).conj() * v) @ hti + _unit(channels.h_TR[0, 0])
    return float(abs(h1 @ w)), float(abs(h2))


# --------------------------------------------------------------------------
# range extension from deterministic path loss


def _link_budget(scenario: Scenario, geometry, reader) -> float:
    """Product of the two combined-link power gains with all IRS terms phase-aligned."""
    lam, dl = scenario.wavelength, scenario.pathloss_exponent
    ce = _as_point(scenario.ce_position)
    tag = _as_point(scenario.tag_positions[0])
    reader = _as_point(reader)
    g1 = direct_path_gain(np.linalg.norm(tag - ce), dl, lam) ** 2
    g2 = direct_path_gain(np.linalg.norm(reader - tag), dl, lam) ** 2
    if scenario.N:
        hop_tag = irs_hop_amplitude(tag, geometry, scenario)
        g1 += np.sum(irs_hop_amplitude(ce, geometry, scenario) * hop_tag) ** 2
        g2 += np.sum(hop_tag * irs_hop_amplitude(reader, geometry, scenario)) ** 2
    return float(g1 * g2)


class BracketError(RuntimeError):
    pass


def range_improvement(scenario: Scenario, N: int, fixed_power: float,
                      rtol: float = 1e-9, max_range: float = 1e5) -> float:
    """Extra tag-reader distance an ``N``-element IRS buys at fixed CE power.

    The reader is moved away from the tag along the tag-reader line until the
    IRS-aided SNR (all reflections phase-aligned, MRT at the CE) drops to the
    SNR the no-IRS system has at the original position.  Solved by bisection.
    """
    if fixed_power <= 0:
        raise ValueError("fixed_power must be positive")
    sc = scenario.with_changes(N=int(N))
    geo = build_geometry(sc)
    tag = _as_point(sc.tag_positions[0])
    reader0 = _as_point(sc.reader_position)
    u = (reader0 - tag) / np.linalg.norm(reader0 - tag)

    def snr(budget):
        return fixed_power * sc.L * sc.b_mag_sq * budget / sc.noise_power

    target = snr(_link_budget(sc.with_changes(N=0), None, reader0))

    def excess(delta):
        return snr(_link_budget(sc, geo, reader0 + delta * u)) / target - 1.0

    lo, hi = 0.0, 1.0
    if excess(lo) <= 0:
        return 0.0
    while excess(hi) > 0:
        lo, hi = hi, 2 * hi
        if hi > max_range:
            raise BracketError("no sign change in the SNR mismatch")
    while hi - lo > 1e-9 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
        if abs(excess(mid)) < rtol:
            return mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# one realization, one method


@dataclass
class Outcome:
    power: float  # watts; inf if infeasible
    iterations: int
    alphas: Optional[np.ndarray] = None
    phases: Optional[PhaseConfig] = None
    w: Optional[np.ndarray] = None


def _single_tag_mode(channels: ChannelSet, scenario: Scenario) -> bool:
    return channels.K == 1 and channels.M == 1 and scenario.xi_watts == 0


def _ao(channels, scenario, rng, method, phases=None) -> Outcome:
    rep = ao_solve(channels, scenario, AoConfig.from_scenario(scenario, phase_method=method),
                   rng, init_phases=phases)
    if not rep.feasible:
        return Outcome(np.inf, rep.iterations)
    return Outcome(rep.power, rep.iterations, rep.point.alphas, rep.point.phases, rep.point.w)


def run_method(method: str, channels: ChannelSet, scenario: Scenario,
               rng: np.random.Generator) -> Outcome:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    single = _single_tag_mode(channels, scenario)
    gam, noise, bsq = scenario.gamma_th, scenario.noise_power, scenario.b_mag_sq
    if method in ("mm", "sr"):
        if single:
            fn = mm_optimize if method == "mm" else sr_optimize
            res = fn(channels, scenario, rng=rng) if method == "mm" else fn(channels, scenario)
            w = mrt_beamformer(channels, res.phases, res.power)
            return Outcome(res.power, res.iterations, np.ones(1), res.phases, w)
        return _ao(channels, scenario, rng, method)
    if method in ("no_irs", "random_phase"):
        ch = channels.without_irs() if method == "no_irs" else channels
        ph = (PhaseConfig.zeros(channels.N) if method == "no_irs"
              else baseline_phases("random", channels, scenario, rng))
        if single:
            p = min_power_given_phases(ch, ph, gam, noise, bsq)
            return Outcome(p, 0, np.ones(1), ph, mrt_beamformer(ch, ph, p) if np.isfinite(p) else None)
        return _ao(ch, scenario, rng, "fixed", ph)
    kind = method[-1]
    if scenario.xi_watts != 0:
        raise ValueError("benchmarks c-f are defined for the semi-passive single-tag case")
    ph = baseline_phases(kind, channels, scenario, rng)
    return Outcome(baseline_power(kind, channels, scenario, ph), 0, np.ones(1), ph)


# --------------------------------------------------------------------------
# sweeps


def _realization(args):
    scenario, methods, seed_key = args
    geo = build_geometry(scenario)
    channels = generate_channels(scenario, geo, np.random.default_rng(seed_key))
    out = []
    for j, m in enumerate(methods):
        t0 = time.perf_counter()
        try:
            o = run_method(m, channels, scenario, np.random.default_rng(list(seed_key) + [1, j]))
        except InfeasibleError:
            o = Outcome(np.inf, 0)
        alpha = float(np.mean(o.alphas)) if o.alphas is not None else np.nan
        out.append((o.power, o.iterations, alpha, time.perf_counter() - t0))
    return out


def channel_seed(master_seed: int, value_index: int, realization: int):
    """Seed key of one channel draw.

    The key ignores the method, so every method sees the same channels.
    ``value_index`` is not part of the key either: the same fading draws are
    reused across swept values (common random numbers).
    """
    return [int(master_seed), int(realization)]


def aggregate(powers: np.ndarray, avg: str = "db"):
    """Mean and spread in dB over the feasible realizations.

    ``avg="db"`` reports the mean of the per-realization dB values;
    ``"linear"`` the dB of the mean linear power.  With one reader antenna the
    required power scales like ``1/|h_TR|^2`` whose expectation is infinite
    for Rician fading, so the linear mean is ruled by a few deep fades and
    does not settle as realizations grow.  The spread is always the standard
    deviation of the per-realization dB values.
    """
    if avg not in ("linear", "db"):
        raise ValueError("avg must be 'linear' or 'db'")
    p = np.asarray(powers, float)
    ok = np.isfinite(p) & (p > 0)
    if not ok.any():
        return np.nan, np.nan
    dbm = 10 * np.log10(p[ok] * 1e3)
    mean = 10 * np.log10(p[ok].mean() * 1e3) if avg == "linear" else dbm.mean()
    return float(mean), float(dbm.std())


def run_sweep(spec: SweepSpec, scenario: Scenario, jobs: int = 1, avg: str = "db",
              timing: bool = True, tag_center=None, tag_radius: float = 5.0,
              progress=None) -> List[ResultRow]:
    """One :class:`ResultRow` per (value, method), in that order."""
    rows: List[ResultRow] = []
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for vi, value in enumerate(spec.values):
            sc = apply_swept(scenario, spec.swept_variable, value, tag_center, tag_radius)
            sc.validate()
            tasks = [(sc, list(spec.methods), channel_seed(spec.master_seed, vi, i))
                     for i in range(spec.realizations)]
            results = list(pool.map(_realization, tasks)) if pool else [_realization(t) for t in tasks]
            for j, m in enumerate(spec.methods):
                powers = np.array([r[j][0] for r in results])
                iters = np.array([r[j][1] for r in results], float)
                alphas = np.array([r[j][2] for r in results])
                secs = float(sum(r[j][3] for r in results)) if timing else 0.0
                ok = np.isfinite(powers)
                mean, std = aggregate(powers, avg)
                rows.append(ResultRow(float(value), m, mean, std, int(ok.sum()), len(powers),
                                      float(iters[ok].mean()) if ok.any() else np.nan, secs,
                                      np.where(ok, powers, np.nan), alphas))
                if progress:
                    progress(rows[-1])
    finally:
        if pool:
            pool.shutdown()
    return rows


def write_csv(rows: Sequence[ResultRow], fh, header: bool = True):
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.as_csv())


def read_csv(fh) -> List[Dict]:
    out = []
    for rec in csv.DictReader(fh):
        d = dict(rec)
        for key in ("swept", "mean_dbm", "std_db", "mean_iters", "seconds"):
            d[key] = float(d[key])
        for key in ("n_feasible", "n_total"):
            d[key] = int(d[key])
        out.append(d)
    return out


def rows_to_csv_text(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()

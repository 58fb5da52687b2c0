"""Dense complex SDP solver and rank-one recovery.

``solve_sdp`` is an infeasible-start primal-dual path-following method
(HKM search direction, Mehrotra predictor-corrector) on the Hermitian PSD
cone, with ``>=`` constraints carried by a nonnegative slack block.  Sizes of
interest are tiny (n <= ~200), so everything is dense numpy.

Constraint matrices can be passed as 1-D arrays, meaning diagonal matrices;
the unit-diagonal constraints of phase-shift relaxations then cost O(n^2)
in the Schur complement instead of O(n^3).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


@dataclass
class Constraint:
    """``Re tr(A X) (>= | ==) b``; a 1-D ``A`` stands for ``diag(A)``."""

    A: np.ndarray
    sense: str
    b: float

    def __post_init__(self):
        if self.sense not in (">=", "=="):
            raise ValueError(f"sense must be '>=' or '==', got {self.sense!r}")
        self.A = np.asarray(self.A, dtype=complex)
        self.b = float(self.b)

    @property
    def is_diag(self) -> bool:
        return self.A.ndim == 1

    def dense(self) -> np.ndarray:
        return np.diag(self.A) if self.is_diag else self.A

    def value(self, X: np.ndarray) -> float:
        if self.is_diag:
            return float(np.real(self.A @ np.diag(X)))
        return float(np.real(np.vdot(self.A, X)))


@dataclass
class SdpProblem:
    """``min (or max) Re tr(C X)`` subject to ``constraints`` and ``X >= 0``."""

    cost: np.ndarray
    constraints: List[Constraint]
    maximize: bool = False

    def __post_init__(self):
        self.cost = np.asarray(self.cost, dtype=complex)
        n = self.cost.shape[0]
        if self.cost.shape != (n, n):
            raise ValueError("cost must be square")
        if not np.allclose(self.cost, self.cost.conj().T, atol=1e-12 * max(1, np.abs(self.cost).max())):
            raise ValueError("cost must be Hermitian")
        for c in self.constraints:
            shape = (n,) if c.is_diag else (n, n)
            if c.A.shape != shape:
                raise ValueError(f"constraint shape {c.A.shape} != {shape}")
            if not c.is_diag:
                scale = max(1.0, float(np.abs(c.A).max()))
                if not np.allclose(c.A, c.A.conj().T, atol=1e-12 * scale):
                    raise ValueError("constraint matrices must be Hermitian")
            elif np.abs(c.A.imag).max(initial=0) > 0:
                raise ValueError("diagonal constraint must be real")

    @property
    def n(self) -> int:
        return self.cost.shape[0]


@dataclass
class SdpSolution:
    X: np.ndarray
    y: np.ndarray  # multipliers, one per constraint (>= 0 for inequalities)
    Z: np.ndarray  # dual slack C - sum y_i A_i
    primal_obj: float
    dual_obj: float
    status: str
    iterations: int
    primal_residual: float = np.nan
    dual_residual: float = np.nan

    @property
    def gap(self) -> float:
        return abs(self.primal_obj - self.dual_obj)


def _herm(A):
    return 0.5 * (A + A.conj().T)


class _Ops:
    """Linear map ``X -> [Re tr(A_i X)]`` with its adjoint and the HKM Schur matrix."""

    def __init__(self, n: int, cons: Sequence[Constraint]):
        self.n = n
        self.m = len(cons)
        self.diag_idx = np.array([i for i, c in enumerate(cons) if c.is_diag], int)
        self.dense_idx = np.array([i for i, c in enumerate(cons) if not c.is_diag], int)
        self.Ad = (np.array([cons[i].A.real for i in self.diag_idx])
                   if self.diag_idx.size else np.zeros((0, n)))
        self.Ak = [cons[i].A for i in self.dense_idx]

    def apply(self, X):
        out = np.empty(self.m)
        if self.diag_idx.size:
            out[self.diag_idx] = self.Ad @ np.real(np.diag(X))
        for i, A in zip(self.dense_idx, self.Ak):
            out[i] = np.real(np.vdot(A, X))
        return out

    def adjoint(self, y):
        S = np.zeros((self.n, self.n), complex)
        if self.diag_idx.size:
            S[np.diag_indices(self.n)] += self.Ad.T @ y[self.diag_idx]
        for i, A in zip(self.dense_idx, self.Ak):
            S += y[i] * A
        return S

    def schur(self, X, Zi):
        """``M_ij = Re tr(A_i X A_j Z^{-1})``."""
        M = np.empty((self.m, self.m))
        di, ki = self.diag_idx, self.dense_idx
        if di.size:
            H = np.real(X * Zi.T)
            M[np.ix_(di, di)] = self.Ad @ H @ self.Ad.T
        for col, (j, A) in enumerate(zip(ki, self.Ak)):
            P = X @ A @ Zi
            if di.size:
                M[di, j] = self.Ad @ np.real(np.diag(P))
                M[j, di] = M[di, j]
            for i, B in zip(ki[: col + 1], self.Ak[: col + 1]):
                val = np.real(np.sum(B.T * P))
                M[i, j] = M[j, i] = val
        return M


def _max_step(X, dX):
    """Largest ``a <= 1/0.95`` keeping ``X + a dX`` PSD (X positive definite)."""
    try:
        Lc = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return 0.0
    Li = np.linalg.inv(Lc)
    lam = np.linalg.eigvalsh(_herm(Li @ dX @ Li.conj().T))[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(x, dx):
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


def solve_sdp(problem: SdpProblem, tol: float = 1e-7, max_iter: int = 100) -> SdpSolution:
    """Solve ``problem`` to relative accuracy ``tol``.

    Data are normalized (each constraint by its Frobenius norm, the cost by
    its own) before iterating; the returned objectives, multipliers and
    residuals are in the caller's scaling.
    """
    n = problem.n
    cons = problem.constraints
    m = len(cons)
    sign = -1.0 if problem.maximize else 1.0
    C = sign * problem.cost

    row_scale = np.array([max(np.linalg.norm(c.A), 1e-300) for c in cons])
    c_scale = float(np.linalg.norm(C)) or 1.0
    scaled = [Constraint(c.A / s, c.sense, c.b / s) for c, s in zip(cons, row_scale)]
    Cs = C / c_scale
    b = np.array([c.b for c in scaled])
    ineq = np.array([i for i, c in enumerate(scaled) if c.sense == ">="], int)
    p = ineq.size
    ops = _Ops(n, scaled)

    def A_full(X, x):
        r = ops.apply(X)
        r[ineq] -= x
        return r

    xi = max(10.0, np.sqrt(n), float(np.max(np.abs(b), initial=0)) * np.sqrt(n))
    X = xi * np.eye(n, dtype=complex)
    Z = xi * np.eye(n, dtype=complex)
    x = xi * np.ones(p)
    z = xi * np.ones(p)
    y = np.zeros(m)
    nb, nc = 1 + np.linalg.norm(b), 1 + np.linalg.norm(Cs)

    status = MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        rp = b - A_full(X, x)
        Rd = Cs - ops.adjoint(y) - Z
        rd_lp = y[ineq] - z  # LP cost is zero, slack column is -e_i
        pobj = float(np.real(np.vdot(Cs, X)))
        dobj = float(b @ y)
        mu = (float(np.real(np.vdot(X, Z))) + x @ z) / (n + p)
        pinf = np.linalg.norm(rp) / nb
        dinf = np.sqrt(np.linalg.norm(Rd) ** 2 + np.linalg.norm(rd_lp) ** 2) / nc
        rgap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        if pinf < tol and dinf < tol and rgap < tol:
            status = OPTIMAL
            break
        # Farkas-type certificate of primal infeasibility
        ny = np.linalg.norm(y)
        if ny > 1e8 * (1 + abs(pobj)) and dobj > 0:
            ycert = y / ny
            Aty = ops.adjoint(ycert)
            if np.linalg.eigvalsh(_herm(Aty))[-1] < 1e-6 and np.all(ycert[ineq] >= -1e-8) \
                    and b @ ycert > 1e-8:
                status = INFEASIBLE
                break

        Zi = np.linalg.inv(Z)
        Zi = _herm(Zi)
        M = ops.schur(X, Zi)
        if p:
            M[np.ix_(ineq, ineq)] += np.diag(x / z)
        try:
            Mf = np.linalg.cholesky(M + 1e-14 * np.trace(M) / m * np.eye(m))
            solve = lambda r: np.linalg.solve(Mf.conj().T, np.linalg.solve(Mf, r))  # noqa: E731
        except np.linalg.LinAlgError:
            Mp = np.linalg.pinv(M)
            solve = lambda r: Mp @ r  # noqa: E731

        def direction(sig_mu, corr_X=None, corr_x=None):
            # complementarity targets: X Z = sig_mu I (minus second-order corrections)
            Rc = sig_mu * Zi - X
            if corr_X is not None:
                Rc = Rc - _herm(corr_X @ Zi)
            rc = sig_mu / z - x
            if corr_x is not None:
                rc = rc - corr_x / z
            rhs = rp - ops.apply(Rc - X @ Rd @ Zi)
            if p:
                rhs[ineq] += rc - x / z * rd_lp
            dy = solve(rhs)
            dZ = Rd - ops.adjoint(dy)
            dX = _herm(Rc - X @ dZ @ Zi)
            dz = rd_lp + dy[ineq] if p else np.zeros(0)
            dx = rc - x / z * dz if p else np.zeros(0)
            return dX, dx, dy, dZ, dz

        dXa, dxa, dya, dZa, dza = direction(0.0)
        ap = min(1.0, _max_step(X, dXa), _max_step_lp(x, dxa))
        ad = min(1.0, _max_step(Z, dZa), _max_step_lp(z, dza))
        mu_aff = (float(np.real(np.vdot(X + ap * dXa, Z + ad * dZa)))
                  + (x + ap * dxa) @ (z + ad * dza)) / (n + p)
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
        dX, dx, dy, dZ, dz = direction(sigma * mu, dXa @ dZa, dxa * dza)
        ap = min(1.0, 0.95 * _max_step(X, dX), 0.95 * _max_step_lp(x, dx))
        ad = min(1.0, 0.95 * _max_step(Z, dZ), 0.95 * _max_step_lp(z, dz))
        if ap <= 1e-12 and ad <= 1e-12:
            log.debug("SDP step collapsed at iteration %d", it)
            break
        X = _herm(X + ap * dX)
        x = x + ap * dx
        y = y + ad * dy
        Z = _herm(Z + ad * dZ)
        z = z + ad * dz

    # back to the caller's scaling
    y_out = sign * c_scale * y / row_scale
    Z_out = sign * c_scale * Z
    pobj = float(np.real(np.vdot(problem.cost, X)))
    dobj = float(np.array([c.b for c in cons]) @ y_out) if m else 0.0
    return SdpSolution(X=X, y=y_out, Z=Z_out, primal_obj=pobj, dual_obj=dobj, status=status,
                       iterations=it, primal_residual=float(pinf), dual_residual=float(dinf))


def kkt_residuals(problem: SdpProblem, sol: SdpSolution) -> dict:
    """Primal/dual feasibility, complementarity and PSD violations of ``sol``."""
    X, y = sol.X, sol.y
    C = problem.cost
    Z = C - sum((yi * c.dense() for yi, c in zip(y, problem.constraints)),
                np.zeros_like(C))
    if problem.maximize:
        Z = -Z
    prim = []
    for c in problem.constraints:
        v = c.value(X) - c.b
        prim.append(abs(v) if c.sense == "==" else max(0.0, -v))
    ysign = [max(0.0, -yi if not problem.maximize else yi)
             for yi, c in zip(y, problem.constraints) if c.sense == ">="]
    return {
        "primal": max(prim, default=0.0),
        "dual_sign": max(ysign, default=0.0),
        "psd_X": max(0.0, -np.linalg.eigvalsh(_herm(X))[0]),
        "psd_Z": max(0.0, -np.linalg.eigvalsh(_herm(Z))[0]),
        "complementarity": abs(float(np.real(np.vdot(X, Z)))),
        "gap": sol.gap,
    }


# --------------------------------------------------------------------------
# rank-one recovery


@dataclass
class RandomizationResult:
    vector: np.ndarray
    score: float
    feasible: bool
    scores: np.ndarray


def gaussian_randomize(X: np.ndarray, count_R: int, evaluator: Callable[[np.ndarray], float],
                       constraint_checker: Optional[Callable[[np.ndarray], bool]] = None,
                       rng: Optional[np.random.Generator] = None,
                       unit_modulus: bool = False) -> RandomizationResult:
    """Draw ``count_R`` candidates ``Q D^{1/2} r`` from ``X = Q D Q^H`` and keep the best.

    ``r`` is standard circular complex Gaussian.  With ``unit_modulus`` each
    candidate is projected entrywise onto the unit circle.  The best-scoring
    candidate among those passing ``constraint_checker`` is returned; if none
    passes, the best overall is returned with ``feasible=False``.
    """
    if count_R < 1:
        raise ValueError("count_R must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    d, Q = np.linalg.eigh(_herm(np.asarray(X, complex)))
    F = Q * np.sqrt(np.clip(d, 0.0, None))
    n = X.shape[0]
    r = (rng.standard_normal((n, count_R)) + 1j * rng.standard_normal((n, count_R))) / np.sqrt(2)
    cands = F @ r
    if unit_modulus:
        cands = np.exp(1j * np.angle(cands))
    scores = np.empty(count_R)
    ok = np.zeros(count_R, bool)
    for q in range(count_R):
        c = cands[:, q]
        scores[q] = evaluator(c)
        ok[q] = True if constraint_checker is None else bool(constraint_checker(c))
    if ok.any():
        idx = np.flatnonzero(ok)[np.argmax(scores[ok])]
    else:
        idx = int(np.argmax(scores))
    return RandomizationResult(cands[:, idx], float(scores[idx]), bool(ok[idx]), scores)


def scale_to_most_violated(w: np.ndarray,
                           constraints: Sequence[Tuple[np.ndarray, float]]) -> Optional[np.ndarray]:
    """Rescale ``w`` so every ``Re w^H Q w >= rhs`` holds and the tightest is active.

    Returns ``None`` when some constraint has zero left-hand side along ``w``
    while requiring a positive value (no scaling can fix that direction).
    """
    ratios = []
    for Q, rhs in constraints:
        lhs = float(np.real(np.vdot(w, Q @ w)))
        if lhs <= 0:
            if rhs > 0:
                return None
            continue
        ratios.append(rhs / lhs)
    if not ratios:
        return w.copy()
    t = max(ratios)
    return np.sqrt(t) * w if t > 0 else w.copy()

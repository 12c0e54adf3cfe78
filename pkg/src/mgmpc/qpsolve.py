"""Sparse convex QP solver based on operator splitting.

Problems are given in the standard form

    minimize    0.5 x'Px + q'x + c0
    subject to  l <= Ax <= u,

with P symmetric positive semidefinite and variable bounds folded into A
(by convention builders emit an identity block as the first n rows).  The
solver runs an ADMM-type splitting iteration on a cached sparse KKT
factorization, with Ruiz equilibration, adaptive penalty, and an
active-set "polish" step that both sharpens solutions and enables cheap
re-solves of parametrically modified problems (only q, l, u may change).

A solver instance is single threaded; distinct instances may run
concurrently.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConfigurationError

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal-infeasible"
DUAL_INFEASIBLE = "dual-infeasible"
ITERATION_LIMIT = "iteration-limit"

_RHO_MIN, _RHO_MAX = 1e-6, 1e6
_RHO_EQ_FACTOR = 1e3


@dataclass
class QpSettings:
    """Solver tolerances and algorithm knobs."""

    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 50_000
    time_limit: float | None = None
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    adaptive_rho: bool = True
    check_interval: int = 25
    scaling_iters: int = 10
    polish: bool = True
    polish_delta: float = 1e-9
    eps_infeasible: float = 1e-7

    def __post_init__(self):
        if self.eps_abs <= 0 or self.eps_rel < 0:
            raise ConfigurationError("tolerances must be positive")
        if not 0 < self.alpha < 2:
            raise ConfigurationError("relaxation alpha must be in (0, 2)")


@dataclass
class QpProblem:
    """Sparse QP data; see the module docstring for the standard form."""

    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray
    c0: float = 0.0

    def __post_init__(self):
        self.P = sp.csc_matrix(self.P)
        self.A = sp.csc_matrix(self.A)
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.l = np.asarray(self.l, dtype=float).ravel()
        self.u = np.asarray(self.u, dtype=float).ravel()

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def validate(self) -> None:
        n, m = self.n, self.m
        if self.P.shape != (n, n) or self.A.shape[1] != n:
            raise ConfigurationError("inconsistent problem dimensions")
        if len(self.q) != n or len(self.l) != m or len(self.u) != m:
            raise ConfigurationError("vector lengths do not match matrix dimensions")
        gap = self.P - self.P.T
        scale = max(1.0, abs(self.P).max() if self.P.nnz else 0.0)
        if gap.nnz and abs(gap).max() > 1e-9 * scale:
            raise ConfigurationError("P must be symmetric")
        if self.P.nnz and self.P.diagonal().min() < -1e-12 * scale:
            raise ConfigurationError("P has a negative diagonal entry; not PSD")

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.c0)


@dataclass
class QpSolution:
    """Primal/dual result with unscaled KKT residuals."""

    x: np.ndarray | None
    y: np.ndarray | None
    status: str
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    polished: bool = False
    certificate: np.ndarray | None = None


def kkt_residuals(problem: QpProblem, x: np.ndarray, y: np.ndarray):
    """Unscaled KKT residual pair (primal, dual) at a candidate point."""
    ax = problem.A @ x
    r_prim = np.abs(ax - np.clip(ax, problem.l, problem.u)).max() if problem.m else 0.0
    r_dual = np.abs(problem.P @ x + problem.q + problem.A.T @ y).max()
    return float(r_prim), float(r_dual)


class QpSolver:
    """Reusable solver bound to one problem's sparsity pattern.

    ``update_q`` and ``update_bounds`` modify the problem in place without
    refactorization; the KKT factors and the last polish factorization are
    cached, so repeated parametric solves are cheap.
    """

    def __init__(self, problem: QpProblem, settings: QpSettings | None = None):
        problem.validate()
        self.problem = problem
        self.settings = settings or QpSettings()
        self.n = problem.n
        self.m = problem.m
        self._scale()
        self._equality_rows = np.isfinite(problem.l) & (problem.l == problem.u)
        self._loose_rows = np.isinf(problem.l) & np.isinf(problem.u)
        self._rho_base = self.settings.rho
        self._build_rho()
        self._factorize()
        # iterates live in scaled space
        self._xs = np.zeros(self.n)
        self._zs = np.zeros(self.m)
        self._ys = np.zeros(self.m)
        self._active_cache: tuple[np.ndarray, np.ndarray] | None = None
        self._polish_lu = None
        self._polish_key = None

    # -- scaling -----------------------------------------------------------

    def _scale(self):
        p = self.problem
        n, m = self.n, self.m
        P = p.P.tocsc()
        A = p.A.tocsc()
        At = p.A.T.tocsc()
        p_abs = np.abs(P.data)
        a_abs = np.abs(A.data)
        at_abs = np.abs(At.data)
        p_row = P.indices
        a_row = A.indices
        at_row = At.indices

        def colmax(absdata, rowidx, indptr, weights, size):
            """Per-column max of |entry| * weights[row]; empty columns 0."""
            out = np.zeros(size)
            if absdata.size == 0:
                return out
            nz = np.flatnonzero(np.diff(indptr) > 0)
            red = np.maximum.reduceat(absdata * weights[rowidx], indptr[nz])
            out[nz] = red[: len(nz)]
            # reduceat segments run to the next listed start, which skips
            # empty columns correctly because they hold no data
            return out

        d = np.ones(n)
        e = np.ones(m)
        c = 1.0
        for _ in range(self.settings.scaling_iters):
            np_col = colmax(p_abs, p_row, P.indptr, d, n) * d * c
            na_col = colmax(a_abs, a_row, A.indptr, e, n) * d if m else np.zeros(n)
            na_row = colmax(at_abs, at_row, At.indptr, d, m) * e if m else np.zeros(0)
            norm_cols = np.maximum(np_col, na_col)
            dd = 1.0 / np.sqrt(np.where(norm_cols > 0, norm_cols, 1.0))
            de = 1.0 / np.sqrt(np.where(na_row > 0, na_row, 1.0))
            d *= dd
            e *= de
            p_col = colmax(p_abs, p_row, P.indptr, d, n) * d * c
            q_norm = np.abs(c * d * p.q).max() if n else 0.0
            denom = max(float(p_col.mean()) if n else 0.0, float(q_norm))
            g = 1.0 / denom if denom > 0 else 1.0
            c *= g
        self._d, self._e, self._c = d, e, c
        Ps = P.copy()
        Ps.data = P.data * c * d[p_row] * d[np.repeat(np.arange(n), np.diff(P.indptr))]
        As = A.copy()
        if m:
            As.data = A.data * e[a_row] * d[np.repeat(np.arange(n), np.diff(A.indptr))]
        self._Ps = Ps
        self._As = As
        self._qs = c * d * p.q
        self._ls = e * p.l
        self._us = e * p.u

    def _build_rho(self):
        rho = np.full(self.m, self._rho_base)
        rho[self._equality_rows] = np.minimum(self._rho_base * _RHO_EQ_FACTOR, _RHO_MAX)
        rho[self._loose_rows] = _RHO_MIN
        self._rho = rho

    def _factorize(self):
        sigma = self.settings.sigma
        if self.m:
            kkt = sp.bmat(
                [
                    [self._Ps + sigma * sp.eye(self.n), self._As.T],
                    [self._As, -sp.diags(1.0 / self._rho)],
                ],
                format="csc",
            )
        else:
            kkt = sp.csc_matrix(self._Ps + sigma * sp.eye(self.n))
        try:
            self._lu = splu(kkt)
        except RuntimeError as err:
            raise ConfigurationError(f"KKT factorization failed: {err}") from err

    # -- parametric updates --------------------------------------------------

    def update_q(self, q, c0: float | None = None):
        q = np.asarray(q, dtype=float).ravel()
        if len(q) != self.n:
            raise ConfigurationError("q has wrong length")
        self.problem.q = q
        if c0 is not None:
            self.problem.c0 = float(c0)
        self._qs = self._c * self._d * q

    def update_bounds(self, l=None, u=None):
        if l is not None:
            l = np.asarray(l, dtype=float).ravel()
            if len(l) != self.m:
                raise ConfigurationError("l has wrong length")
            self.problem.l = l
            self._ls = self._e * l
        if u is not None:
            u = np.asarray(u, dtype=float).ravel()
            if len(u) != self.m:
                raise ConfigurationError("u has wrong length")
            self.problem.u = u
            self._us = self._e * u
        self._zs = np.clip(self._zs, self._ls, self._us)
        # rows may switch between inequality and equality; rho classes are
        # deliberately left alone (a convergence knob, not correctness)
        self._equality_rows = np.isfinite(self.problem.l) & (self.problem.l == self.problem.u)

    def warm_start(self, x, y=None):
        x = np.asarray(x, dtype=float).ravel()
        self._xs = x / self._d
        if y is not None:
            y = np.asarray(y, dtype=float).ravel()
            self._ys = self._c * y / np.where(self._e > 0, self._e, 1.0)
        if self.m:
            self._zs = np.clip(self._As @ self._xs, self._ls, self._us)

    # -- solution accessors ---------------------------------------------------

    def _unscaled(self):
        x = self._d * self._xs
        y = self._e * self._ys / self._c
        return x, y

    def _make_solution(self, x, y, status, iters, polished=False, certificate=None):
        if x is None:
            return QpSolution(None, None, status, float("nan"), float("inf"), float("inf"), iters, polished, certificate)
        r_prim, r_dual = kkt_residuals(self.problem, x, y)
        return QpSolution(x, y, status, self.problem.objective(x), r_prim, r_dual, iters, polished, certificate)

    # -- polish ----------------------------------------------------------------

    def _try_polish(self, low: np.ndarray, up: np.ndarray):
        """Solve the equality-constrained QP for a guessed active set.

        Returns (x, y) or None when the reduced system cannot be solved.
        Verification is the caller's job.
        """
        p = self.problem
        act = np.flatnonzero(low | up)
        bounds = np.where(low, p.l, p.u)[act]
        if np.any(~np.isfinite(bounds)):
            return None
        key = (low.tobytes(), up.tobytes())
        if self._polish_key != key or self._polish_lu is None:
            a_act = p.A[act]
            k = len(act)
            delta = self.settings.polish_delta
            kkt = sp.bmat(
                [
                    [p.P + delta * sp.eye(self.n), a_act.T],
                    [a_act, -delta * sp.eye(k) if k else None],
                ],
                format="csc",
            ) if k else sp.csc_matrix(p.P + delta * sp.eye(self.n))
            try:
                lu = splu(kkt)
            except RuntimeError:
                return None
            self._polish_lu = lu
            self._polish_key = key
            self._polish_act = act
            self._polish_a_act = p.A[act]
        act = self._polish_act
        a_act = self._polish_a_act
        rhs = np.concatenate([-p.q, bounds]) if len(act) else -p.q
        t = self._polish_lu.solve(rhs)
        # iterative refinement against the unregularized KKT system
        for _ in range(3):
            if len(act):
                rx = rhs[: self.n] - (p.P @ t[: self.n] + a_act.T @ t[self.n :])
                rz = rhs[self.n :] - a_act @ t[: self.n]
                resid = np.concatenate([rx, rz])
            else:
                resid = rhs - p.P @ t
            if np.abs(resid).max() < 1e-14:
                break
            t = t + self._polish_lu.solve(resid)
        x = t[: self.n]
        y = np.zeros(self.m)
        if len(act):
            y[act] = t[self.n :]
        if not np.all(np.isfinite(x)):
            return None
        return x, y

    def _verify(self, x, y):
        """Full optimality check of a candidate pair at the tolerances.

        Certifies optimality through KKT residuals plus the duality gap;
        the gap is a valid certificate for any multiplier vector, which
        allows pairing a polished primal with the splitting iterate's dual
        when a degenerate active set scrambles the reduced-system duals.
        """
        p = self.problem
        ax = p.A @ x if self.m else np.zeros(0)
        r_prim, r_dual = kkt_residuals(p, x, y)
        eps_prim = self.settings.eps_abs + self.settings.eps_rel * max(
            np.abs(ax).max() if self.m else 0.0, 1.0
        )
        px = p.P @ x
        aty = p.A.T @ y if self.m else np.zeros(self.n)
        eps_dual = self.settings.eps_abs + self.settings.eps_rel * max(
            np.abs(px).max(), np.abs(aty).max(), np.abs(p.q).max(), 1.0
        )
        if r_prim > eps_prim or r_dual > eps_dual:
            return False
        if self.m:
            tiny = 1e-14 * max(1.0, np.abs(y).max())
            y_pos = np.where(y > tiny, y, 0.0)
            y_neg = np.where(y < -tiny, y, 0.0)
            if np.any((y_pos > 0) & np.isinf(p.u)) or np.any((y_neg < 0) & np.isinf(p.l)):
                return False
            support = float(
                np.sum(np.where(y_pos > 0, p.u, 0.0) * y_pos)
                + np.sum(np.where(y_neg < 0, p.l, 0.0) * y_neg)
            )
        else:
            support = 0.0
        quad = float(x @ px)
        gap = quad + float(p.q @ x) + support
        scale = max(1.0, abs(0.5 * quad + p.q @ x), abs(support))
        return abs(gap) <= self.settings.eps_abs + self.settings.eps_rel * scale

    def _polish_and_verify(self, low, up):
        """Polish for an active-set guess and certify the result.

        Degenerate active sets can scramble the reduced-system duals, so a
        rejected polished pair is retried with the splitting iterate's
        dual vector before giving up.
        """
        out = self._try_polish(low, up)
        if out is None:
            return None
        xp, yp = out
        if self._verify(xp, yp):
            return xp, yp
        y_ref = self._e * self._ys / self._c if self.m else yp
        if self._verify(xp, y_ref):
            return xp, y_ref.copy()
        return None

    def _active_guess(self, x, y):
        p = self.problem
        ax = p.A @ x
        gap = 1e-5 * (1.0 + np.abs(ax))
        y_tol = 1e-9 * max(1.0, np.abs(y).max() if self.m else 0.0)
        eq = self._equality_rows
        low = ((y < -y_tol) | (ax <= p.l + gap)) & np.isfinite(p.l) & ~eq
        up = ((y > y_tol) | (ax >= p.u - gap)) & np.isfinite(p.u) & ~eq & ~low
        up = up | eq
        return low, up

    # -- main solve --------------------------------------------------------------

    def solve(self) -> QpSolution:
        p = self.problem
        s = self.settings
        if np.any(p.l > p.u) or np.any(np.isposinf(p.l)) or np.any(np.isneginf(p.u)):
            bad = p.l > p.u
            cert = np.zeros(self.m)
            cert[bad] = 1.0
            return self._make_solution(None, None, PRIMAL_INFEASIBLE, 0, certificate=cert)

        # hot start: retry the last known active set before iterating
        if s.polish and self._active_cache is not None:
            accepted = self._polish_and_verify(*self._active_cache)
            if accepted is not None:
                x, y = accepted
                self.warm_start(x, y)
                return self._make_solution(x, y, OPTIMAL, 0, polished=True)

        start = time.perf_counter()
        xs, zs, ys = self._xs, self._zs, self._ys
        rho = self._rho
        sigma = s.sigma
        alpha = s.alpha
        ys_prev_check = ys.copy()
        xs_prev_check = xs.copy()
        last_polish_attempt = -10**9
        status = ITERATION_LIMIT
        iters = 0

        for it in range(1, s.max_iter + 1):
            iters = it
            rhs = np.concatenate([sigma * xs - self._qs, zs - ys / rho]) if self.m else (sigma * xs - self._qs)
            sol = self._lu.solve(rhs)
            xt = sol[: self.n]
            if self.m:
                nu = sol[self.n :]
                zt = zs + (nu - ys) / rho
                xs = alpha * xt + (1 - alpha) * xs
                zr = alpha * zt + (1 - alpha) * zs
                zs_new = np.clip(zr + ys / rho, self._ls, self._us)
                ys = ys + rho * (zr - zs_new)
                zs = zs_new
            else:
                xs = alpha * xt + (1 - alpha) * xs

            if it % s.check_interval and it != s.max_iter:
                continue

            self._xs, self._zs, self._ys = xs, zs, ys
            x, y = self._unscaled()
            if not np.all(np.isfinite(x)):
                raise ConfigurationError(
                    "iterates diverged; P is likely not positive semidefinite"
                )
            ax = p.A @ x if self.m else np.zeros(0)
            # measure against the splitting iterate z: complementarity of
            # (z, y) is exact by construction, clamp(Ax) would miss it
            z_u = zs / self._e if self.m else np.zeros(0)
            r_prim = np.abs(ax - z_u).max() if self.m else 0.0
            px = p.P @ x
            aty = p.A.T @ y if self.m else np.zeros(self.n)
            r_dual = np.abs(px + p.q + aty).max()
            eps_prim = s.eps_abs + s.eps_rel * max(
                (np.abs(ax).max() if self.m else 0.0), (np.abs(z_u).max() if self.m else 0.0)
            )
            eps_dual = s.eps_abs + s.eps_rel * max(
                np.abs(px).max(), np.abs(aty).max(), np.abs(p.q).max()
            )
            converged = r_prim <= eps_prim and r_dual <= eps_dual

            near = r_prim <= max(100 * eps_prim, 1e-4) and r_dual <= max(100 * eps_dual, 1e-4)
            if s.polish and (converged or (near and it - last_polish_attempt >= 4 * s.check_interval)):
                last_polish_attempt = it
                low, up = self._active_guess(x, y)
                accepted = self._polish_and_verify(low, up)
                if accepted is not None:
                    xpol, ypol = accepted
                    self._active_cache = (low, up)
                    self.warm_start(xpol, ypol)
                    return self._make_solution(xpol, ypol, OPTIMAL, it, polished=True)

            if converged:
                status = OPTIMAL
                break

            # infeasibility certificates from the check-to-check deltas
            dy = self._e * (ys - ys_prev_check) / self._c
            dy_norm = np.abs(dy).max() if self.m else 0.0
            if dy_norm > 1e-12:
                dyn = dy / dy_norm
                aty_d = np.abs(p.A.T @ dyn).max()
                pos, neg = dyn > 0, dyn < 0
                if np.any(pos & np.isinf(p.u)) or np.any(neg & np.isinf(p.l)):
                    support = np.inf
                else:
                    support = float(p.u[pos] @ dyn[pos] + p.l[neg] @ dyn[neg])
                if aty_d <= s.eps_infeasible and support <= -s.eps_infeasible:
                    self._xs, self._zs, self._ys = xs, zs, ys
                    return self._make_solution(None, None, PRIMAL_INFEASIBLE, it, certificate=dyn)
            dx = self._d * (xs - xs_prev_check)
            dx_norm = np.abs(dx).max()
            if dx_norm > 1e-12:
                dxn = dx / dx_norm
                pdx = np.abs(p.P @ dxn).max()
                qdx = p.q @ dxn
                adx = p.A @ dxn if self.m else np.zeros(0)
                ok_rows = np.ones(self.m, dtype=bool)
                if self.m:
                    ok_rows = (adx <= s.eps_infeasible) | np.isinf(p.u)
                    ok_rows &= (adx >= -s.eps_infeasible) | np.isinf(p.l)
                if pdx <= s.eps_infeasible and qdx <= -s.eps_infeasible and np.all(ok_rows):
                    self._xs, self._zs, self._ys = xs, zs, ys
                    return self._make_solution(None, None, DUAL_INFEASIBLE, it, certificate=dxn)
            ys_prev_check = ys.copy()
            xs_prev_check = xs.copy()

            # penalty adaptation with refactorization when the shift is large
            if s.adaptive_rho and self.m and it < s.max_iter:
                prim_rel = r_prim / max(np.abs(ax).max(), np.abs(z_u).max(), 1e-10)
                dual_rel = r_dual / max(np.abs(px).max(), np.abs(aty).max(), np.abs(p.q).max(), 1e-10)
                if dual_rel > 0:
                    ratio = np.sqrt(prim_rel / dual_rel)
                    new_rho = float(np.clip(self._rho_base * ratio, _RHO_MIN, _RHO_MAX))
                    if new_rho > 5 * self._rho_base or new_rho < self._rho_base / 5:
                        self._rho_base = new_rho
                        self._build_rho()
                        self._factorize()
                        rho = self._rho

            if s.time_limit is not None and time.perf_counter() - start > s.time_limit:
                break

        self._xs, self._zs, self._ys = xs, zs, ys
        x, y = self._unscaled()
        if s.polish and status == OPTIMAL:
            low, up = self._active_guess(x, y)
            accepted = self._polish_and_verify(low, up)
            if accepted is not None:
                x, y = accepted
                self._active_cache = (low, up)
                self.warm_start(x, y)
                return self._make_solution(x, y, OPTIMAL, iters, polished=True)
        return self._make_solution(x, y, status, iters)


def solve(problem: QpProblem, settings: QpSettings | None = None,
          warm: tuple[np.ndarray, np.ndarray] | None = None) -> QpSolution:
    """One-shot convenience wrapper around ``QpSolver``."""
    solver = QpSolver(problem, settings)
    if warm is not None:
        solver.warm_start(*warm)
    return solver.solve()


def _singleton_rows(a: sp.csc_matrix) -> dict[int, tuple[int, float]]:
    """Map variable -> (row, coefficient) for rows with a single nonzero."""
    csr = a.tocsr()
    counts = np.diff(csr.indptr)
    out: dict[int, tuple[int, float]] = {}
    for row in np.flatnonzero(counts == 1):
        col = int(csr.indices[csr.indptr[row]])
        if col not in out:
            out[col] = (int(row), float(csr.data[csr.indptr[row]]))
    return out


def solve_with_fixings(problem: QpProblem, fixings: dict[int, float],
                       settings: QpSettings | None = None) -> QpSolution:
    """Solve with selected variables pinned to given values.

    Variables that own a singleton constraint row (a variablebound row)
    are fixed by tightening that row; the rest get appended equality rows.
    A fixed value outside the variable's bound row is reported as
    primal-infeasible without solving.
    """
    l = problem.l.copy()
    u = problem.u.copy()
    singles = _singleton_rows(problem.A)
    extra = []
    for var in sorted(fixings):
        val = float(fixings[var])
        if var < 0 or var >= problem.n:
            raise ConfigurationError(f"fixing references unknown variable {var}")
        if var in singles:
            row, coeff = singles[var]
            target = coeff * val
            if target < problem.l[row] - 1e-12 or target > problem.u[row] + 1e-12:
                cert = np.zeros(problem.m)
                cert[row] = 1.0
                return QpSolution(None, None, PRIMAL_INFEASIBLE, float("nan"),
                                  float("inf"), float("inf"), 0, certificate=cert)
            l[row] = u[row] = target
        else:
            extra.append((var, val))
    a = problem.A
    if extra:
        rows = sp.csc_matrix(
            (np.ones(len(extra)), ([i for i in range(len(extra))], [v for v, _ in extra])),
            shape=(len(extra), problem.n),
        )
        a = sp.vstack([a, rows], format="csc")
        l = np.concatenate([l, [val for _, val in extra]])
        u = np.concatenate([u, [val for _, val in extra]])
    fixed = QpProblem(P=problem.P, q=problem.q, A=a, l=l, u=u, c0=problem.c0)
    return solve(fixed, settings)


# -- debugging dump ----------------------------------------------------------


def dump_problem(problem: QpProblem, path) -> None:
    """Write a problem as a sparse-triplet text file.

    Format: one record per line; `dims n m`, `c0 v`, then `P i j v`
    (upper triangle), `q i v`, `A i j v`, and `l i v` / `u i v` for the
    finite bound entries.
    """
    lines = [f"dims {problem.n} {problem.m}", f"c0 {float(problem.c0)!r}"]
    pc = sp.triu(problem.P).tocoo()
    for i, j, v in zip(pc.row, pc.col, pc.data):
        lines.append(f"P {i} {j} {float(v)!r}")
    for i in np.flatnonzero(problem.q):
        lines.append(f"q {i} {float(problem.q[i])!r}")
    ac = problem.A.tocoo()
    for i, j, v in zip(ac.row, ac.col, ac.data):
        lines.append(f"A {i} {j} {float(v)!r}")
    for i in range(problem.m):
        if np.isfinite(problem.l[i]):
            lines.append(f"l {i} {float(problem.l[i])!r}")
        if np.isfinite(problem.u[i]):
            lines.append(f"u {i} {float(problem.u[i])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_problem(path) -> QpProblem:
    """Read back a problem written by ``dump_problem``."""
    with open(path) as fh:
        records = [line.split() for line in fh if line.strip()]
    dims = next(r for r in records if r[0] == "dims")
    n, m = int(dims[1]), int(dims[2])
    c0 = 0.0
    p_trip, a_trip = [], []
    q = np.zeros(n)
    l = np.full(m, -np.inf)
    u = np.full(m, np.inf)
    for rec in records:
        if rec[0] == "P":
            i, j, v = int(rec[1]), int(rec[2]), float(rec[3])
            p_trip.append((i, j, v))
            if i != j:
                p_trip.append((j, i, v))
        elif rec[0] == "A":
            a_trip.append((int(rec[1]), int(rec[2]), float(rec[3])))
        elif rec[0] == "q":
            q[int(rec[1])] = float(rec[2])
        elif rec[0] == "l":
            l[int(rec[1])] = float(rec[2])
        elif rec[0] == "u":
            u[int(rec[1])] = float(rec[2])
        elif rec[0] == "c0":
            c0 = float(rec[1])
    def _mat(trips, shape):
        if not trips:
            return sp.csc_matrix(shape)
        rows, cols, vals = zip(*trips)
        return sp.csc_matrix((vals, (rows, cols)), shape=shape)
    return QpProblem(P=_mat(p_trip, (n, n)), q=q, A=_mat(a_trip, (m, n)), l=l, u=u, c0=c0)

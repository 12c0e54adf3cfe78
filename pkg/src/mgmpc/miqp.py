"""Branch-and-bound for QPs with Boolean variables.

Sits on top of :mod:`mgmpc.qpsolve`: every tree node re-solves the same
relaxation with tightened variable-bound rows, so the KKT factorization is
shared across the whole search.  Branching picks the most fractional
Boolean (ties to the lowest index) and the 0-branch is enqueued first;
nodes are explored in best-bound order with deterministic tie-breaking.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .qpsolve import (
    OPTIMAL,
    PRIMAL_INFEASIBLE,
    QpProblem,
    QpSettings,
    QpSolver,
    _singleton_rows,
)

NODE_LIMIT = "node-limit"


@dataclass
class BnbSettings:
    integrality_tol: float = 1e-6
    rel_gap: float = 1e-6
    node_limit: int = 100_000
    branching_rule: str = "most-fractional"
    search: str = "best-bound"
    qp: QpSettings = field(default_factory=QpSettings)

    def __post_init__(self):
        if self.integrality_tol <= 0 or self.rel_gap <= 0:
            raise ConfigurationError("tolerances must be positive")
        if self.branching_rule != "most-fractional":
            raise ConfigurationError(f"unsupported branching rule {self.branching_rule!r}")
        if self.search != "best-bound":
            raise ConfigurationError(f"unsupported search strategy {self.search!r}")


class MiqpProblem:
    """A QP plus the index set of Boolean variables (relaxation in [0, 1]).

    ``probe`` may supply a deterministic rounding hint: given the root
    relaxation point it returns candidate {var: 0/1} assignments that are
    tried as incumbents before branching.
    """

    def __init__(self, base: QpProblem, boolean_vars, probe=None):
        self.base = base
        self.boolean_vars = tuple(int(v) for v in boolean_vars)
        self.probe = probe
        self.validate()

    def validate(self):
        n = self.base.n
        singles = _singleton_rows(self.base.A)
        for var in self.boolean_vars:
            if not 0 <= var < n:
                raise ConfigurationError(f"boolean index {var} out of range")
            if var not in singles:
                raise ConfigurationError(f"boolean variable {var} lacks a bound row")
            row, coeff = singles[var]
            lo = self.base.l[row] / coeff
            hi = self.base.u[row] / coeff
            if coeff < 0:
                lo, hi = hi, lo
            if abs(lo) > 1e-12 or abs(hi - 1.0) > 1e-12:
                raise ConfigurationError(
                    f"boolean variable {var} must have bounds exactly [0, 1]"
                )
        self._bound_rows = {var: singles[var] for var in self.boolean_vars}


@dataclass
class MiqpSolution:
    x: np.ndarray | None
    objective: float
    bound: float
    gap: float
    status: str
    booleans: np.ndarray | None
    nodes: int


def _apply_fixings(problem: MiqpProblem, l, u, fixings):
    for var, val in fixings.items():
        row, coeff = problem._bound_rows[var]
        l[row] = u[row] = coeff * val


def solve_miqp(problem: MiqpProblem, settings: BnbSettings | None = None) -> MiqpSolution:
    """Best-bound branch-and-bound over the Boolean variables."""
    settings = settings or BnbSettings()
    bools = np.asarray(problem.boolean_vars, dtype=int)
    # private copy: node solves tighten bounds in place
    base = QpProblem(P=problem.base.P, q=problem.base.q, A=problem.base.A,
                     l=problem.base.l.copy(), u=problem.base.u.copy(),
                     c0=problem.base.c0)
    solver = QpSolver(base, settings.qp)
    l0 = problem.base.l.copy()
    u0 = problem.base.u.copy()

    def node_solve(fixings, warm):
        l = l0.copy()
        u = u0.copy()
        _apply_fixings(problem, l, u, fixings)
        solver.update_bounds(l=l, u=u)
        if warm is not None:
            solver.warm_start(*warm)
        return solver.solve()

    root = node_solve({}, None)
    nodes = 1
    if root.status == PRIMAL_INFEASIBLE:
        return MiqpSolution(None, float("nan"), float("nan"), float("nan"),
                            PRIMAL_INFEASIBLE, None, nodes)
    if root.status != OPTIMAL:
        return MiqpSolution(root.x, root.objective, float("-inf"), float("inf"),
                            root.status, None, nodes)

    incumbent_x = None
    incumbent_obj = np.inf
    root_bound = root.objective

    def fractionality(x):
        if len(bools) == 0:
            return np.zeros(0)
        vals = x[bools]
        return np.abs(vals - np.round(vals))

    def accept_if_integral(sol):
        nonlocal incumbent_x, incumbent_obj
        frac = fractionality(sol.x)
        if len(frac) and frac.max() > settings.integrality_tol:
            return False
        if sol.objective < incumbent_obj - 1e-12:
            incumbent_obj = sol.objective
            incumbent_x = sol.x.copy()
        return True

    if accept_if_integral(root):
        booleans = np.round(incumbent_x[bools]) if len(bools) else np.zeros(0)
        return MiqpSolution(incumbent_x, incumbent_obj, root_bound, 0.0,
                            OPTIMAL, booleans, nodes)

    # deterministic rounding probes supply an early incumbent
    if problem.probe is not None:
        for hint in problem.probe(root.x):
            full = {int(v): float(hint[v]) for v in hint}
            sol = node_solve(full, (root.x, root.y))
            nodes += 1
            if sol.status == OPTIMAL:
                accept_if_integral(sol)

    counter = 0
    heap = []

    def push(bound, fixings, warm):
        nonlocal counter
        heapq.heappush(heap, (bound, counter, fixings, warm))
        counter += 1

    def branch(sol, fixings):
        frac = fractionality(sol.x)
        free_mask = np.array([v not in fixings for v in bools])
        scores = np.where(free_mask, frac, -1.0)
        var = int(bools[int(np.argmax(scores))])
        warm = (sol.x, sol.y)
        push(sol.objective, {**fixings, var: 0.0}, warm)
        push(sol.objective, {**fixings, var: 1.0}, warm)

    branch(root, {})
    status = OPTIMAL
    lower = None  # set on early exit; exhausted search proves the incumbent
    while heap:
        if nodes >= settings.node_limit:
            status = NODE_LIMIT
            lower = heap[0][0]
            break
        bound, _, fixings, warm = heapq.heappop(heap)
        gap_tol = settings.rel_gap * max(1.0, abs(incumbent_obj))
        if bound >= incumbent_obj - gap_tol:
            # best-bound order: every remaining open node is at least as bad
            lower = bound
            break
        sol = node_solve(fixings, warm)
        nodes += 1
        if sol.status != OPTIMAL:
            continue
        if sol.objective >= incumbent_obj - gap_tol:
            continue
        if accept_if_integral(sol):
            continue
        branch(sol, fixings)
    if lower is None:
        lower = incumbent_obj

    if incumbent_x is None:
        bound = lower if status == NODE_LIMIT else root_bound
        return MiqpSolution(None, float("inf"), bound, float("inf"), status, None, nodes)
    lower = min(lower, incumbent_obj)
    gap = max(0.0, (incumbent_obj - lower) / max(1.0, abs(incumbent_obj)))
    booleans = np.round(incumbent_x[bools]) if len(bools) else np.zeros(0)
    return MiqpSolution(incumbent_x, incumbent_obj, lower, gap, status, booleans, nodes)

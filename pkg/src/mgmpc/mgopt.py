"""Optimization models for interconnected-microgrid MPC.

This module turns microgrid/network specs plus scenario trees into sparse
QPs: variable indexing over tree nodes with shared decision slots per
nonanticipativity group, unit constraints (renewable availability via a
big-M min reformulation, storage dynamics with soft energy bounds,
semicontinuous conventional bounds, droop-based power sharing with a
linearized Boolean-times-continuous product), local and global power
balances, a PTDF line-flow model, and the expected operating cost.

The same per-microgrid core is reused to lower every problem variant:
the central problem (Boolean or relaxed), the local consensus subproblem
and coordinator subproblem of the distributed scheme, and the local
mixed-integer update with pinned interchange power.

Builders are pure given immutable specs and trees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .qpsolve import QpProblem
from .miqp import MiqpProblem
from .sctree import ScenarioTree, nonanticipativity_groups

INF = float("inf")


def _vec(value, size, name) -> np.ndarray:
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size == 1 and size > 1:
        arr = np.full(size, float(arr[0]))
    if arr.size != size:
        raise ConfigurationError(f"{name} must have {size} entries")
    return arr


@dataclass(eq=False)
class MgCostWeights:
    """Per-unit cost weights of one microgrid."""

    res_deviation: np.ndarray  # quadratic weight on curtailed renewable power
    storage_use: np.ndarray  # quadratic weight on storage power (losses)
    soft_energy: np.ndarray  # quadratic penalty on energy-bound slack
    conv_fixed: np.ndarray  # fixed running cost of an enabled unit
    conv_linear: np.ndarray  # linear fuel cost
    conv_quadratic: np.ndarray  # quadratic fuel cost
    switching: np.ndarray  # quadratic weight on on/off changes
    sharing: float  # quadratic weight on the power-sharing variable
    trade_price: float  # price per unit of interchange power
    trade_fee: float  # fee per absolute unit of interchange power


@dataclass(eq=False)
class MgSpec:
    """Unit counts, bounds, droop gains and cost weights of one microgrid."""

    n_conventional: int
    n_storage: int
    n_res: int
    n_loads: int
    p_t_min: np.ndarray
    p_t_max: np.ndarray
    p_s_min: np.ndarray
    p_s_max: np.ndarray
    p_r_min: np.ndarray
    p_r_max: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    p_g_min: float
    p_g_max: float
    droop_conventional: np.ndarray  # diagonal of K_t (1/chi, > 0)
    droop_storage: np.ndarray  # diagonal of K_s
    cost: MgCostWeights
    gamma: float
    ts: float  # sampling interval in hours

    def __post_init__(self):
        T, S, R, D = (self.n_conventional, self.n_storage, self.n_res, self.n_loads)
        if min(T, S, R, D) < 1:
            raise ConfigurationError("unit counts must all be >= 1")
        self.p_t_min = _vec(self.p_t_min, T, "p_t_min")
        self.p_t_max = _vec(self.p_t_max, T, "p_t_max")
        self.p_s_min = _vec(self.p_s_min, S, "p_s_min")
        self.p_s_max = _vec(self.p_s_max, S, "p_s_max")
        self.p_r_min = _vec(self.p_r_min, R, "p_r_min")
        self.p_r_max = _vec(self.p_r_max, R, "p_r_max")
        self.x_min = _vec(self.x_min, S, "x_min")
        self.x_max = _vec(self.x_max, S, "x_max")
        self.droop_conventional = _vec(self.droop_conventional, T, "droop_conventional")
        self.droop_storage = _vec(self.droop_storage, S, "droop_storage")
        w = self.cost
        w.res_deviation = _vec(w.res_deviation, R, "res_deviation")
        w.storage_use = _vec(w.storage_use, S, "storage_use")
        w.soft_energy = _vec(w.soft_energy, S, "soft_energy")
        w.conv_fixed = _vec(w.conv_fixed, T, "conv_fixed")
        w.conv_linear = _vec(w.conv_linear, T, "conv_linear")
        w.conv_quadratic = _vec(w.conv_quadratic, T, "conv_quadratic")
        w.switching = _vec(w.switching, T, "switching")
        if np.any(self.p_t_min <= 0) or np.any(self.p_t_max < self.p_t_min):
            raise ConfigurationError("need 0 < p_t_min <= p_t_max")
        if np.any(self.p_s_min >= 0) or np.any(self.p_s_max <= 0):
            raise ConfigurationError("need p_s_min < 0 < p_s_max")
        if np.any(self.p_r_min < 0) or np.any(self.p_r_max < self.p_r_min):
            raise ConfigurationError("need 0 <= p_r_min <= p_r_max")
        if np.any(self.x_min < 0) or np.any(self.x_max <= self.x_min):
            raise ConfigurationError("need 0 <= x_min < x_max")
        if not self.p_g_min < 0 < self.p_g_max:
            raise ConfigurationError("need p_g_min < 0 < p_g_max")
        if np.any(self.droop_conventional <= 0) or np.any(self.droop_storage <= 0):
            raise ConfigurationError("droop gains must be positive")
        if not 0 < self.gamma < 1:
            raise ConfigurationError("discount gamma must lie in (0, 1)")
        if self.ts <= 0:
            raise ConfigurationError("sampling interval must be positive")

    @property
    def rho_bounds(self) -> tuple[float, float]:
        """Range of the sharing variable implied by the storage droop rows."""
        lo = float(np.max(self.droop_storage * (self.p_s_min - self.p_s_max)))
        hi = float(np.min(self.droop_storage * (self.p_s_max - self.p_s_min)))
        return lo, hi


@dataclass(eq=False)
class NetworkSpec:
    """Interconnection topology with line susceptances, limits and costs."""

    n_mgs: int
    lines: tuple[tuple[int, int], ...]  # 0-based endpoints
    susceptances: np.ndarray
    p_e_min: np.ndarray
    p_e_max: np.ndarray
    transmission_cost: np.ndarray  # diagonal entries of the quadratic line cost

    def __post_init__(self):
        self.lines = tuple((int(a), int(b)) for a, b in self.lines)
        e = len(self.lines)
        self.susceptances = _vec(self.susceptances, e, "susceptances")
        self.p_e_min = _vec(self.p_e_min, e, "p_e_min")
        self.p_e_max = _vec(self.p_e_max, e, "p_e_max")
        self.transmission_cost = _vec(self.transmission_cost, e, "transmission_cost")
        if self.n_mgs < 1:
            raise ConfigurationError("need at least one microgrid")
        for a, b in self.lines:
            if not (0 <= a < self.n_mgs and 0 <= b < self.n_mgs) or a == b:
                raise ConfigurationError(f"invalid line endpoints ({a}, {b})")
        if np.any(self.susceptances <= 0):
            raise ConfigurationError("line susceptances must be positive")
        if e and (np.any(self.p_e_min >= 0) or np.any(self.p_e_max <= 0)):
            raise ConfigurationError("need p_e_min < 0 < p_e_max")
        if np.any(self.transmission_cost < 0):
            raise ConfigurationError("transmission cost weights must be >= 0")
        if not self.is_connected():
            raise ConfigurationError("network graph must be connected")

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    def is_connected(self) -> bool:
        seen = {0}
        frontier = [0]
        adj: dict[int, list[int]] = {i: [] for i in range(self.n_mgs)}
        for a, b in self.lines:
            adj[a].append(b)
            adj[b].append(a)
        while frontier:
            node = frontier.pop()
            for nxt in adj[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        return len(seen) == self.n_mgs


def build_ptdf(net: NetworkSpec) -> np.ndarray:
    """Line-flow sensitivity matrix of the DC power-flow model.

    Maps the stacked interchange powers (positive = consumption from the
    grid) to line flows: with incidence matrix M and Laplacian
    L = M' diag(y) M, the result is -diag(y) M pinv(L); the sign accounts
    for negative interchange meaning injection.
    """
    n, e = net.n_mgs, net.n_lines
    if e == 0:
        return np.zeros((0, n))
    incidence = np.zeros((e, n))
    for k, (a, b) in enumerate(net.lines):
        incidence[k, a] = 1.0
        incidence[k, b] = -1.0
    weights = np.diag(net.susceptances)
    laplacian = incidence.T @ weights @ incidence
    return -weights @ incidence @ np.linalg.pinv(laplacian)


# -- reformulation row primitives -------------------------------------------


def min_operator_rows(p_col: int, u_col: int, delta_col: int, w: float, big_m: float):
    """Affine rows encoding p = min(u, w) with the Boolean delta.

    Together with ``p <= w`` (folded into p's upper bound by the builder)
    and integral delta, the feasible set is exactly {p = min(u, w)}:
    delta = 1 pins p = u (requires u <= w), delta = 0 pins p = w.
    """
    if big_m <= 0:
        raise ConfigurationError("big-M constant must be positive")
    return [
        (((p_col, 1.0), (u_col, -1.0)), -INF, 0.0),
        (((p_col, 1.0), (u_col, -1.0), (delta_col, -big_m)), -big_m, INF),
        (((p_col, 1.0), (delta_col, big_m)), w, INF),
    ]


def bilinear_product_rows(z_col: int, rho_col: int, delta_col: int,
                          rho_min: float, rho_max: float):
    """Affine rows encoding z = rho * delta for Boolean delta.

    Valid whenever rho_min <= rho <= rho_max holds elsewhere in the model;
    delta = 1 collapses to z = rho, delta = 0 to z = 0.
    """
    if not rho_min < rho_max:
        raise ConfigurationError("need rho_min < rho_max")
    return [
        (((z_col, 1.0), (delta_col, -rho_max)), -INF, 0.0),
        (((z_col, 1.0), (delta_col, -rho_min)), 0.0, INF),
        (((z_col, 1.0), (rho_col, -1.0), (delta_col, -rho_min)), -INF, -rho_min),
        (((z_col, 1.0), (rho_col, -1.0), (delta_col, -rho_max)), -rho_max, INF),
    ]


# -- variable indexing --------------------------------------------------------


class MgVarMap:
    """Column layout of one microgrid's decisions over a scenario tree.

    Control inputs (setpoints and on/off switches) get one column per
    nonanticipativity group; auxiliary quantities and states get one per
    non-root node; interchange power and its absolute-value epigraph get
    one per stage (when the model owns them).
    """

    def __init__(self, spec: MgSpec, tree: ScenarioTree, include_grid_vars: bool = True):
        self.spec = spec
        self.tree = tree
        self.groups = nonanticipativity_groups(tree)
        T, S, R = spec.n_conventional, spec.n_storage, spec.n_res
        self._t, self._s, self._r = T, S, R
        self.group_size = 2 * T + S + R
        self.node_size = 2 * T + 3 * S + 2 * R + 1
        self.n_groups = self.groups.n_slots
        self.n_nodes = tree.n_nodes - 1
        self.horizon = tree.horizon
        self.include_grid_vars = include_grid_vars
        self.group_base = 0
        self.node_base = self.n_groups * self.group_size
        self.stage_base = self.node_base + self.n_nodes * self.node_size
        self.n_vars = self.stage_base + (2 * self.horizon if include_grid_vars else 0)

    # group-indexed controls
    def u_t(self, slot, unit=0):
        return self.group_base + slot * self.group_size + unit

    def u_s(self, slot, unit=0):
        return self.group_base + slot * self.group_size + self._t + unit

    def u_r(self, slot, unit=0):
        return self.group_base + slot * self.group_size + self._t + self._s + unit

    def delta_t(self, slot, unit=0):
        return self.group_base + slot * self.group_size + self._t + self._s + self._r + unit

    # node-indexed auxiliaries (node ids are tree ids >= 1)
    def _node(self, m):
        return self.node_base + (m - 1) * self.node_size

    def p_t(self, m, unit=0):
        return self._node(m) + unit

    def p_s(self, m, unit=0):
        return self._node(m) + self._t + unit

    def p_r(self, m, unit=0):
        return self._node(m) + self._t + self._s + unit

    def delta_r(self, m, unit=0):
        return self._node(m) + self._t + self._s + self._r + unit

    def sigma(self, m, unit=0):
        return self._node(m) + self._t + self._s + 2 * self._r + unit

    def x(self, m, unit=0):
        return self._node(m) + self._t + 2 * self._s + 2 * self._r + unit

    def rho(self, m):
        return self._node(m) + self._t + 3 * self._s + 2 * self._r

    def z(self, m, unit=0):
        return self._node(m) + self._t + 3 * self._s + 2 * self._r + 1 + unit

    # stage-indexed grid variables (stages are 1-based)
    def p_g(self, j):
        if not self.include_grid_vars:
            raise ConfigurationError("model does not own interchange variables")
        return self.stage_base + 2 * (j - 1)

    def t_g(self, j):
        if not self.include_grid_vars:
            raise ConfigurationError("model does not own interchange variables")
        return self.stage_base + 2 * (j - 1) + 1

    def slot_of(self, m) -> int:
        return self.groups.node_slot[int(m)]

    def boolean_columns(self) -> list[int]:
        cols = []
        for slot in range(self.n_groups):
            for unit in range(self._t):
                cols.append(self.delta_t(slot, unit))
        for m in range(1, self.tree.n_nodes):
            for unit in range(self._r):
                cols.append(self.delta_r(m, unit))
        return sorted(cols)


# -- model assembly -----------------------------------------------------------


class _ModelParts:
    """Bounds, constraint-row triplets and cost pieces under construction."""

    def __init__(self, n_vars: int):
        self.n = n_vars
        self.lb = np.full(n_vars, -INF)
        self.ub = np.full(n_vars, INF)
        self.rows_i: list[int] = []
        self.rows_j: list[int] = []
        self.rows_v: list[float] = []
        self.row_l: list[float] = []
        self.row_u: list[float] = []
        self.p_i: list[int] = []
        self.p_j: list[int] = []
        self.p_v: list[float] = []
        self.q = np.zeros(n_vars)
        self.c0 = 0.0

    @property
    def n_rows(self) -> int:
        return len(self.row_l)

    def set_bounds(self, col, lo, hi):
        self.lb[col] = lo
        self.ub[col] = hi

    def add_row(self, coeffs, lo, hi):
        row = self.n_rows
        for col, val in coeffs:
            self.rows_i.append(row)
            self.rows_j.append(int(col))
            self.rows_v.append(float(val))
        self.row_l.append(float(lo))
        self.row_u.append(float(hi))

    def add_rows(self, rows):
        for coeffs, lo, hi in rows:
            self.add_row(coeffs, lo, hi)

    def add_quad(self, i, j, val):
        """Add val * x_i * x_j to the objective (both halves for i != j)."""
        if i == j:
            self.p_i.append(i)
            self.p_j.append(i)
            self.p_v.append(2.0 * val)
        else:
            self.p_i.extend((i, j))
            self.p_j.extend((j, i))
            self.p_v.extend((val, val))

    def finish(self) -> QpProblem:
        n = self.n
        m = self.n_rows
        a_rows = sp.coo_matrix(
            (self.rows_v, (self.rows_i, self.rows_j)), shape=(m, n)
        ).tocsc()
        a = sp.vstack([sp.eye(n, format="csc"), a_rows], format="csc")
        l = np.concatenate([self.lb, self.row_l])
        u = np.concatenate([self.ub, self.row_u])
        p = sp.coo_matrix((self.p_v, (self.p_i, self.p_j)), shape=(n, n)).tocsc()
        return QpProblem(P=p, q=self.q.copy(), A=a, l=l, u=u, c0=self.c0)


@dataclass(eq=False)
class LocalModel:
    """One microgrid's optimization model over its scenario tree.

    ``problem`` carries the pure operating cost; the consensus terms of the
    distributed scheme enter through :meth:`admm_objective`.  When
    ``fixed_pg`` is set the interchange power is a parameter (the
    mixed-integer update) and the model owns no grid columns.
    """

    spec: MgSpec
    tree: ScenarioTree
    varmap: MgVarMap
    problem: QpProblem
    boolean_columns: list[int]
    x0: np.ndarray
    delta0: np.ndarray
    fixed_pg: np.ndarray | None
    base_q: np.ndarray
    base_c0: float
    admm_quadratic: float | None = None

    def admm_objective(self, lam_row, p_hat_row, kappa: float):
        """Linear objective update for the local consensus subproblem.

        The quadratic part (kappa on the diagonal of the interchange
        columns) is constant across iterations and lives in ``problem.P``.
        """
        lam_row = np.asarray(lam_row, dtype=float)
        p_hat_row = np.asarray(p_hat_row, dtype=float)
        q = self.base_q.copy()
        c0 = self.base_c0
        for j in range(1, self.varmap.horizon + 1):
            col = self.varmap.p_g(j)
            q[col] += lam_row[j - 1] - kappa * p_hat_row[j - 1]
            c0 += 0.5 * kappa * p_hat_row[j - 1] ** 2
        return q, c0

    def pg_columns(self) -> list[int]:
        return [self.varmap.p_g(j) for j in range(1, self.varmap.horizon + 1)]

    def operating_cost(self, x: np.ndarray) -> float:
        """Pure expected operating cost at a solution (no consensus terms)."""
        p = self.problem
        value = float(0.5 * x @ (p.P @ x) + self.base_q @ x + self.base_c0)
        if self.admm_quadratic is not None:
            value -= 0.5 * self.admm_quadratic * sum(
                x[col] ** 2 for col in self.pg_columns()
            )
        return value

    def rounding_probe(self, x: np.ndarray):
        """Deterministic integral hints for branch-and-bound incumbents."""
        vm = self.varmap
        hint = {}
        for slot in range(vm.n_groups):
            for unit in range(self.spec.n_conventional):
                col = vm.delta_t(slot, unit)
                if self.problem.l[col] == self.problem.u[col]:
                    continue  # pinned (e.g. forced-on fallback)
                hint[col] = float(np.round(np.clip(x[col], 0.0, 1.0)))
        for m in range(1, self.tree.n_nodes):
            slot = vm.slot_of(m)
            for unit in range(self.spec.n_res):
                u_val = x[vm.u_r(slot, unit)]
                w_val = self.tree.values[m][unit]
                hint[vm.delta_r(m, unit)] = 1.0 if u_val <= w_val + 1e-9 else 0.0
        return [hint]


def build_local_model(
    spec: MgSpec,
    tree: ScenarioTree,
    x0,
    delta0,
    *,
    fixed_pg=None,
    force_conventional_on: bool = False,
    fixed_cost_on_ancestor: bool = True,
    include_admm_quadratic: float | None = None,
) -> LocalModel:
    """Assemble one microgrid's constraints and expected cost.

    ``include_admm_quadratic`` adds ``kappa`` to the diagonal of the
    interchange columns (used by the local consensus subproblem so that
    later iterations only touch the linear term).
    """
    T, S, R = spec.n_conventional, spec.n_storage, spec.n_res
    D = spec.n_loads
    x0 = _vec(x0, S, "x0")
    delta0 = _vec(delta0, T, "delta0")
    if np.any(x0 < 0):
        raise ConfigurationError("initial storage energy must be >= 0")
    if tree.n_signals != R + D:
        raise ConfigurationError(
            f"tree carries {tree.n_signals} signals, expected {R + D} (res + loads)"
        )
    fixed = None if fixed_pg is None else _vec(fixed_pg, tree.horizon, "fixed_pg")
    vm = MgVarMap(spec, tree, include_grid_vars=fixed is None)
    parts = _ModelParts(vm.n_vars)
    w = spec.cost
    gamma = spec.gamma
    rho_lo, rho_hi = spec.rho_bounds

    w_res_max = tree.values[1:, :R].max(axis=0) if tree.n_nodes > 1 else spec.p_r_max
    big_m = np.maximum(spec.p_r_max, w_res_max)
    if np.any(big_m <= 0):
        raise ConfigurationError("big-M for the renewable min operator must be positive")

    # variable bounds (identity block)
    for slot in range(vm.n_groups):
        for t in range(T):
            parts.set_bounds(vm.u_t(slot, t), 0.0, spec.p_t_max[t])
            if force_conventional_on:
                parts.set_bounds(vm.delta_t(slot, t), 1.0, 1.0)
            else:
                parts.set_bounds(vm.delta_t(slot, t), 0.0, 1.0)
        for s in range(S):
            parts.set_bounds(vm.u_s(slot, s), spec.p_s_min[s], spec.p_s_max[s])
        for r in range(R):
            parts.set_bounds(vm.u_r(slot, r), spec.p_r_min[r], spec.p_r_max[r])

    for m in range(1, tree.n_nodes):
        w_node = tree.values[m]
        for t in range(T):
            parts.set_bounds(vm.p_t(m, t), 0.0, spec.p_t_max[t])
            parts.set_bounds(vm.z(m, t), min(rho_lo, 0.0), max(rho_hi, 0.0))
        for s in range(S):
            parts.set_bounds(vm.p_s(m, s), spec.p_s_min[s], spec.p_s_max[s])
            parts.set_bounds(vm.sigma(m, s), 0.0, INF)
            parts.set_bounds(vm.x(m, s), -INF, INF)
        for r in range(R):
            # p <= w folded into the upper bound
            parts.set_bounds(vm.p_r(m, r), spec.p_r_min[r], min(spec.p_r_max[r], w_node[r]))
            parts.set_bounds(vm.delta_r(m, r), 0.0, 1.0)
        parts.set_bounds(vm.rho(m), rho_lo, rho_hi)

    if fixed is None:
        for j in range(1, vm.horizon + 1):
            parts.set_bounds(vm.p_g(j), spec.p_g_min, spec.p_g_max)
            parts.set_bounds(vm.t_g(j), 0.0, INF)

    # semicontinuous setpoint bounds, once per group
    for slot in range(vm.n_groups):
        for t in range(T):
            parts.add_row(
                ((vm.u_t(slot, t), 1.0), (vm.delta_t(slot, t), -spec.p_t_max[t])), -INF, 0.0
            )
            parts.add_row(
                ((vm.u_t(slot, t), 1.0), (vm.delta_t(slot, t), -spec.p_t_min[t])), 0.0, INF
            )

    # per-node constraints
    for m in range(1, tree.n_nodes):
        j = int(tree.stage[m])
        slot = vm.slot_of(m)
        anc = int(tree.anc[m])
        w_node = tree.values[m]
        for t in range(T):
            parts.add_row(
                ((vm.p_t(m, t), 1.0), (vm.delta_t(slot, t), -spec.p_t_max[t])), -INF, 0.0
            )
            parts.add_row(
                ((vm.p_t(m, t), 1.0), (vm.delta_t(slot, t), -spec.p_t_min[t])), 0.0, INF
            )
            # droop response of enabled units: K_t (p - u) = rho * delta
            k = spec.droop_conventional[t]
            parts.add_row(
                ((vm.p_t(m, t), k), (vm.u_t(slot, t), -k), (vm.z(m, t), -1.0)), 0.0, 0.0
            )
            parts.add_rows(
                bilinear_product_rows(vm.z(m, t), vm.rho(m), vm.delta_t(slot, t), rho_lo, rho_hi)
            )
        for s in range(S):
            k = spec.droop_storage[s]
            parts.add_row(
                ((vm.p_s(m, s), k), (vm.u_s(slot, s), -k), (vm.rho(m), -1.0)), 0.0, 0.0
            )
            if anc == 0:
                parts.add_row(
                    ((vm.x(m, s), 1.0), (vm.p_s(m, s), spec.ts)), x0[s], x0[s]
                )
            else:
                parts.add_row(
                    ((vm.x(m, s), 1.0), (vm.x(anc, s), -1.0), (vm.p_s(m, s), spec.ts)),
                    0.0,
                    0.0,
                )
            parts.add_row(((vm.x(m, s), 1.0), (vm.sigma(m, s), 1.0)), spec.x_min[s], INF)
            parts.add_row(((vm.x(m, s), 1.0), (vm.sigma(m, s), -1.0)), -INF, spec.x_max[s])
        for r in range(R):
            parts.add_rows(
                min_operator_rows(
                    vm.p_r(m, r), vm.u_r(slot, r), vm.delta_r(m, r), w_node[r], big_m[r]
                )
            )
        # local power balance; loads are data
        load = float(np.sum(w_node[R:]))
        coeffs = (
            [(vm.p_t(m, t), 1.0) for t in range(T)]
            + [(vm.p_s(m, s), 1.0) for s in range(S)]
            + [(vm.p_r(m, r), 1.0) for r in range(R)]
        )
        rhs = -load
        if fixed is None:
            coeffs.append((vm.p_g(j), 1.0))
        else:
            rhs -= fixed[j - 1]
        parts.add_row(tuple(coeffs), rhs, rhs)

    # interchange epigraph rows per stage
    if fixed is None:
        for j in range(1, vm.horizon + 1):
            parts.add_row(((vm.t_g(j), 1.0), (vm.p_g(j), -1.0)), 0.0, INF)
            parts.add_row(((vm.t_g(j), 1.0), (vm.p_g(j), 1.0)), 0.0, INF)

    # expected cost over the tree
    for m in range(1, tree.n_nodes):
        j = int(tree.stage[m])
        slot = vm.slot_of(m)
        anc = int(tree.anc[m])
        weight = float(tree.prob[m]) * gamma**j
        for r in range(R):
            c2 = w.res_deviation[r] ** 2
            parts.add_quad(vm.p_r(m, r), vm.p_r(m, r), weight * c2)
            parts.q[vm.p_r(m, r)] -= 2.0 * weight * c2 * spec.p_r_max[r]
            parts.c0 += weight * c2 * spec.p_r_max[r] ** 2
        for s in range(S):
            parts.add_quad(vm.p_s(m, s), vm.p_s(m, s), weight * w.storage_use[s] ** 2)
            parts.add_quad(vm.sigma(m, s), vm.sigma(m, s), weight * w.soft_energy[s] ** 2)
        for t in range(T):
            if fixed_cost_on_ancestor and anc == 0:
                parts.c0 += weight * w.conv_fixed[t] * delta0[t]
            elif fixed_cost_on_ancestor:
                parts.q[vm.delta_t(vm.slot_of(anc), t)] += weight * w.conv_fixed[t]
            else:
                parts.q[vm.delta_t(slot, t)] += weight * w.conv_fixed[t]
            parts.q[vm.p_t(m, t)] += weight * w.conv_linear[t]
            parts.add_quad(vm.p_t(m, t), vm.p_t(m, t), weight * w.conv_quadratic[t] ** 2)
            sw2 = w.switching[t] ** 2
            own = vm.delta_t(slot, t)
            if anc == 0:
                parts.add_quad(own, own, weight * sw2)
                parts.q[own] -= 2.0 * weight * sw2 * delta0[t]
                parts.c0 += weight * sw2 * delta0[t] ** 2
            else:
                prev = vm.delta_t(vm.slot_of(anc), t)
                parts.add_quad(own, own, weight * sw2)
                parts.add_quad(prev, prev, weight * sw2)
                parts.add_quad(own, prev, -weight * sw2)
        parts.add_quad(vm.rho(m), vm.rho(m), weight * w.sharing)
        if fixed is None:
            parts.q[vm.p_g(j)] += weight * w.trade_price
            parts.q[vm.t_g(j)] += weight * w.trade_fee
        else:
            parts.c0 += weight * (
                w.trade_price * fixed[j - 1] + w.trade_fee * abs(fixed[j - 1])
            )

    base_q = parts.q.copy()
    base_c0 = parts.c0
    if include_admm_quadratic is not None and fixed is None:
        for j in range(1, vm.horizon + 1):
            parts.add_quad(vm.p_g(j), vm.p_g(j), include_admm_quadratic / 2.0)

    problem = parts.finish()
    return LocalModel(
        spec=spec,
        tree=tree,
        varmap=vm,
        problem=problem,
        boolean_columns=vm.boolean_columns(),
        x0=x0,
        delta0=delta0,
        fixed_pg=fixed,
        base_q=base_q,
        base_c0=base_c0,
        admm_quadratic=include_admm_quadratic if fixed is None else None,
    )


# -- cost evaluation -----------------------------------------------------------


def node_cost_terms(spec: MgSpec, *, p_t, p_s, p_r, sigma, rho, delta, delta_prev,
                    p_g, fixed_cost_on_ancestor: bool = True) -> dict[str, float]:
    """The six per-node cost terms evaluated at given quantities."""
    w = spec.cost
    p_t = _vec(p_t, spec.n_conventional, "p_t")
    p_s = _vec(p_s, spec.n_storage, "p_s")
    p_r = _vec(p_r, spec.n_res, "p_r")
    sigma = _vec(sigma, spec.n_storage, "sigma")
    delta = _vec(delta, spec.n_conventional, "delta")
    delta_prev = _vec(delta_prev, spec.n_conventional, "delta_prev")
    delta_fix = delta_prev if fixed_cost_on_ancestor else delta
    return {
        "res": float(np.sum((w.res_deviation * (spec.p_r_max - p_r)) ** 2)),
        "storage": float(
            np.sum((w.storage_use * p_s) ** 2) + np.sum((w.soft_energy * sigma) ** 2)
        ),
        "conventional": float(
            w.conv_fixed @ delta_fix
            + w.conv_linear @ p_t
            + np.sum((w.conv_quadratic * p_t) ** 2)
        ),
        "switching": float(np.sum((w.switching * (delta_prev - delta)) ** 2)),
        "sharing": float(w.sharing * rho**2),
        "trading": float(w.trade_price * p_g + w.trade_fee * abs(p_g)),
    }


def transmission_stage_cost(net: NetworkSpec, p_e: np.ndarray) -> float:
    """Quadratic line-loss proxy for one stage's flows."""
    p_e = _vec(p_e, net.n_lines, "p_e")
    return float(p_e @ (net.transmission_cost * p_e))


# -- plan extraction -----------------------------------------------------------


@dataclass(eq=False)
class MgPlan:
    """Solved per-microgrid decision arrays over the tree."""

    u_t: np.ndarray  # (groups, T)
    u_s: np.ndarray
    u_r: np.ndarray
    delta_t: np.ndarray
    p_t: np.ndarray  # (nodes-1, T), indexed by node id - 1
    p_s: np.ndarray
    p_r: np.ndarray
    delta_r: np.ndarray
    sigma: np.ndarray
    x: np.ndarray
    rho: np.ndarray  # (nodes-1,)
    p_g: np.ndarray  # (J,)
    objective: float

    def first_stage(self):
        """Applied controls: the single stage-1 group plus p_g(1)."""
        return {
            "u_t": self.u_t[0],
            "u_s": self.u_s[0],
            "u_r": self.u_r[0],
            "delta_t": np.round(self.delta_t[0]),
            "p_g": float(self.p_g[0]),
        }


def extract_plan(model: LocalModel, x: np.ndarray, objective: float | None = None) -> MgPlan:
    vm = model.varmap
    spec = model.spec
    T, S, R = spec.n_conventional, spec.n_storage, spec.n_res
    G, N = vm.n_groups, vm.n_nodes
    plan = MgPlan(
        u_t=np.array([[x[vm.u_t(g, t)] for t in range(T)] for g in range(G)]),
        u_s=np.array([[x[vm.u_s(g, s)] for s in range(S)] for g in range(G)]),
        u_r=np.array([[x[vm.u_r(g, r)] for r in range(R)] for g in range(G)]),
        delta_t=np.array([[x[vm.delta_t(g, t)] for t in range(T)] for g in range(G)]),
        p_t=np.array([[x[vm.p_t(m, t)] for t in range(T)] for m in range(1, N + 1)]),
        p_s=np.array([[x[vm.p_s(m, s)] for s in range(S)] for m in range(1, N + 1)]),
        p_r=np.array([[x[vm.p_r(m, r)] for r in range(R)] for m in range(1, N + 1)]),
        delta_r=np.array([[x[vm.delta_r(m, r)] for r in range(R)] for m in range(1, N + 1)]),
        sigma=np.array([[x[vm.sigma(m, s)] for s in range(S)] for m in range(1, N + 1)]),
        x=np.array([[x[vm.x(m, s)] for s in range(S)] for m in range(1, N + 1)]),
        rho=np.array([x[vm.rho(m)] for m in range(1, N + 1)]),
        p_g=(
            model.fixed_pg.copy()
            if model.fixed_pg is not None
            else np.array([x[vm.p_g(j)] for j in range(1, vm.horizon + 1)])
        ),
        objective=float(objective) if objective is not None else model.operating_cost(x),
    )
    return plan


def plan_expected_cost(model: LocalModel, plan: MgPlan,
                       fixed_cost_on_ancestor: bool = True) -> dict[str, float]:
    """Term-by-term expected discounted cost of a plan over its tree."""
    spec = model.spec
    tree = model.tree
    vm = model.varmap
    totals = {k: 0.0 for k in ("res", "storage", "conventional", "switching", "sharing", "trading")}
    for m in range(1, tree.n_nodes):
        j = int(tree.stage[m])
        slot = vm.slot_of(m)
        anc = int(tree.anc[m])
        weight = float(tree.prob[m]) * spec.gamma**j
        delta_prev = model.delta0 if anc == 0 else plan.delta_t[vm.slot_of(anc)]
        terms = node_cost_terms(
            spec,
            p_t=plan.p_t[m - 1],
            p_s=plan.p_s[m - 1],
            p_r=plan.p_r[m - 1],
            sigma=plan.sigma[m - 1],
            rho=plan.rho[m - 1],
            delta=plan.delta_t[slot],
            delta_prev=delta_prev,
            p_g=plan.p_g[j - 1],
            fixed_cost_on_ancestor=fixed_cost_on_ancestor,
        )
        for key, val in terms.items():
            totals[key] += weight * val
    totals["total"] = float(sum(totals.values()))
    return totals


# -- problem variants -----------------------------------------------------------


def build_mi_update_problem(spec, tree, x0, delta0, p_star, *,
                            force_conventional_on=False,
                            fixed_cost_on_ancestor=True):
    """The local mixed-integer update with pinned interchange power."""
    model = build_local_model(
        spec, tree, x0, delta0,
        fixed_pg=p_star,
        force_conventional_on=force_conventional_on,
        fixed_cost_on_ancestor=fixed_cost_on_ancestor,
    )
    problem = MiqpProblem(model.problem, model.boolean_columns, probe=model.rounding_probe)
    return model, problem


@dataclass(eq=False)
class CoordinatorModel:
    """Coordinator subproblem: interchange copies plus line flows.

    Variables are the per-MG interchange copies (I x J, row major) followed
    by line flows (E x J); constraints are interchange bounds, flow
    equalities through the PTDF matrix, line limits and the per-stage
    global balance.
    """

    net: NetworkSpec
    horizon: int
    kappa: float
    gamma: float
    problem: QpProblem
    ptdf: np.ndarray

    def pg_hat_col(self, i, j):
        return i * self.horizon + (j - 1)

    def p_e_col(self, e, j):
        return self.net.n_mgs * self.horizon + e * self.horizon + (j - 1)

    def objective_update(self, p_g: np.ndarray, lam: np.ndarray):
        """Linear term from the current local iterates and multipliers."""
        n = self.problem.n
        q = np.zeros(n)
        c0 = 0.0
        for i in range(self.net.n_mgs):
            for j in range(1, self.horizon + 1):
                col = self.pg_hat_col(i, j)
                q[col] = -lam[i, j - 1] - self.kappa * p_g[i, j - 1]
                c0 += 0.5 * self.kappa * p_g[i, j - 1] ** 2
        return q, c0

    def extract(self, x: np.ndarray):
        i_count, horizon = self.net.n_mgs, self.horizon
        p_hat = np.array(
            [[x[self.pg_hat_col(i, j)] for j in range(1, horizon + 1)] for i in range(i_count)]
        )
        p_e = np.array(
            [[x[self.p_e_col(e, j)] for j in range(1, horizon + 1)] for e in range(self.net.n_lines)]
        )
        return p_hat, p_e

    def transmission_cost(self, p_e: np.ndarray) -> float:
        total = 0.0
        for j in range(1, self.horizon + 1):
            total += self.gamma**j * transmission_stage_cost(self.net, p_e[:, j - 1])
        return total


def build_coordinator_model(net: NetworkSpec, horizon: int, kappa: float,
                            gamma: float, pg_bounds: tuple[float, float] | None = None,
                            per_mg_pg_bounds=None) -> CoordinatorModel:
    """Assemble the coordinator's QP skeleton (q is filled per iteration)."""
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1")
    if kappa <= 0:
        raise ConfigurationError("penalty kappa must be positive")
    i_count, e_count = net.n_mgs, net.n_lines
    n = (i_count + e_count) * horizon
    parts = _ModelParts(n)
    ptdf = build_ptdf(net)
    model = CoordinatorModel(net, horizon, kappa, gamma, None, ptdf)  # type: ignore[arg-type]

    for i in range(i_count):
        lo, hi = (-INF, INF)
        if per_mg_pg_bounds is not None:
            lo, hi = per_mg_pg_bounds[i]
        elif pg_bounds is not None:
            lo, hi = pg_bounds
        for j in range(1, horizon + 1):
            parts.set_bounds(model.pg_hat_col(i, j), lo, hi)
    for e in range(e_count):
        for j in range(1, horizon + 1):
            parts.set_bounds(model.p_e_col(e, j), net.p_e_min[e], net.p_e_max[e])

    for j in range(1, horizon + 1):
        parts.add_row(
            tuple((model.pg_hat_col(i, j), 1.0) for i in range(i_count)), 0.0, 0.0
        )
        for e in range(e_count):
            coeffs = [(model.p_e_col(e, j), 1.0)]
            for i in range(i_count):
                if abs(ptdf[e, i]) > 1e-14:
                    coeffs.append((model.pg_hat_col(i, j), -ptdf[e, i]))
            parts.add_row(tuple(coeffs), 0.0, 0.0)

    for i in range(i_count):
        for j in range(1, horizon + 1):
            parts.add_quad(model.pg_hat_col(i, j), model.pg_hat_col(i, j), kappa / 2.0)
    for e in range(e_count):
        for j in range(1, horizon + 1):
            parts.add_quad(
                model.p_e_col(e, j), model.p_e_col(e, j), gamma**j * net.transmission_cost[e]
            )

    model.problem = parts.finish()
    return model


@dataclass(eq=False)
class CentralModel:
    """Monolithic model over all microgrids plus the network."""

    net: NetworkSpec
    locals: list[LocalModel]
    offsets: list[int]
    p_e_base: int
    horizon: int
    gamma: float
    problem: QpProblem
    boolean_columns: list[int]

    def pg_col(self, i, j):
        return self.offsets[i] + self.locals[i].varmap.p_g(j)

    def p_e_col(self, e, j):
        return self.p_e_base + e * self.horizon + (j - 1)

    def mg_solution(self, i: int, x: np.ndarray) -> np.ndarray:
        lo = self.offsets[i]
        return x[lo : lo + self.locals[i].varmap.n_vars]

    def probe(self, x):
        hint = {}
        for i, model in enumerate(self.locals):
            local_hint = model.rounding_probe(self.mg_solution(i, x))[0]
            for col, val in local_hint.items():
                hint[col + self.offsets[i]] = val
        return [hint]


def build_central_problem(net: NetworkSpec, specs, trees, x0s, delta0s, *,
                          fixed_cost_on_ancestor=True) -> CentralModel:
    """The monolithic problem; Boolean metadata allows both MIP and relaxation."""
    if not len(specs) == len(trees) == len(x0s) == len(delta0s) == net.n_mgs:
        raise ConfigurationError("need one spec, tree and initial condition per microgrid")
    horizon = trees[0].horizon
    for tree in trees:
        if tree.horizon != horizon:
            raise ConfigurationError("all trees must share one horizon")
    gamma = specs[0].gamma
    models = [
        build_local_model(spec, tree, x0, d0, fixed_cost_on_ancestor=fixed_cost_on_ancestor)
        for spec, tree, x0, d0 in zip(specs, trees, x0s, delta0s)
    ]
    offsets = []
    total = 0
    for model in models:
        offsets.append(total)
        total += model.varmap.n_vars
    p_e_base = total
    e_count = net.n_lines
    n = total + e_count * horizon
    parts = _ModelParts(n)
    ptdf = build_ptdf(net)

    for model, off in zip(models, offsets):
        p = model.problem
        lb = p.l[: model.varmap.n_vars]
        ub = p.u[: model.varmap.n_vars]
        parts.lb[off : off + model.varmap.n_vars] = lb
        parts.ub[off : off + model.varmap.n_vars] = ub
        rows = p.A[model.varmap.n_vars :].tocoo()
        base = parts.n_rows
        for i, j, v in zip(rows.row, rows.col, rows.data):
            parts.rows_i.append(base + int(i))
            parts.rows_j.append(off + int(j))
            parts.rows_v.append(float(v))
        parts.row_l.extend(p.l[model.varmap.n_vars :].tolist())
        parts.row_u.extend(p.u[model.varmap.n_vars :].tolist())
        pc = p.P.tocoo()
        parts.p_i.extend((pc.row + off).tolist())
        parts.p_j.extend((pc.col + off).tolist())
        parts.p_v.extend(pc.data.tolist())
        parts.q[off : off + model.varmap.n_vars] = model.base_q
        parts.c0 += model.base_c0

    for e in range(e_count):
        for j in range(1, horizon + 1):
            col = p_e_base + e * horizon + (j - 1)
            parts.set_bounds(col, net.p_e_min[e], net.p_e_max[e])
            parts.add_quad(col, col, gamma**j * net.transmission_cost[e])

    for j in range(1, horizon + 1):
        parts.add_row(
            tuple((offsets[i] + models[i].varmap.p_g(j), 1.0) for i in range(net.n_mgs)),
            0.0,
            0.0,
        )
        for e in range(e_count):
            coeffs = [(p_e_base + e * horizon + (j - 1), 1.0)]
            for i in range(net.n_mgs):
                if abs(ptdf[e, i]) > 1e-14:
                    coeffs.append((offsets[i] + models[i].varmap.p_g(j), -ptdf[e, i]))
            parts.add_row(tuple(coeffs), 0.0, 0.0)

    problem = parts.finish()
    booleans = []
    for model, off in zip(models, offsets):
        booleans.extend(col + off for col in model.boolean_columns)
    return CentralModel(
        net=net,
        locals=models,
        offsets=offsets,
        p_e_base=p_e_base,
        horizon=horizon,
        gamma=gamma,
        problem=problem,
        boolean_columns=sorted(booleans),
    )

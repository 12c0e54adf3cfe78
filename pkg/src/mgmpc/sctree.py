"""Scenario trees: structure, reduction from fans, robustification.

A tree is stored as flat per-node arrays.  Node 0 is the root at stage 0;
every other node has exactly one ancestor at the previous stage.  Stage
probabilities sum to one and each parent's probability equals the sum over
its children.  Construction is single-threaded; finished trees are
immutable and freely shareable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .forecast import ScenarioFan

PROB_TOL = 1e-12


@dataclass(frozen=True)
class ScenarioTree:
    """Staged node set with ancestry, probabilities and uncertain inputs.

    Attributes
    ----------
    stage:  (M,) stage index per node, root has stage 0.
    anc:    (M,) ancestor node id, -1 for the root.
    prob:   (M,) visit probability, 1 at the root.
    values: (M, d) uncertain input per node; the root row is unused.
    """

    stage: np.ndarray
    anc: np.ndarray
    prob: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "stage", np.asarray(self.stage, dtype=int))
        object.__setattr__(self, "anc", np.asarray(self.anc, dtype=int))
        object.__setattr__(self, "prob", np.asarray(self.prob, dtype=float))
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        object.__setattr__(self, "values", vals)
        self.validate()

    @property
    def n_nodes(self) -> int:
        return len(self.stage)

    @property
    def horizon(self) -> int:
        return int(self.stage.max())

    @property
    def n_signals(self) -> int:
        return self.values.shape[1]

    def nodes_at_stage(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.stage == j)

    def children(self, m: int) -> np.ndarray:
        return np.flatnonzero(self.anc == m)

    def nonroot(self) -> np.ndarray:
        return np.arange(1, self.n_nodes)

    def path_to_root(self, m: int) -> list[int]:
        path = [m]
        while self.anc[path[-1]] >= 0:
            path.append(int(self.anc[path[-1]]))
        return path

    def validate(self, tol: float = PROB_TOL) -> None:
        """Check the structural and probability invariants."""
        m = self.n_nodes
        if m < 1 or self.stage[0] != 0 or self.anc[0] != -1:
            raise ConfigurationError("node 0 must be the root at stage 0")
        if np.count_nonzero(self.stage == 0) != 1:
            raise ConfigurationError("exactly one root node allowed")
        if len(self.anc) != m or len(self.prob) != m or self.values.shape[0] != m:
            raise ConfigurationError("per-node arrays disagree on length")
        for node in range(1, m):
            a = self.anc[node]
            if a < 0 or a >= m or self.stage[a] != self.stage[node] - 1:
                raise ConfigurationError(
                    f"node {node} lacks a unique ancestor at the previous stage"
                )
        if np.any(self.prob <= 0) or np.any(self.prob > 1 + tol):
            raise ConfigurationError("node probabilities must lie in (0, 1]")
        horizon = int(self.stage.max())
        for j in range(horizon + 1):
            total = self.prob[self.stage == j].sum()
            if abs(total - 1.0) > tol:
                raise ConfigurationError(f"stage {j} probabilities sum to {total!r}")
        for node in range(m):
            if self.stage[node] == horizon:
                continue
            kids = self.children(node)
            if len(kids) == 0:
                raise ConfigurationError(f"non-leaf node {node} has no children")
            if abs(self.prob[kids].sum() - self.prob[node]) > tol:
                raise ConfigurationError(f"children of node {node} break probability flow")

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "stages": self.horizon,
            "nodes": [
                {
                    "id": int(m),
                    "stage": int(self.stage[m]),
                    "anc": None if self.anc[m] < 0 else int(self.anc[m]),
                    "prob": float(self.prob[m]),
                    "values": [float(v) for v in self.values[m]],
                }
                for m in range(self.n_nodes)
            ],
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioTree":
        nodes = sorted(data["nodes"], key=lambda nd: nd["id"])
        stage = [nd["stage"] for nd in nodes]
        anc = [-1 if nd["anc"] is None else nd["anc"] for nd in nodes]
        prob = [nd["prob"] for nd in nodes]
        values = [nd["values"] for nd in nodes]
        return cls(stage=stage, anc=anc, prob=prob, values=values)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioTree":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class NonanticipativityGroups:
    """Sibling groups per stage; each group maps to one shared decision slot.

    ``by_stage[j]`` lists the groups of stage ``j + 1`` as tuples of node
    ids; ``node_slot`` maps every non-root node to its slot index.
    """

    by_stage: tuple[tuple[tuple[int, ...], ...], ...]
    node_slot: dict[int, int]
    n_slots: int

    def groups_at_stage(self, j: int) -> tuple[tuple[int, ...], ...]:
        return self.by_stage[j - 1]


def nonanticipativity_groups(tree: ScenarioTree) -> NonanticipativityGroups:
    """Partition every non-root stage into groups of common-ancestor nodes."""
    by_stage = []
    node_slot: dict[int, int] = {}
    slot = 0
    for j in range(1, tree.horizon + 1):
        groups = {}
        for m in tree.nodes_at_stage(j):
            groups.setdefault(int(tree.anc[m]), []).append(int(m))
        stage_groups = []
        for parent in sorted(groups):
            members = tuple(sorted(groups[parent]))
            stage_groups.append(members)
            for m in members:
                node_slot[m] = slot
            slot += 1
        by_stage.append(tuple(stage_groups))
    return NonanticipativityGroups(tuple(by_stage), node_slot, slot)


def degenerate_tree(trajectory, horizon: int | None = None) -> ScenarioTree:
    """Single-chain tree with probability one at every node."""
    traj = np.asarray(trajectory, dtype=float)
    if traj.ndim == 1:
        traj = traj[:, None]
    if horizon is not None and traj.shape[0] != horizon:
        raise ConfigurationError("trajectory length does not match requested horizon")
    steps = traj.shape[0]
    stage = np.arange(steps + 1)
    anc = np.arange(-1, steps)
    prob = np.ones(steps + 1)
    values = np.vstack([np.zeros((1, traj.shape[1])), traj])
    return ScenarioTree(stage=stage, anc=anc, prob=prob, values=values)


# -- forward selection -----------------------------------------------------


def _distance_matrix(points: np.ndarray, metric) -> np.ndarray:
    """Pairwise distances between flattened remaining-horizon vectors."""
    if metric == "euclidean":
        sq = np.sum(points**2, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
        return np.sqrt(np.maximum(d2, 0.0))
    if callable(metric):
        k = len(points)
        out = np.zeros((k, k))
        for i in range(k):
            out[i] = metric(points - points[i])
        return out
    raise ConfigurationError(f"unsupported metric {metric!r}")


def _transport_cost(dist: np.ndarray, probs: np.ndarray, selected: list[int]) -> float:
    return float(probs @ dist[:, selected].min(axis=1))


def _greedy_select(dist: np.ndarray, probs: np.ndarray, count: int) -> list[int]:
    """Greedy forward selection plus a single-swap polish.

    Ties always resolve to the lowest candidate index.  The polish applies
    best-improvement swaps until the redistribution cost is locally
    optimal with respect to single exchanges.
    """
    k = dist.shape[0]
    dmin = np.full(k, np.inf)
    selected: list[int] = []
    for _ in range(count):
        cand = np.minimum(dmin[:, None], dist)
        costs = probs @ cand
        costs[selected] = np.inf
        pick = int(np.argmin(costs))
        selected.append(pick)
        dmin = np.minimum(dmin, dist[:, pick])

    if count >= k:
        return sorted(selected)

    improved = True
    while improved:
        improved = False
        base_cost = _transport_cost(dist, probs, selected)
        best = (base_cost - 1e-12, None, None)
        for si, s in enumerate(selected):
            rest = [v for v in selected if v != s]
            dmin_rest = dist[:, rest].min(axis=1) if rest else np.full(k, np.inf)
            cand = np.minimum(dmin_rest[:, None], dist)
            costs = probs @ cand
            costs[selected] = np.inf
            u = int(np.argmin(costs))
            if costs[u] < best[0]:
                best = (float(costs[u]), si, u)
        if best[1] is not None:
            selected[best[1]] = best[2]
            improved = True
    return sorted(selected)


def select_representatives(points: np.ndarray, probs: np.ndarray, count: int, metric="euclidean"):
    """One clustering step: pick ``count`` rows of ``points`` and reassign.

    Returns the sorted selected row indices and, for every row, the index
    of its nearest representative.  The selection minimizes the
    probability-weighted transport cost greedily and is polished to
    single-swap local optimality.
    """
    dist = _distance_matrix(np.asarray(points, dtype=float), metric)
    selected = _greedy_select(dist, np.asarray(probs, dtype=float), count)
    nearest = np.asarray(selected)[np.argmin(dist[:, selected], axis=1)]
    return selected, nearest


def forward_select(fan: ScenarioFan, branching, metric="euclidean") -> ScenarioTree:
    """Reduce a fan to a tree with the given per-stage branching factors.

    At each stage the scenarios of a cluster are reduced by greedy forward
    selection on the probability-weighted transport distance over the
    remaining horizon; unselected probability mass moves to the nearest
    representative, then each cluster recurses with the next branching
    count.  Node values are taken verbatim from selected scenarios.
    """
    branching = [int(b) for b in branching]
    if len(branching) == 0:
        raise ConfigurationError("branching vector must not be empty")
    if any(b < 1 for b in branching):
        raise ConfigurationError("branching entries must be >= 1")
    horizon = fan.horizon
    if len(branching) > horizon:
        raise ConfigurationError("branching vector longer than fan horizon")
    branching = branching + [1] * (horizon - len(branching))
    if branching[0] > fan.n_scenarios:
        raise ConfigurationError("stage-1 branching exceeds the number of scenarios")

    vals = fan.values
    dim = fan.n_signals
    probs_all = fan.probabilities

    stage = [0]
    anc = [-1]
    prob = [1.0]
    values = [np.zeros(dim)]

    # Queue-based breadth-first construction keeps node ids stage ordered.
    pending = [(0, np.arange(fan.n_scenarios), probs_all.copy(), 0)]
    while pending:
        parent, members, member_probs, step = pending.pop(0)
        if step >= horizon:
            continue
        count = min(branching[step], len(members))
        points = vals[members, step:, :].reshape(len(members), -1)
        local_sel, nearest = select_representatives(
            points, member_probs / member_probs.sum(), count, metric
        )
        next_clusters = []
        for rep in local_sel:
            in_cluster = np.flatnonzero(nearest == rep)
            node = len(stage)
            stage.append(step + 1)
            anc.append(parent)
            cluster_prob = float(member_probs[in_cluster].sum())
            prob.append(cluster_prob)
            values.append(vals[members[rep], step, :])
            next_clusters.append((node, members[in_cluster], member_probs[in_cluster], step + 1))
        pending.extend(next_clusters)

    return ScenarioTree(stage=stage, anc=anc, prob=prob, values=np.vstack(values))


def robustify(tree: ScenarioTree, fan: ScenarioFan, extreme_prob: float = 0.01) -> ScenarioTree:
    """Insert low-probability extreme branches at stage 1.

    Two chains are added: the element-wise largest and smallest first-step
    forecasts of the fan, each continued with the full trajectory of the
    scenario that attains the extreme for that signal.  Existing branch
    probabilities rescale by ``1 - 2 * extreme_prob``.
    """
    if fan.n_scenarios < 1:
        raise ConfigurationError("empty fan")
    if fan.horizon != tree.horizon:
        raise ConfigurationError("fan horizon does not match tree horizon")
    if fan.n_signals != tree.n_signals:
        raise ConfigurationError("fan and tree disagree on signal dimension")
    stage1 = tree.nodes_at_stage(1)
    min_stage_prob = tree.prob[stage1].min()
    if not 0.0 < extreme_prob < min_stage_prob:
        raise ConfigurationError(
            "extreme_prob must lie strictly between 0 and the smallest stage-1 probability"
        )

    first = fan.values[:, 0, :]
    hi_idx = np.argmax(first, axis=0)
    lo_idx = np.argmin(first, axis=0)
    horizon, dim = fan.horizon, fan.n_signals
    hi_traj = fan.values[hi_idx, :, np.arange(dim)].T  # (J, dim)
    lo_traj = fan.values[lo_idx, :, np.arange(dim)].T

    scale = 1.0 - 2.0 * extreme_prob
    stage = list(tree.stage)
    anc = list(tree.anc)
    prob = [1.0] + [float(p) * scale for p in tree.prob[1:]]
    values = [row.copy() for row in tree.values]

    for traj in (hi_traj, lo_traj):
        parent = 0
        for j in range(horizon):
            node = len(stage)
            stage.append(j + 1)
            anc.append(parent)
            prob.append(extreme_prob)
            values.append(traj[j])
            parent = node

    return ScenarioTree(stage=stage, anc=anc, prob=prob, values=np.vstack(values))

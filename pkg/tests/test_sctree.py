"""Tests for scenario-tree construction, reduction and robustification."""

import itertools

import numpy as np
import pytest

from mgmpc.errors import ConfigurationError
from mgmpc.forecast import AUTOREGRESSIVE, ProcessSpec, ScenarioFan, generate_fan
from mgmpc.sctree import (
    select_representatives,
    ScenarioTree,
    degenerate_tree,
    forward_select,
    nonanticipativity_groups,
    robustify,
)

PROB_TOL = 1e-12


def make_fan(n, horizon, seed, stddev=0.2, dim=1):
    spec = ProcessSpec(
        kind=AUTOREGRESSIVE,
        mean_profile=(1.0,),
        ar_coefficients=(0.7,),
        residual_stddev=stddev,
    )
    fans = [generate_fan(spec, 1.0, n, horizon, seed + 31 * d) for d in range(dim)]
    return ScenarioFan(np.concatenate([f.values for f in fans], axis=2))


def transport_cost(points, probs, subset):
    """Exact probability-weighted redistribution cost of keeping `subset`."""
    cost = 0.0
    for k in range(len(points)):
        if k in subset:
            continue
        cost += probs[k] * min(np.linalg.norm(points[k] - points[v]) for v in subset)
    return cost


def test_identical_scenarios_reduce_to_chain():
    fan = ScenarioFan(np.full((5, 4, 1), 0.3))
    tree = forward_select(fan, [1, 1, 1, 1])
    assert tree.n_nodes == 5
    assert np.all(tree.prob == 1.0)
    assert tree.horizon == 4


def test_keep_all_branching_preserves_probabilities():
    fan = make_fan(6, 3, seed=1)
    tree = forward_select(fan, [6, 1, 1])
    stage1 = tree.nodes_at_stage(1)
    assert len(stage1) == 6
    np.testing.assert_allclose(tree.prob[stage1], 1.0 / 6.0)
    # stage-1 values are exactly the fan's first-step values
    assert sorted(tree.values[stage1, 0].tolist()) == sorted(fan.values[:, 0, 0].tolist())


def test_two_cluster_selection_matches_bruteforce():
    """Brute-force oracle over all 2-subsets of a 4-scenario fan."""
    fan = ScenarioFan(np.array([0.0, 0.1, 10.0, 10.1]).reshape(4, 1, 1))
    tree = forward_select(fan, [2])
    stage1 = tree.nodes_at_stage(1)
    chosen = sorted(tree.values[stage1, 0].tolist())
    assert chosen[0] in (0.0, 0.1)
    assert chosen[1] in (10.0, 10.1)
    np.testing.assert_allclose(tree.prob[stage1], 0.5)

    points = fan.values[:, 0, :]
    probs = fan.probabilities
    best = min(
        transport_cost(points, probs, subset)
        for subset in itertools.combinations(range(4), 2)
    )
    kept = [int(np.argmin(np.abs(points[:, 0] - v))) for v in chosen]
    assert transport_cost(points, probs, kept) == pytest.approx(best, abs=1e-12)


def test_selection_is_single_swap_optimal():
    """Each clustering step is locally optimal under single swaps."""
    for trial in range(20):
        n, b = 12, 3
        fan = make_fan(n, 2, seed=100 + trial, stddev=0.5)
        points = fan.values.reshape(n, -1)
        probs = fan.probabilities
        kept, _ = select_representatives(points, probs, b)
        base = transport_cost(points, probs, kept)
        for si in range(b):
            for u in range(n):
                if u in kept:
                    continue
                swap = sorted(kept[:si] + [u] + kept[si + 1 :])
                assert transport_cost(points, probs, swap) >= base - 1e-10


def test_reduction_never_invents_values():
    fan = make_fan(40, 5, seed=9, dim=2)
    tree = forward_select(fan, [4, 2, 1, 1, 1])
    for m in tree.nonroot():
        j = tree.stage[m] - 1
        diffs = np.linalg.norm(fan.values[:, j, :] - tree.values[m], axis=1)
        assert diffs.min() == 0.0


def test_branching_preconditions():
    fan = make_fan(4, 3, seed=2)
    with pytest.raises(ConfigurationError):
        forward_select(fan, [5, 1, 1])
    with pytest.raises(ConfigurationError):
        forward_select(fan, [2, 0, 1])
    with pytest.raises(ConfigurationError):
        forward_select(fan, [2, 1, 1, 1])


def test_robustify_rejects_bad_extreme_prob():
    fan = make_fan(10, 3, seed=3)
    tree = forward_select(fan, [2, 1, 1])
    with pytest.raises(ConfigurationError):
        robustify(tree, fan, extreme_prob=0.0)
    with pytest.raises(ConfigurationError):
        robustify(tree, fan, extreme_prob=0.6)


def test_robustify_single_scenario_fan():
    fan = make_fan(1, 3, seed=4)
    tree = forward_select(fan, [1, 1, 1])
    out = robustify(tree, fan, extreme_prob=0.01)
    stage1 = out.nodes_at_stage(1)
    assert len(stage1) == 3
    vals = out.values[stage1, :]
    # max scenario equals min scenario: both added branches repeat the chain
    np.testing.assert_array_equal(vals[1], vals[2])
    assert out.prob[out.stage >= 1].reshape(-1).sum() == pytest.approx(3.0, abs=1e-12)
    out.validate()


def test_robustify_large_fan_counts_and_sums():
    fan = make_fan(500, 6, seed=5, dim=2)
    tree = forward_select(fan, [6, 2, 1, 1, 1, 1])
    before = len(tree.nodes_at_stage(1))
    out = robustify(tree, fan, extreme_prob=0.01)
    assert len(out.nodes_at_stage(1)) == before + 2
    for j in range(out.horizon + 1):
        total = out.prob[out.stage == j].sum()
        assert abs(total - 1.0) <= PROB_TOL
    out.validate()


def test_robustify_uses_elementwise_extreme_trajectories():
    fan = make_fan(50, 4, seed=6, dim=2)
    tree = forward_select(fan, [3, 1, 1, 1])
    out = robustify(tree, fan, extreme_prob=0.005)
    first = fan.values[:, 0, :]
    hi = first.max(axis=0)
    lo = first.min(axis=0)
    stage1 = out.nodes_at_stage(1)
    added = out.values[stage1[-2:], :]
    np.testing.assert_allclose(added[0], hi)
    np.testing.assert_allclose(added[1], lo)
    # the chains continue with the extreme scenarios' own trajectories
    hi_idx = np.argmax(first, axis=0)
    node = stage1[-2]
    for j in range(1, 4):
        node = int(out.children(node)[0])
        np.testing.assert_array_equal(
            out.values[node], fan.values[hi_idx, j, np.arange(2)]
        )


def test_nonanticipativity_groups_small_tree():
    """Two stage-1 siblings, one of which branches again at stage 2."""
    tree = ScenarioTree(
        stage=[0, 1, 1, 2, 2, 2],
        anc=[-1, 0, 0, 1, 1, 2],
        prob=[1.0, 0.6, 0.4, 0.3, 0.3, 0.4],
        values=np.zeros((6, 1)),
    )
    groups = nonanticipativity_groups(tree)
    assert groups.groups_at_stage(1) == ((1, 2),)
    assert groups.groups_at_stage(2) == ((3, 4), (5,))
    assert groups.n_slots == 3
    assert groups.node_slot[3] == groups.node_slot[4] != groups.node_slot[5]


def test_chain_tree_gives_singleton_groups():
    tree = degenerate_tree(np.arange(5.0))
    groups = nonanticipativity_groups(tree)
    assert groups.n_slots == 5
    assert all(len(g) == 1 for stage in groups.by_stage for g in stage)


def test_group_counts_for_branching_six_two():
    fan = make_fan(200, 5, seed=8)
    tree = forward_select(fan, [6, 2, 1, 1, 1])
    groups = nonanticipativity_groups(tree)
    assert groups.groups_at_stage(1) == (tuple(tree.nodes_at_stage(1)),)
    assert len(groups.groups_at_stage(2)) == 6
    assert sum(len(g) for g in groups.groups_at_stage(2)) == len(tree.nodes_at_stage(2))


def test_degenerate_tree_shapes():
    const = degenerate_tree(np.full(4, 0.7))
    assert np.all(const.values[1:] == 0.7)
    one = degenerate_tree([1.5], horizon=1)
    assert one.n_nodes == 2
    traj = np.random.default_rng(0).normal(size=(7, 3))
    tree = degenerate_tree(traj)
    assert tree.horizon == 7
    assert tree.n_nodes == 8
    with pytest.raises(ConfigurationError):
        degenerate_tree(traj, horizon=9)


def test_invariants_hold_on_randomized_constructions():
    """Eqs-style probability invariants to 1e-12 over many random builds."""
    rng = np.random.default_rng(123)
    for trial in range(200):
        n = int(rng.integers(3, 30))
        horizon = int(rng.integers(1, 6))
        fan = make_fan(n, horizon, seed=1000 + trial, stddev=0.4)
        b1 = int(rng.integers(1, min(n, 6) + 1))
        branching = [b1] + [int(rng.integers(1, 3)) for _ in range(horizon - 1)]
        tree = forward_select(fan, branching)
        tree.validate()
        stage1 = tree.nodes_at_stage(1)
        cap = tree.prob[stage1].min()
        if cap > 1e-4:
            robustify(tree, fan, extreme_prob=min(0.01, cap / 2)).validate()


def test_json_round_trip():
    fan = make_fan(20, 4, seed=10, dim=2)
    tree = robustify(forward_select(fan, [3, 2, 1, 1]), fan)
    text = tree.to_json(indent=2)
    back = ScenarioTree.from_json(text)
    np.testing.assert_array_equal(back.stage, tree.stage)
    np.testing.assert_array_equal(back.anc, tree.anc)
    np.testing.assert_allclose(back.prob, tree.prob)
    np.testing.assert_allclose(back.values, tree.values)

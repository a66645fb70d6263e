import numpy as np
import pytest

from alice.errors import InvalidClassCount, StaleNode, UnknownClass
from alice.morph import (
    PLAIN,
    SUPER,
    Delegate,
    Final,
    coarse_label_of,
    initial_state,
    merge_pair,
    route,
    state_from_groups,
)


def apply_merges(state, pairs):
    for pair in pairs:
        state = merge_pair(state, pair)
    return state


def test_initial_states():
    assert initial_state(25).arity == 25
    assert initial_state(25).groups == ()
    assert initial_state(2).arity == 2
    with pytest.raises(InvalidClassCount):
        initial_state(1)


def test_three_disjoint_merges_shrink_arity():
    state = apply_merges(initial_state(25), [(0, 1), (2, 3), (4, 5)])
    assert state.arity == 22  # C - 2b + b with C=25, b=3
    assert len(state.groups) == 3


def test_overlapping_pairs_form_single_group():
    p, q, t, u = 10, 11, 12, 13
    for order in ([(p, q), (p, t), (t, u)], [(t, u), (p, q), (p, t)],
                  [(p, t), (t, u), (p, q)]):
        state = apply_merges(initial_state(25), order)
        assert len(state.groups) == 1
        assert state.groups[0].members == (p, q, t, u)
        assert state.arity == 25 - 3


def test_merge_idempotent():
    state = apply_merges(initial_state(10), [(3, 7)])
    again = merge_pair(state, (3, 7))
    assert again == state


def test_merge_validation():
    state = initial_state(5)
    with pytest.raises(UnknownClass):
        merge_pair(state, (1, 1))
    with pytest.raises(UnknownClass):
        merge_pair(state, (0, 5))


def test_routing():
    state = apply_merges(initial_state(10), [(2, 5)])
    # plain nodes first in ascending order, supers after
    plain_nodes = [n for n in state.nodes if n.kind == PLAIN]
    assert [n.ref for n in plain_nodes] == [0, 1, 3, 4, 6, 7, 8, 9]
    assert state.nodes[-1].kind == SUPER
    assert route(state, 0) == Final(0)
    assert route(state, state.arity - 1) == Delegate(2)
    with pytest.raises(StaleNode):
        route(state, state.arity)


def test_node_order_deterministic():
    state = apply_merges(initial_state(8), [(6, 7), (0, 3)])
    supers = [n.ref for n in state.nodes if n.kind == SUPER]
    assert supers == [0, 6]  # ascending minimum member


def test_group_id_stable_under_absorption():
    state = apply_merges(initial_state(8), [(2, 6), (2, 1)])
    assert len(state.groups) == 1
    assert state.groups[0].group_id == 1


def test_coarse_label_of(small_ds):
    assert coarse_label_of(small_ds, 0) == 0
    assert coarse_label_of(small_ds, 1) == 0
    assert coarse_label_of(small_ds, 5) == 2
    with pytest.raises(UnknownClass):
        coarse_label_of(small_ds, small_ds.num_classes)


def test_state_from_groups_roundtrip():
    state = apply_merges(initial_state(9), [(0, 4), (4, 7), (2, 3)])
    rebuilt = state_from_groups(9, [list(g.members) for g in state.groups], state.round)
    assert rebuilt == state


def random_merge_check(seed):
    rng = np.random.default_rng(seed)
    c = int(rng.integers(2, 30))
    n_merges = int(rng.integers(0, 15))
    pairs = []
    for _ in range(n_merges):
        p, q = rng.choice(c, size=2, replace=False)
        pairs.append((int(p), int(q)))
    state = apply_merges(initial_state(c), pairs)

    # arity identity
    assert state.arity + sum(len(g.members) - 1 for g in state.groups) == c
    # disjointness and size
    seen = set()
    for g in state.groups:
        assert len(g.members) >= 2
        assert not set(g.members) & seen
        seen |= set(g.members)
    # order independence
    perm = [pairs[i] for i in rng.permutation(len(pairs))]
    assert apply_merges(initial_state(c), perm) == state
    # routing totality: every fine class reachable exactly once
    reached = []
    for node_index in range(state.arity):
        outcome = route(state, node_index)
        if isinstance(outcome, Final):
            reached.append(outcome.fine_class)
        else:
            reached.extend(state.group_by_id(outcome.group_id).members)
    assert sorted(reached) == list(range(c))
    # fine_to_node consistency
    for fine in range(c):
        outcome = route(state, state.node_of(fine))
        if isinstance(outcome, Final):
            assert outcome.fine_class == fine
        else:
            assert fine in state.group_by_id(outcome.group_id).members


@pytest.mark.parametrize("seed", range(25))
def test_randomized_merge_sequences(seed):
    random_merge_check(seed)

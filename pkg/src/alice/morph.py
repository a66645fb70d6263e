"""The evolving classifier hierarchy: super-class merging and routing.

Merging a queried class pair folds the two fine classes into one
super-class node of the global label space; overlapping pairs collapse
into a single group (union-find semantics), so b disjoint fresh pairs
shrink a C-way global classifier to (C - 2b + b)-way. Every state is an
immutable value; mutations return new states.

Global node order after any rebuild: plain nodes in ascending fine-class
order, then super nodes in ascending minimum-member order. A group's id
is its smallest member, which is stable under absorption.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import InvalidClassCount, StaleNode, UnknownClass

PLAIN = "plain"
SUPER = "super"


@dataclass(frozen=True)
class ClassGroup:
    group_id: int
    members: tuple[int, ...]


@dataclass(frozen=True)
class GlobalNode:
    kind: str
    ref: int  # fine class for plain nodes, group_id for super nodes


@dataclass(frozen=True)
class Final:
    fine_class: int


@dataclass(frozen=True)
class Delegate:
    group_id: int


@dataclass(frozen=True)
class ArchState:
    num_classes: int
    groups: tuple[ClassGroup, ...]
    nodes: tuple[GlobalNode, ...]
    fine_to_node: tuple[int, ...]
    round: int = 0

    @property
    def arity(self) -> int:
        return len(self.nodes)

    def group_by_id(self, group_id: int) -> ClassGroup:
        for g in self.groups:
            if g.group_id == group_id:
                return g
        raise KeyError(group_id)

    def node_of(self, fine: int) -> int:
        if not 0 <= fine < self.num_classes:
            raise UnknownClass(f"fine class {fine} out of range [0, {self.num_classes})")
        return self.fine_to_node[fine]

    def with_round(self, round_index: int) -> "ArchState":
        return replace(self, round=round_index)


def _build(num_classes: int, member_sets: list[set[int]], round_index: int) -> ArchState:
    groups = tuple(sorted(
        (ClassGroup(min(ms), tuple(sorted(ms))) for ms in member_sets),
        key=lambda g: g.group_id))
    grouped = {c for g in groups for c in g.members}
    nodes: list[GlobalNode] = []
    nodes.extend(GlobalNode(PLAIN, c) for c in range(num_classes) if c not in grouped)
    nodes.extend(GlobalNode(SUPER, g.group_id) for g in groups)
    index: dict[int, int] = {}
    for i, node in enumerate(nodes):
        if node.kind == PLAIN:
            index[node.ref] = i
        else:
            for member in next(g for g in groups if g.group_id == node.ref).members:
                index[member] = i
    return ArchState(
        num_classes=num_classes,
        groups=groups,
        nodes=tuple(nodes),
        fine_to_node=tuple(index[c] for c in range(num_classes)),
        round=round_index,
    )


def initial_state(num_classes: int) -> ArchState:
    """Flat C-way label space: no groups, identity fine-to-node map."""
    if num_classes < 2:
        raise InvalidClassCount(f"need >= 2 classes, got {num_classes}")
    return _build(num_classes, [], 0)


def state_from_groups(num_classes: int, member_lists, round_index: int = 0) -> ArchState:
    """Rebuild a state from serialized group membership lists."""
    if num_classes < 2:
        raise InvalidClassCount(f"need >= 2 classes, got {num_classes}")
    member_sets = []
    seen: set[int] = set()
    for members in member_lists:
        ms = {int(c) for c in members}
        if len(ms) < 2:
            raise UnknownClass(f"group {sorted(ms)} has fewer than 2 members")
        for c in ms:
            if not 0 <= c < num_classes:
                raise UnknownClass(f"fine class {c} out of range [0, {num_classes})")
            if c in seen:
                raise UnknownClass(f"fine class {c} appears in two groups")
            seen.add(c)
        member_sets.append(ms)
    return _build(num_classes, member_sets, round_index)


def merge_pair(state: ArchState, pair: tuple[int, int]) -> ArchState:
    """Merge two fine classes into one super-class (union-find semantics).

    Absorbs existing groups on overlap; an already co-grouped pair is a
    silent no-op. The global label space is rebuilt canonically, so any
    permutation of the same merges yields an identical state.
    """
    p, q = pair
    if p == q:
        raise UnknownClass(f"cannot merge class {p} with itself")
    for c in (p, q):
        if not 0 <= c < state.num_classes:
            raise UnknownClass(f"fine class {c} out of range [0, {state.num_classes})")
    member_sets = [set(g.members) for g in state.groups]
    holding_p = next((ms for ms in member_sets if p in ms), None)
    holding_q = next((ms for ms in member_sets if q in ms), None)
    if holding_p is not None and holding_p is holding_q:
        return state
    if holding_p is None and holding_q is None:
        member_sets.append({p, q})
    elif holding_q is None:
        holding_p.add(q)
    elif holding_p is None:
        holding_q.add(p)
    else:
        holding_p.update(holding_q)
        member_sets.remove(holding_q)
    return _build(state.num_classes, member_sets, state.round)


def route(state: ArchState, node_index: int):
    """Dispatch a global argmax: Final for plain nodes, Delegate for super."""
    if not 0 <= node_index < state.arity:
        raise StaleNode(f"node {node_index} not in the current {state.arity}-way label space")
    node = state.nodes[node_index]
    if node.kind == PLAIN:
        return Final(node.ref)
    return Delegate(node.ref)


def coarse_label_of(manifest, fine: int) -> int:
    if not 0 <= fine < manifest.num_classes:
        raise UnknownClass(f"fine class {fine} out of range [0, {manifest.num_classes})")
    return manifest.fine_classes[fine].coarse_group

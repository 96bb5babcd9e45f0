"""Finite-domain variables, constraint propagation, and episode-scoped search state.

Variables are identified by a global index plus a kind (decision or random).
A SearchState owns one episode's domains and assignments; propagation runs to
a fixpoint after every assignment and flags domain wipe-out instead of raising,
so callers can treat dead ends as truncated episodes. Episodes never backtrack:
a state is built fresh per episode and only ever shrinks.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

_CODE_VERSION = "0.1.0"


class VarKind(Enum):
    DECISION = "decision"
    RANDOM = "random"


@dataclass(frozen=True)
class VarId:
    """Identity of a model variable: global index plus decision/random kind."""

    index: int
    kind: VarKind

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"variable index must be nonnegative, got {self.index}")


def decision(index: int) -> VarId:
    return VarId(index, VarKind.DECISION)


def random_var(index: int) -> VarId:
    return VarId(index, VarKind.RANDOM)


class Domain(tuple):
    """Ascending tuple of candidate integer values for one variable.

    The empty domain is representable and marks a wipe-out.
    """

    __slots__ = ()

    def __new__(cls, values: Sequence[int] = ()):
        return tuple.__new__(cls, sorted(set(values)))

    def without(self, value: int) -> "Domain":
        # values are already sorted, so bypass the normalizing constructor
        return tuple.__new__(Domain, tuple(v for v in self if v != value))

    def keep(self, predicate) -> "Domain":
        return tuple.__new__(Domain, tuple(v for v in self if predicate(v)))

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    @property
    def is_singleton(self) -> bool:
        return len(self) == 1


EMPTY_DOMAIN = Domain()


# AllDifferent filtering levels. "forward" removes the values of assigned
# variables from the other members and fails on duplicated fixed values;
# "arc" additionally propagates from unassigned singleton domains to fixpoint.
ALLDIFF_FORWARD = "forward"
ALLDIFF_ARC = "arc"


@dataclass(frozen=True)
class SolverFingerprint:
    """Solver configuration that is part of the learned policy's identity.

    A value table trained under one fingerprint is meaningless under another
    (different filtering visits a different state space), so persistence and
    loading are guarded by this record.
    """

    alldiff_strength: str = ALLDIFF_FORWARD
    order_seed: Optional[int] = None
    version: str = _CODE_VERSION

    def __post_init__(self):
        if self.alldiff_strength not in (ALLDIFF_FORWARD, ALLDIFF_ARC):
            raise ValueError(f"unknown alldifferent strength {self.alldiff_strength!r}")

    def digest(self) -> bytes:
        text = f"alldiff={self.alldiff_strength};order_seed={self.order_seed};version={self.version}"
        return hashlib.sha256(text.encode()).digest()


class _ConstraintBase:
    """Shared bits of the constraint specs below."""

    #: indexes of the variables this constraint watches, set by subclasses
    _idx: tuple

    @property
    def var_indexes(self) -> tuple:
        return self._idx

    def prune(self, state: "SearchState", trigger) -> list:
        """Filter domains toward this constraint's own fixpoint.

        ``trigger`` is the tuple of var indexes whose domains changed since the
        last run, or None for a full pass. Returns the indexes this call
        changed; sets ``state.wiped`` if a domain empties.
        """
        return []

    def satisfied(self, values: Sequence[int]) -> bool:
        """Check the constraint against a complete assignment (by var index)."""
        raise NotImplementedError


@dataclass(frozen=True)
class AllDifferent(_ConstraintBase):
    vars: tuple

    def __post_init__(self):
        object.__setattr__(self, "vars", tuple(self.vars))
        object.__setattr__(self, "_idx", tuple(v.index for v in self.vars))

    def prune(self, state, trigger):
        domains = state.domains
        changed = []
        # duplicate fixed values among the members is a dead end regardless of
        # filtering level (pigeonhole on singletons)
        seen = {}
        for i in self._idx:
            dom = domains[i]
            if len(dom) == 1:
                v = dom[0]
                if v in seen:
                    state._wipe(i)
                    return changed
                seen[v] = i
        if state.fingerprint.alldiff_strength == ALLDIFF_ARC:
            return self._prune_arc(state)
        values = state.values
        if trigger is None:
            sources = [i for i in self._idx if values[i] is not None]
        else:
            members = self._member_set(state)
            sources = [i for i in trigger if i in members and values[i] is not None]
        for src in sources:
            a = values[src]
            for j in self._idx:
                if j == src:
                    continue
                dom = domains[j]
                if len(dom) > 1 and a in dom:
                    domains[j] = dom.without(a)
                    changed.append(j)
        return changed

    def _prune_arc(self, state):
        # treat every singleton domain as fixed and loop to fixpoint
        domains = state.domains
        changed = []
        dirty = True
        while dirty:
            dirty = False
            for i in self._idx:
                dom = domains[i]
                if len(dom) != 1:
                    continue
                a = dom[0]
                for j in self._idx:
                    if j == i:
                        continue
                    dj = domains[j]
                    if a in dj:
                        if len(dj) == 1:
                            state._wipe(j)
                            return changed
                        domains[j] = dj.without(a)
                        changed.append(j)
                        dirty = True
        return changed

    def _member_set(self, state):
        cache = state._member_sets
        s = cache.get(id(self))
        if s is None:
            s = frozenset(self._idx)
            cache[id(self)] = s
        return s

    def satisfied(self, values):
        vals = [values[i] for i in self._idx]
        return len(set(vals)) == len(vals)


@dataclass(frozen=True)
class LinearLe(_ConstraintBase):
    """sum(coeffs[i] * vars[i]) <= bound, filtered by bounds reasoning."""

    coeffs: tuple
    vars: tuple
    bound: int

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(self.coeffs))
        object.__setattr__(self, "vars", tuple(self.vars))
        if len(self.coeffs) != len(self.vars):
            raise ValueError("coefficient and variable lists must have equal length")
        object.__setattr__(self, "_idx", tuple(v.index for v in self.vars))

    def prune(self, state, trigger):
        domains = state.domains
        idx = self._idx
        coeffs = self.coeffs
        changed = []
        while True:
            mins = []
            for c, i in zip(coeffs, idx):
                dom = domains[i]
                mins.append(c * dom[0] if c > 0 else c * dom[-1])
            total_min = sum(mins)
            dirty = False
            for c, i, m in zip(coeffs, idx, mins):
                if c == 0:
                    continue
                slack = self.bound - (total_min - m)
                dom = domains[i]
                kept = dom.keep(lambda v: c * v <= slack)
                if len(kept) != len(dom):
                    if not kept:
                        state._wipe(i)
                        return changed
                    domains[i] = kept
                    changed.append(i)
                    dirty = True
            if not dirty:
                return changed

    def satisfied(self, values):
        return sum(c * values[i] for c, i in zip(self.coeffs, self._idx)) <= self.bound


@dataclass(frozen=True)
class ReifiedLe(_ConstraintBase):
    """lhs <= rhs as a 0/1 condition. Used inside objective expressions and as
    the target of a satisfaction-probability objective; never filters domains."""

    lhs: VarId
    rhs: VarId

    def __post_init__(self):
        object.__setattr__(self, "_idx", (self.lhs.index, self.rhs.index))

    def satisfied(self, values):
        return values[self.lhs.index] <= values[self.rhs.index]


@dataclass(frozen=True)
class MaximalityGuard(_ConstraintBase):
    """Exclude plans that leave an affordable item unbought.

    For every member e with cost c_e: require value 1, or that the total spend
    plus c_e exceeds the budget. Filtering fixes a member to 1 as soon as even
    the maximum possible spend of the others would leave c_e affordable; once
    every member is fixed this degenerates to the exact final check.
    """

    costs: tuple
    vars: tuple
    budget: int

    def __post_init__(self):
        object.__setattr__(self, "costs", tuple(self.costs))
        object.__setattr__(self, "vars", tuple(self.vars))
        if len(self.costs) != len(self.vars):
            raise ValueError("cost and variable lists must have equal length")
        object.__setattr__(self, "_idx", tuple(v.index for v in self.vars))

    def prune(self, state, trigger):
        domains = state.domains
        idx = self._idx
        costs = self.costs
        changed = []
        max_spend = sum(c * domains[i][-1] for c, i in zip(costs, idx))
        for c, i in zip(costs, idx):
            dom = domains[i]
            if dom[0] != 0:
                continue
            others = max_spend - c * dom[-1]
            if others + c <= self.budget:
                if len(dom) == 1:
                    state._wipe(i)
                    return changed
                domains[i] = dom.without(0)
                changed.append(i)
        return changed

    def satisfied(self, values):
        spent = sum(c * values[i] for c, i in zip(self.costs, self._idx))
        return all(
            values[i] == 1 or spent + c > self.budget
            for c, i in zip(self.costs, self._idx)
        )


@dataclass(frozen=True)
class ShortestPathCost(_ConstraintBase):
    """Suspended recourse constraint: once every watched random variable is
    assigned, compute the summed shortest-path length over the network's OD
    pairs (penalty per disconnected pair) and attach it to the state as the
    named output. Never filters domains.
    """

    network: "object"  # networks.Network
    penalty: float
    random_vars: tuple
    output: str = "z"

    def __post_init__(self):
        object.__setattr__(self, "random_vars", tuple(self.random_vars))
        object.__setattr__(self, "_idx", tuple(v.index for v in self.random_vars))
        object.__setattr__(self, "_cache", {})

    def prune(self, state, trigger):
        if self.output in state.outputs:
            return []
        values = state.values
        for i in self._idx:
            if values[i] is None:
                return []
        bits = tuple(values[i] for i in self._idx)
        state.outputs[self.output] = self.path_cost(bits)
        return []

    def path_cost(self, bits) -> float:
        """Total recourse cost for one scenario (memoized per scenario)."""
        cache = self._cache
        z = cache.get(bits)
        if z is None:
            from .networks import shortest_path_cost

            z = shortest_path_cost(self.network, bits, self.penalty)
            if len(cache) < (1 << 17):
                cache[bits] = z
        return z

    def satisfied(self, values):
        # functional: it defines an output rather than restricting the search
        return True


CONSTRAINT_KINDS = (AllDifferent, LinearLe, ReifiedLe, MaximalityGuard, ShortestPathCost)


class SearchState:
    """Per-episode domains, assignments, and computed outputs.

    Owned by exactly one episode; assignment and propagation mutate in place
    (episodes never backtrack, so there is no trail). ``wiped`` is a normal,
    flagged outcome: once set, further assignments are rejected.
    """

    __slots__ = (
        "domains",
        "values",
        "assigned",
        "wiped",
        "outputs",
        "fingerprint",
        "var_ids",
        "_original",
        "_constraints",
        "_watchers",
        "_member_sets",
    )

    def __init__(self, var_ids, domains, constraints, fingerprint=None):
        self.var_ids = tuple(var_ids)
        self.domains = [Domain(d) if not isinstance(d, Domain) else d for d in domains]
        if len(self.domains) != len(self.var_ids):
            raise ValueError("one domain per variable required")
        self._original = tuple(self.domains)
        self._constraints = tuple(constraints)
        self.fingerprint = fingerprint or SolverFingerprint()
        self.values = [None] * len(self.domains)
        self.assigned = []
        self.wiped = False
        self.outputs = {}
        self._member_sets = {}
        watchers = [[] for _ in self.domains]
        for c in self._constraints:
            for i in c.var_indexes:
                watchers[i].append(c)
        self._watchers = [tuple(ws) for ws in watchers]

    def domain(self, var: VarId) -> Domain:
        return self.domains[var.index]

    def original_domain(self, var: VarId) -> Domain:
        return self._original[var.index]

    def _wipe(self, index: int) -> None:
        self.domains[index] = EMPTY_DOMAIN
        self.wiped = True

    def propagate(self) -> "SearchState":
        """Run every propagator to a global fixpoint."""
        if self.wiped:
            raise ValueError("cannot propagate a wiped state")
        self._run(self._constraints, None)
        return self

    def assign(self, var: VarId, value: int) -> "SearchState":
        """Fix ``var`` to ``value`` and propagate. Rejects out-of-domain values."""
        if self.wiped:
            raise ValueError("cannot assign in a wiped state")
        i = var.index
        if self.values[i] is not None:
            raise ValueError(f"variable {i} is already assigned")
        dom = self.domains[i]
        if value not in dom:
            raise ValueError(f"value {value} not in current domain {tuple(dom)} of variable {i}")
        self.values[i] = value
        if len(dom) != 1:
            self.domains[i] = tuple.__new__(Domain, (value,))
        self.assigned.append((var, value))
        watchers = self._watchers[i]
        if watchers:
            self._run(watchers, (i,))
        return self

    def _run(self, first, trigger) -> None:
        """Constraint-driven propagation queue.

        Each propagator reaches its own fixpoint per call, so a constraint is
        only re-enqueued when a *different* constraint changes one of its
        variables.
        """
        agenda = []
        queued = {}
        for c in first:
            queued[id(c)] = trigger
            agenda.append(c)
        pos = 0
        while pos < len(agenda):
            c = agenda[pos]
            pos += 1
            trig = queued.pop(id(c))
            changed = c.prune(self, trig)
            if self.wiped:
                return
            for i in changed:
                for w in self._watchers[i]:
                    if w is c:
                        continue
                    key = id(w)
                    if key in queued:
                        prev = queued[key]
                        if prev is not None:
                            queued[key] = prev + (i,)
                    else:
                        queued[key] = (i,)
                        agenda.append(w)

    def check_random_integrity(self, var: VarId, original: Optional[Domain] = None) -> bool:
        """True iff an unassigned random variable still has its model domain.

        A False result means earlier propagation leaked into the stochastic
        side and the episode must halt at this variable.
        """
        if var.kind is not VarKind.RANDOM:
            raise ValueError(f"integrity check applies to random variables, got {var}")
        i = var.index
        if self.values[i] is not None:
            raise ValueError(f"random variable {i} was assigned before its integrity check")
        dom = self.domains[i]
        target = self._original[i] if original is None else original
        return dom is target or dom == target


def propagate(state: SearchState) -> SearchState:
    return state.propagate()


def assign(state: SearchState, var: VarId, value: int) -> SearchState:
    return state.assign(var, value)


def check_random_integrity(state: SearchState, var: VarId, original: Optional[Domain] = None) -> bool:
    return state.check_random_integrity(var, original)

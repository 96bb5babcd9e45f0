"""The stochastic CSP model: variables, distributions, constraints, objective, stages.

A model is the single source of problem truth and is immutable after
construction (builders call ``validate()`` and share models freely across
episodes and worker processes). Random variables carry either a fixed pmf or
an endogenous one resolved from already-fixed decision values when the episode
reaches them.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence

from .cp import (
    AllDifferent,
    Domain,
    LinearLe,
    MaximalityGuard,
    ReifiedLe,
    SearchState,
    ShortestPathCost,
    SolverFingerprint,
    VarId,
    VarKind,
)
from .networks import network_from_dict, network_to_dict

MODEL_FORMAT = "scsp-model"
MODEL_VERSION = 1

PROBABILITY_TOL = 1e-9

MAXIMIZE = "maximize"
MINIMIZE = "minimize"

EXPECTATION = "expectation"
SATISFACTION = "satisfaction"


@dataclass(frozen=True)
class Pmf:
    """Finite probability mass function over integer values."""

    pairs: tuple  # ((value, probability), ...)

    def __post_init__(self):
        pairs = tuple((int(v), float(p)) for v, p in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        values = [v for v, _ in pairs]
        if len(set(values)) != len(values):
            raise ValueError(f"pmf values must be distinct, got {values}")
        total = 0.0
        for v, p in pairs:
            if p < 0.0 or p > 1.0:
                raise ValueError(f"pmf probability for {v} outside [0, 1]: {p}")
            total += p
        if abs(total - 1.0) > PROBABILITY_TOL:
            raise ValueError(f"pmf probabilities sum to {total!r}, expected 1")
        object.__setattr__(self, "_probs", {v: p for v, p in pairs})

    @classmethod
    def uniform(cls, values: Sequence[int]) -> "Pmf":
        values = tuple(values)
        return cls(tuple((v, 1.0 / len(values)) for v in values))

    @property
    def support(self) -> tuple:
        return tuple(v for v, _ in self.pairs)

    def prob(self, value: int) -> float:
        return self._probs.get(value, 0.0)

    def sample(self, rng: random.Random) -> int:
        u = rng.random()
        acc = 0.0
        for v, p in self.pairs:
            acc += p
            if u < acc:
                return v
        return self.pairs[-1][0]


@dataclass(frozen=True)
class EndogenousPmf:
    """Pmf chosen by the value of one earlier decision variable."""

    decision: VarId
    table: tuple  # ((decision value, Pmf), ...)

    def __post_init__(self):
        object.__setattr__(self, "table", tuple(self.table))
        object.__setattr__(self, "_by_value", dict(self.table))

    def resolve(self, decision_value: int) -> Pmf:
        pmf = self._by_value.get(decision_value)
        if pmf is None:
            raise ValueError(
                f"no pmf for decision value {decision_value} of variable {self.decision.index}"
            )
        return pmf


@dataclass(frozen=True)
class Variable:
    name: str
    id: VarId
    domain: Domain


@dataclass(frozen=True)
class Stage:
    decisions: tuple
    randoms: tuple


# ---------------------------------------------------------------------------
# Objective expressions: sums/products of assigned-variable terms, reified
# conditions, and algorithm-computed outputs. Deliberately not a general
# expression language; this covers both built-in families and leaves room for
# hand-built models.


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class VarTerm:
    var: VarId


@dataclass(frozen=True)
class OutputTerm:
    name: str


@dataclass(frozen=True)
class Reify:
    condition: object  # a constraint spec with .satisfied()


@dataclass(frozen=True)
class Sum:
    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))


@dataclass(frozen=True)
class Product:
    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))


def compile_expression(expr) -> Callable:
    """Compile an expression tree into ``fn(values, outputs) -> float``.

    ``values`` is the per-index assignment list of a terminal state and
    ``outputs`` the computed-output mapping. Referencing an unassigned
    variable or a missing output is a caller bug and raises.
    """
    if isinstance(expr, Const):
        c = float(expr.value)
        return lambda values, outputs: c
    if isinstance(expr, VarTerm):
        i = expr.var.index

        def var_term(values, outputs):
            v = values[i]
            if v is None:
                raise ValueError(f"expression references unassigned variable {i}")
            return float(v)

        return var_term
    if isinstance(expr, OutputTerm):
        name = expr.name

        def output_term(values, outputs):
            try:
                return outputs[name]
            except KeyError:
                raise ValueError(f"expression references missing output {name!r}") from None

        return output_term
    if isinstance(expr, Reify):
        cond = expr.condition
        if isinstance(cond, ReifiedLe):
            li, ri = cond.lhs.index, cond.rhs.index
            return lambda values, outputs: 1.0 if values[li] <= values[ri] else 0.0
        return lambda values, outputs: 1.0 if cond.satisfied(values) else 0.0
    if isinstance(expr, Sum):
        fns = tuple(compile_expression(t) for t in expr.terms)
        return lambda values, outputs: sum(fn(values, outputs) for fn in fns)
    if isinstance(expr, Product):
        fns = tuple(compile_expression(t) for t in expr.terms)
        return lambda values, outputs: math.prod(fn(values, outputs) for fn in fns)
    raise TypeError(f"unknown expression node {expr!r}")


@dataclass(frozen=True)
class Objective:
    """Either the expectation of an expression or the probability that one
    designated constraint holds (single chance constraint, threshold θ)."""

    sense: str
    mode: str = EXPECTATION
    expr: object = None
    constraint: object = None
    threshold: Optional[float] = None

    def __post_init__(self):
        if self.sense not in (MAXIMIZE, MINIMIZE):
            raise ValueError(f"sense must be maximize or minimize, got {self.sense!r}")
        if self.mode == EXPECTATION:
            if self.expr is None:
                raise ValueError("expectation objective needs an expression")
            if self.constraint is not None or self.threshold is not None:
                raise ValueError("expectation objective takes no constraint/threshold")
        elif self.mode == SATISFACTION:
            if self.constraint is None:
                raise ValueError("satisfaction objective needs a target constraint")
            if self.threshold is None or not (0.0 < self.threshold <= 1.0):
                raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")
        else:
            raise ValueError(f"unknown objective mode {self.mode!r}")


@dataclass(eq=True)
class SCSPModel:
    """The full problem tuple plus an optional per-scenario objective bound
    used to validate the learner's step reward."""

    variables: tuple
    pmfs: Dict[VarId, Pmf]
    constraints: tuple
    objective: Objective
    stages: tuple
    endogenous: Dict[VarId, EndogenousPmf] = field(default_factory=dict)
    objective_bound: Optional[float] = None

    def __post_init__(self):
        self.variables = tuple(self.variables)
        self.constraints = tuple(self.constraints)
        self.stages = tuple(self.stages)

    # -- structure access ---------------------------------------------------

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def var(self, index: int) -> Variable:
        return self.variables[index]

    def var_by_name(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def decision_vars(self) -> list:
        return [v.id for v in self.variables if v.id.kind is VarKind.DECISION]

    def random_vars(self) -> list:
        return [v.id for v in self.variables if v.id.kind is VarKind.RANDOM]

    def initial_domains(self) -> tuple:
        return tuple(v.domain for v in self.variables)

    def pmf_for(self, var: VarId, values: Sequence) -> Pmf:
        """The pmf of ``var``, resolving endogenous hooks from fixed decisions."""
        pmf = self.pmfs.get(var)
        if pmf is not None:
            return pmf
        hook = self.endogenous[var]
        dec = values[hook.decision.index]
        if dec is None:
            raise ValueError(
                f"endogenous pmf of variable {var.index} needs decision "
                f"{hook.decision.index} fixed first"
            )
        return hook.resolve(dec)

    def fresh_state(self, fingerprint: Optional[SolverFingerprint] = None) -> SearchState:
        return SearchState(
            [v.id for v in self.variables],
            self.initial_domains(),
            self.constraints,
            fingerprint,
        )

    def assignment_from_names(self, by_name: Mapping) -> dict:
        return {self.var_by_name(name).id: int(value) for name, value in by_name.items()}

    # -- validation ----------------------------------------------------------

    def validate(self) -> "SCSPModel":
        names = set()
        for pos, v in enumerate(self.variables):
            if v.id.index != pos:
                raise ValueError(
                    f"variable {v.name!r} has index {v.id.index}, expected position {pos}"
                )
            if v.name in names:
                raise ValueError(f"duplicate variable name {v.name!r}")
            names.add(v.name)
            if v.domain.is_empty:
                raise ValueError(f"variable {v.name!r} declared with an empty domain")
        for var in self.random_vars():
            has_pmf = var in self.pmfs
            has_hook = var in self.endogenous
            if has_pmf == has_hook:
                raise ValueError(
                    f"random variable {self.var(var.index).name!r} needs exactly one of "
                    "a pmf or an endogenous hook"
                )
            support = (
                self.pmfs[var].support
                if has_pmf
                else tuple(
                    v for _, pmf in self.endogenous[var].table for v in pmf.support
                )
            )
            domain = set(self.var(var.index).domain)
            for value in support:
                if value not in domain:
                    raise ValueError(
                        f"pmf value {value} outside domain of {self.var(var.index).name!r}"
                    )
        for var in self.decision_vars():
            if var in self.pmfs or var in self.endogenous:
                raise ValueError(f"decision variable {var.index} cannot carry a pmf")
        for c in self.constraints:
            self._check_constraint_vars(c)
        if self.objective.mode == SATISFACTION and self.objective.constraint is not None:
            self._check_constraint_vars(self.objective.constraint)
        self._check_stages()
        self._check_endogenous_order()
        return self

    def _check_constraint_vars(self, c) -> None:
        kinds = []
        for i in c.var_indexes:
            if not 0 <= i < self.n_vars:
                raise ValueError(f"constraint {type(c).__name__} references unknown variable {i}")
            kinds.append(self.variables[i].id.kind)
        # a suspended recourse constraint's output stands in for its decision
        # variable, so it is exempt from the at-least-one-decision rule
        if isinstance(c, ShortestPathCost):
            for i, kind in zip(c.var_indexes, kinds):
                if kind is not VarKind.RANDOM:
                    raise ValueError(f"recourse constraint watches non-random variable {i}")
            return
        if VarKind.DECISION not in kinds:
            raise ValueError(f"constraint {type(c).__name__} contains no decision variable")

    def _check_stages(self) -> None:
        seen_d, seen_r = [], []
        for stage in self.stages:
            seen_d.extend(stage.decisions)
            seen_r.extend(stage.randoms)
        all_d, all_r = self.decision_vars(), self.random_vars()
        if sorted(v.index for v in seen_d) != sorted(v.index for v in all_d) or len(seen_d) != len(all_d):
            raise ValueError("stage structure must partition the decision variables")
        if sorted(v.index for v in seen_r) != sorted(v.index for v in all_r) or len(seen_r) != len(all_r):
            raise ValueError("stage structure must partition the random variables")

    def _check_endogenous_order(self) -> None:
        stage_of = {}
        for k, stage in enumerate(self.stages):
            for v in stage.decisions:
                stage_of[v] = k
        for var, hook in self.endogenous.items():
            if hook.decision.kind is not VarKind.DECISION:
                raise ValueError(f"endogenous hook of {var.index} keyed by a non-decision variable")
            var_stage = next(
                k for k, stage in enumerate(self.stages) if var in stage.randoms
            )
            if stage_of.get(hook.decision, len(self.stages)) > var_stage:
                raise ValueError(
                    f"endogenous pmf of variable {var.index} depends on decision "
                    f"{hook.decision.index} from a later stage"
                )


# ---------------------------------------------------------------------------
# Model-level operations


def stage_variable_order(model: SCSPModel, order_seed: Optional[int] = None) -> list:
    """Episode order: stage by stage, decisions first (optionally shuffled by
    the seeded permutation), then that stage's random variables."""
    rng = random.Random(order_seed) if order_seed is not None else None
    order = []
    for stage in model.stages:
        decisions = list(stage.decisions)
        if rng is not None:
            rng.shuffle(decisions)
        order.extend(decisions)
        order.extend(stage.randoms)
    return order


def scenario_probability(model: SCSPModel, scenario: Mapping, decisions: Mapping) -> float:
    """Probability of a complete random-variable assignment, resolving
    endogenous pmfs under the given decisions (independent marginals)."""
    values = [None] * model.n_vars
    for var, val in decisions.items():
        values[var.index] = val
    prob = 1.0
    for var in model.random_vars():
        if var not in scenario:
            raise ValueError(f"scenario misses random variable {var.index}")
        prob *= model.pmf_for(var, values).prob(scenario[var])
    return prob


def compile_objective(model: SCSPModel) -> Callable:
    """Per-scenario sample function ``fn(values, outputs) -> float``.

    Expectation mode evaluates the expression under the one scenario at hand;
    satisfaction mode returns the 0/1 indicator of the designated constraint.
    """
    if model.objective.mode == SATISFACTION:
        target = model.objective.constraint
        return lambda values, outputs: 1.0 if target.satisfied(values) else 0.0
    return compile_expression(model.objective.expr)


def compute_outputs(model: SCSPModel, values: Sequence) -> dict:
    """Evaluate the functional (suspended) constraints for a total assignment."""
    outputs = {}
    for c in model.constraints:
        if isinstance(c, ShortestPathCost):
            bits = []
            for i in c.var_indexes:
                if values[i] is None:
                    raise ValueError(f"output {c.output!r} needs variable {i} assigned")
                bits.append(values[i])
            outputs[c.output] = c.path_cost(tuple(bits))
    return outputs


def scenario_objective(model: SCSPModel, assignment: Mapping, outputs: Optional[dict] = None) -> float:
    """Objective sample for one terminal assignment (dict keyed by VarId)."""
    values = [None] * model.n_vars
    for var, val in assignment.items():
        values[var.index] = val
    if outputs is None:
        outputs = compute_outputs(model, values)
    return compile_objective(model)(values, outputs)


# ---------------------------------------------------------------------------
# Serialization (versioned, lossless round-trip)


def _expr_to_dict(expr) -> dict:
    if isinstance(expr, Const):
        return {"const": expr.value}
    if isinstance(expr, VarTerm):
        return {"var": expr.var.index}
    if isinstance(expr, OutputTerm):
        return {"output": expr.name}
    if isinstance(expr, Reify):
        return {"reify": _constraint_to_dict(expr.condition)}
    if isinstance(expr, Sum):
        return {"sum": [_expr_to_dict(t) for t in expr.terms]}
    if isinstance(expr, Product):
        return {"product": [_expr_to_dict(t) for t in expr.terms]}
    raise TypeError(f"unknown expression node {expr!r}")


def _expr_from_dict(data: dict, var_ids) -> object:
    if "const" in data:
        return Const(float(data["const"]))
    if "var" in data:
        return VarTerm(var_ids[data["var"]])
    if "output" in data:
        return OutputTerm(str(data["output"]))
    if "reify" in data:
        return Reify(_constraint_from_dict(data["reify"], var_ids))
    if "sum" in data:
        return Sum(tuple(_expr_from_dict(t, var_ids) for t in data["sum"]))
    if "product" in data:
        return Product(tuple(_expr_from_dict(t, var_ids) for t in data["product"]))
    raise ValueError(f"unknown expression node {data!r}")


def _constraint_to_dict(c) -> dict:
    if isinstance(c, AllDifferent):
        return {"type": "alldifferent", "vars": [v.index for v in c.vars]}
    if isinstance(c, LinearLe):
        return {
            "type": "linear_le",
            "coeffs": list(c.coeffs),
            "vars": [v.index for v in c.vars],
            "bound": c.bound,
        }
    if isinstance(c, ReifiedLe):
        return {"type": "reified_le", "lhs": c.lhs.index, "rhs": c.rhs.index}
    if isinstance(c, MaximalityGuard):
        return {
            "type": "maximality_guard",
            "costs": list(c.costs),
            "vars": [v.index for v in c.vars],
            "budget": c.budget,
        }
    if isinstance(c, ShortestPathCost):
        return {
            "type": "shortest_path_cost",
            "network": network_to_dict(c.network),
            "penalty": c.penalty,
            "random_vars": [v.index for v in c.random_vars],
            "output": c.output,
        }
    raise TypeError(f"unknown constraint {c!r}")


def _constraint_from_dict(data: dict, var_ids) -> object:
    kind = data.get("type")
    if kind == "alldifferent":
        return AllDifferent(tuple(var_ids[i] for i in data["vars"]))
    if kind == "linear_le":
        return LinearLe(
            tuple(int(c) for c in data["coeffs"]),
            tuple(var_ids[i] for i in data["vars"]),
            int(data["bound"]),
        )
    if kind == "reified_le":
        return ReifiedLe(var_ids[data["lhs"]], var_ids[data["rhs"]])
    if kind == "maximality_guard":
        return MaximalityGuard(
            tuple(int(c) for c in data["costs"]),
            tuple(var_ids[i] for i in data["vars"]),
            int(data["budget"]),
        )
    if kind == "shortest_path_cost":
        return ShortestPathCost(
            network_from_dict(data["network"]),
            float(data["penalty"]),
            tuple(var_ids[i] for i in data["random_vars"]),
            str(data.get("output", "z")),
        )
    raise ValueError(f"unknown constraint type {kind!r}")


def _pmf_to_list(pmf: Pmf) -> list:
    return [[v, p] for v, p in pmf.pairs]


def _pmf_from_list(pairs) -> Pmf:
    return Pmf(tuple((int(v), float(p)) for v, p in pairs))


def model_to_dict(model: SCSPModel) -> dict:
    objective = {"sense": model.objective.sense, "mode": model.objective.mode}
    if model.objective.mode == EXPECTATION:
        objective["expr"] = _expr_to_dict(model.objective.expr)
    else:
        objective["constraint"] = _constraint_to_dict(model.objective.constraint)
        objective["threshold"] = model.objective.threshold
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "variables": [
            {"name": v.name, "kind": v.id.kind.value, "domain": list(v.domain)}
            for v in model.variables
        ],
        "pmfs": {str(var.index): _pmf_to_list(pmf) for var, pmf in model.pmfs.items()},
        "endogenous": {
            str(var.index): {
                "decision": hook.decision.index,
                "table": {str(dv): _pmf_to_list(pmf) for dv, pmf in hook.table},
            }
            for var, hook in model.endogenous.items()
        },
        "constraints": [_constraint_to_dict(c) for c in model.constraints],
        "objective": objective,
        "stages": [
            {
                "decisions": [v.index for v in stage.decisions],
                "randoms": [v.index for v in stage.randoms],
            }
            for stage in model.stages
        ],
        "objective_bound": model.objective_bound,
    }


def model_from_dict(data: dict) -> SCSPModel:
    if data.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a model file (format={data.get('format')!r})")
    if data.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {data.get('version')!r}")
    variables = []
    var_ids = []
    for pos, entry in enumerate(data["variables"]):
        vid = VarId(pos, VarKind(entry["kind"]))
        var_ids.append(vid)
        variables.append(Variable(entry["name"], vid, Domain(entry["domain"])))
    pmfs = {var_ids[int(k)]: _pmf_from_list(v) for k, v in data.get("pmfs", {}).items()}
    endogenous = {}
    for k, entry in data.get("endogenous", {}).items():
        table = tuple(
            (int(dv), _pmf_from_list(pairs)) for dv, pairs in sorted(entry["table"].items(), key=lambda kv: int(kv[0]))
        )
        endogenous[var_ids[int(k)]] = EndogenousPmf(var_ids[entry["decision"]], table)
    constraints = tuple(_constraint_from_dict(c, var_ids) for c in data["constraints"])
    obj = data["objective"]
    if obj["mode"] == EXPECTATION:
        objective = Objective(obj["sense"], EXPECTATION, expr=_expr_from_dict(obj["expr"], var_ids))
    else:
        objective = Objective(
            obj["sense"],
            SATISFACTION,
            constraint=_constraint_from_dict(obj["constraint"], var_ids),
            threshold=float(obj["threshold"]),
        )
    stages = tuple(
        Stage(
            tuple(var_ids[i] for i in stage["decisions"]),
            tuple(var_ids[i] for i in stage["randoms"]),
        )
        for stage in data["stages"]
    )
    bound = data.get("objective_bound")
    model = SCSPModel(
        variables=tuple(variables),
        pmfs=pmfs,
        constraints=constraints,
        objective=objective,
        stages=stages,
        endogenous=endogenous,
        objective_bound=None if bound is None else float(bound),
    )
    return model.validate()


def save_model(model: SCSPModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> SCSPModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))

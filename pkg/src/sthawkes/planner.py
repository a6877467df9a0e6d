"""Budget-constrained node selection.

Both objectives ("rate" at the horizon, "invasion" = cumulative events)
are affine in the intervention vector: value(u) = constant + w . u with
w >= 0, so minimizing over the budget set is the 0/1 knapsack of choosing
which weights to REMOVE (intervene at) subject to the cost budget.  The
exact solver is the reference; the LP relaxation and the two ranking
heuristics mirror the strategies compared in the experiments.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BudgetNegativeError
from .expectation import StateVector, _state_for
from .model import History, InterventionPlan, ValidatedParams
from .propagators import PropagatorSet, propagators_at

KIND_RATE = "rate"
KIND_INVASION = "invasion"

METHOD_EXACT = "exact"
METHOD_LP = "lp-relax"
METHOD_MU = "mu"
METHOD_COUNT = "count"

_W_TOL = 1e-12


@dataclass(frozen=True)
class Objective:
    """Affine objective ``constant + weights . u`` over intervention vectors."""

    weights: np.ndarray
    constant: float
    kind: str

    def value(self, u: np.ndarray) -> float:
        return self.constant + float(self.weights @ np.asarray(u, dtype=float))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.weights, dtype=float).tobytes())
        h.update(repr(float(self.constant)).encode())
        h.update(self.kind.encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class PlanSolution:
    """A binary intervention choice plus its objective value and spend."""

    u: np.ndarray
    objective_value: float
    spent: float
    method: str
    relaxed_objective: Optional[float] = None


def build_objective(
    kind: str,
    params: ValidatedParams,
    plan_template: InterventionPlan,
    state: StateVector,
    props: Optional[PropagatorSet] = None,
) -> Objective:
    """Linear coefficients of the chosen total over u, at the template's (p, gamma, tau, T).

    For the rate objective,
    ``w_i = (1-gamma) mass_i [1'Psi]_i + (1-p) S_i [1'Xi A]_i`` and the
    constant collects the gamma/p floors; the invasion objective swaps in
    Gamma and Upsilon.  ``constant + w.u`` reproduces the expectation-module
    totals exactly.
    """
    dt = plan_template.T - plan_template.tau
    if props is None or abs(props.at_time - dt) > 1e-12:
        props = propagators_at(params, dt)
    if kind == KIND_RATE:
        bg_prop, hist_prop = props.psi_t, props.xi_t
    elif kind == KIND_INVASION:
        bg_prop, hist_prop = props.gamma_t, props.upsilon_t
    else:
        raise ValueError(f"unknown objective kind {kind!r}")
    s = _state_for(params, state)
    col_bg = bg_prop.sum(axis=0)  # [1' P]_i
    col_hist = (hist_prop @ params.A).sum(axis=0)  # [1' P A]_i
    gamma, p = plan_template.gamma, plan_template.p
    weights = (1.0 - gamma) * params.mass * col_bg + (1.0 - p) * s * col_hist
    constant = gamma * float(col_bg @ params.mass) + p * float(col_hist @ s)
    return Objective(np.maximum(weights, 0.0), constant, kind)


def _as_solution(
    obj: Objective, costs: np.ndarray, picked: np.ndarray, method: str, relaxed=None
) -> PlanSolution:
    n = costs.shape[0]
    u = np.ones(n)
    u[picked] = 0.0
    spent = float(costs[picked].sum())
    return PlanSolution(u, obj.value(u), spent, method, relaxed)


def _knapsack_dp(weights: np.ndarray, costs_int: np.ndarray, capacity: int):
    """Max removed weight subject to integer costs; ties -> min spend, then
    lexicographically smallest picked index set.  Returns picked indices."""
    n = weights.shape[0]
    cap = capacity
    val = np.zeros((n + 1, cap + 1))
    spend = np.zeros((n + 1, cap + 1))
    for i in range(n - 1, -1, -1):
        c = int(costs_int[i])
        w = float(weights[i])
        val_next, spend_next = val[i + 1], spend[i + 1]
        val_cur = val_next.copy()
        spend_cur = spend_next.copy()
        if c <= cap:
            take_val = np.full(cap + 1, -np.inf)
            take_spend = np.full(cap + 1, np.inf)
            take_val[c:] = w + val_next[: cap + 1 - c]
            take_spend[c:] = c + spend_next[: cap + 1 - c]
            better = take_val > val_cur
            tie = (take_val == val_cur) & (take_spend < spend_cur)
            choose = better | tie
            val_cur[choose] = take_val[choose]
            spend_cur[choose] = take_spend[choose]
        val[i] = val_cur
        spend[i] = spend_cur
    picked = []
    r = cap
    v_target, s_target = val[0][cap], spend[0][cap]
    for i in range(n):
        c = int(costs_int[i])
        if c <= r:
            tv = weights[i] + val[i + 1][r - c]
            ts = c + spend[i + 1][r - c]
            if tv == v_target and ts == s_target:
                picked.append(i)
                r -= c
                v_target = val[i + 1][r]
                s_target = spend[i + 1][r]
                continue
        v_target = val[i + 1][r]
        s_target = spend[i + 1][r]
    return picked


def _knapsack_bb(weights: np.ndarray, costs: np.ndarray, budget: float):
    """Branch-and-bound for real costs; same optimality and tie rules as the DP."""
    n = weights.shape[0]
    ratio_order = sorted(range(n), key=lambda i: (-weights[i] / costs[i], i))

    def frac_bound(taken_value: float, decided: int, remaining: float) -> float:
        bound = taken_value
        room = remaining
        for j in ratio_order:
            if j < decided or room <= 0:
                continue
            if costs[j] <= room:
                bound += weights[j]
                room -= costs[j]
            else:
                bound += weights[j] * (room / costs[j])
                break
        return bound

    best = {"value": -1.0, "spent": np.inf, "picked": None}

    def consider(value: float, spent: float, picked: list):
        if (
            value > best["value"] + _W_TOL
            or (abs(value - best["value"]) <= _W_TOL and spent < best["spent"] - _W_TOL)
            or (
                abs(value - best["value"]) <= _W_TOL
                and abs(spent - best["spent"]) <= _W_TOL
                and (best["picked"] is None or picked < best["picked"])
            )
        ):
            best["value"] = value
            best["spent"] = spent
            best["picked"] = list(picked)

    stack = [(0, 0.0, 0.0, [])]
    while stack:
        i, value, spent, picked = stack.pop()
        if i == n:
            consider(value, spent, picked)
            continue
        if frac_bound(value, i, budget - spent) < best["value"] - _W_TOL:
            continue
        # explore "take" after "skip" pop order so take-first preference
        # drives lexicographically smaller sets to be considered first
        stack.append((i + 1, value, spent, picked))
        if spent + costs[i] <= budget + 1e-9:
            stack.append((i + 1, value + weights[i], spent + costs[i], picked + [i]))
    return best["picked"] or []


def solve_exact(obj: Objective, costs: np.ndarray, budget: float) -> PlanSolution:
    """Globally optimal binary intervention under the budget.

    Integer costs use dynamic programming over the budget; fractional costs
    fall back to branch-and-bound with the fractional-knapsack bound.  Ties
    are broken toward smaller spend and then the lowest-index node set.
    """
    if budget < 0:
        raise BudgetNegativeError(f"budget must be nonnegative, got {budget}")
    costs = np.asarray(costs, dtype=float)
    w = np.asarray(obj.weights, dtype=float)
    integral = np.allclose(costs, np.round(costs), atol=1e-12)
    if integral:
        cap = int(np.floor(budget + 1e-9))
        picked = _knapsack_dp(w, np.round(costs).astype(int), cap)
    else:
        picked = _knapsack_bb(w, costs, budget)
    return _as_solution(obj, costs, np.asarray(picked, dtype=int), METHOD_EXACT)


def solve_lp_relax(obj: Objective, costs: np.ndarray, budget: float) -> PlanSolution:
    """LP relaxation (0 <= u <= 1) via the greedy ratio rule, then rounding.

    Nodes are taken in decreasing weight/cost order until the budget binds;
    at most one node is fractional and it rounds to not-intervened, so the
    reported binary plan is always feasible.  The relaxed optimum is kept
    alongside the rounded objective.
    """
    if budget < 0:
        raise BudgetNegativeError(f"budget must be nonnegative, got {budget}")
    costs = np.asarray(costs, dtype=float)
    w = np.asarray(obj.weights, dtype=float)
    n = w.shape[0]
    order = sorted(range(n), key=lambda i: (-w[i] / costs[i], i))
    picked = []
    removed = 0.0
    frac_removed = 0.0
    remaining = float(budget)
    for i in order:
        if w[i] <= 0.0:
            break  # zero-weight nodes never help; stop rather than burn budget
        if costs[i] <= remaining + 1e-12:
            picked.append(i)
            removed += w[i]
            remaining -= costs[i]
        else:
            frac_removed = w[i] * (remaining / costs[i])
            break
    relaxed = obj.constant + float(w.sum()) - (removed + frac_removed)
    return _as_solution(obj, costs, np.asarray(picked, dtype=int), METHOD_LP, relaxed)


def heuristic_plan(
    kind: str,
    params: ValidatedParams,
    history: History,
    costs: np.ndarray,
    budget: float,
    objective: Optional[Objective] = None,
) -> PlanSolution:
    """Ranking heuristics: intervene at the largest background masses
    ("mu") or at the most active nodes so far ("count"), greedily skipping
    nodes whose cost no longer fits.  The objective value is filled when an
    objective is supplied (heuristics only rank; they do not optimize one).
    """
    if budget < 0:
        raise BudgetNegativeError(f"budget must be nonnegative, got {budget}")
    costs = np.asarray(costs, dtype=float)
    n = params.n
    if kind == METHOD_MU:
        key = params.mass
    elif kind == METHOD_COUNT:
        key = history.counts(n)
    else:
        raise ValueError(f"unknown heuristic kind {kind!r}")
    order = sorted(range(n), key=lambda i: (-key[i], i))
    picked = []
    remaining = float(budget)
    for i in order:
        if costs[i] <= remaining + 1e-12:
            picked.append(i)
            remaining -= costs[i]
    idx = np.asarray(picked, dtype=int)
    u = np.ones(n)
    u[idx] = 0.0
    spent = float(costs[idx].sum())
    value = objective.value(u) if objective is not None else float("nan")
    return PlanSolution(u, value, spent, kind)


def attach_objective(solution: PlanSolution, obj: Objective) -> PlanSolution:
    """Fill in a solution's objective value under ``obj`` (used for heuristics)."""
    return PlanSolution(
        solution.u, obj.value(solution.u), solution.spent, solution.method,
        solution.relaxed_objective,
    )


def solution_record(solution: PlanSolution, obj: Objective, budget: float) -> dict:
    """JSON-ready plan record."""
    return {
        "method": solution.method,
        "u": [int(v) for v in solution.u],
        "spent": solution.spent,
        "budget": budget,
        "objective_value": solution.objective_value,
        "weights_digest": obj.digest(),
    }

"""Closed-form post-intervention expectations and their sensitivities.

Given the history summary ``S(tau)`` (per-node decayed triggering state),
an intervention plan acts through two Hadamard vectors:

* ``rho = gamma + (1 - gamma) u`` scales background mass,
* ``nu  = p + (1 - p) u`` scales the surviving history state.

For ``t > tau`` the expected intensity splits into a background-descendant
part ``Psi(t - tau) (mass * rho)`` and a history-descendant part
``Xi(t - tau) A (nu * S(tau))``; integrating over ``[tau, t]`` swaps in the
antiderivative propagators Gamma and Upsilon.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EventAfterTauError, TimeBeforeTauError, ZeroBaselineError
from .model import History, InterventionPlan, ValidatedParams
from .propagators import PropagatorSet, propagators_at

_TIME_TOL = 1e-12


@dataclass(frozen=True)
class StateVector:
    """Per-node decayed triggering contribution of all events before tau."""

    s_tau: np.ndarray
    tau: float


@dataclass(frozen=True)
class ExpectationResult:
    """Expected intensity split and expected post-intervention counts at one time.

    ``eta = eta_e + eta_h`` componentwise; ``expected_counts`` covers the
    window ``[tau, at_time]``.
    """

    eta_e: np.ndarray
    eta_h: np.ndarray
    eta: np.ndarray
    expected_counts: np.ndarray
    at_time: float


def state_at(history: History, tau: float, omega: float) -> StateVector:
    """S_i(tau) = sum over events at node i before tau of exp(-omega (tau - t_e)).

    Spatial coordinates integrate out (unit-mass spatial kernels), so only
    times and node labels are read.
    """
    ts, _, _, nodes = history.arrays()
    if ts.size and ts.max() > tau:
        raise EventAfterTauError(
            f"history contains an event at t={ts.max()} after tau={tau}"
        )
    n = int(nodes.max()) + 1 if nodes.size else 0
    s = np.zeros(max(n, 1))
    mask = ts < tau
    if mask.any():
        np.add.at(s, nodes[mask], np.exp(-omega * (tau - ts[mask])))
    return StateVector(s, float(tau))


def _state_for(params: ValidatedParams, state: StateVector) -> np.ndarray:
    s = np.zeros(params.n)
    m = min(state.s_tau.shape[0], params.n)
    s[:m] = state.s_tau[:m]
    if state.s_tau.shape[0] > params.n and np.any(state.s_tau[params.n :] != 0):
        raise ValueError("state vector has mass at nodes beyond params.n")
    return s


def _evaluate(
    params: ValidatedParams,
    plan: InterventionPlan,
    state: StateVector,
    t: float,
    paper_time_origin: bool = False,
    props: Optional[PropagatorSet] = None,
) -> ExpectationResult:
    if abs(state.tau - plan.tau) > 1e-9 * max(1.0, abs(plan.tau)):
        raise ValueError(
            f"state was computed at tau={state.tau}, plan has tau={plan.tau}"
        )
    dt = t - plan.tau
    if props is None or abs(props.at_time - dt) > _TIME_TOL:
        props = propagators_at(params, dt)
    s = _state_for(params, state)
    driven = params.A @ (plan.nu() * s)
    bg = params.mass * plan.rho()
    if paper_time_origin:
        # literal published form: background part clocked from t=0
        lit = propagators_at(params, t)
        psi, gamma = lit.psi_t, lit.gamma_t
    else:
        psi, gamma = props.psi_t, props.gamma_t
    eta_e = psi @ bg
    eta_h = props.xi_t @ driven
    counts = gamma @ bg + props.upsilon_t @ driven
    return ExpectationResult(eta_e, eta_h, eta_e + eta_h, counts, float(t))


def eta_at(
    params: ValidatedParams,
    plan: InterventionPlan,
    state: StateVector,
    t: float,
    paper_time_origin: bool = False,
    props: Optional[PropagatorSet] = None,
) -> ExpectationResult:
    """Expected post-intervention intensity per node at ``t > tau``."""
    if t <= plan.tau:
        raise TimeBeforeTauError(f"eta is defined for t > tau, got t={t}, tau={plan.tau}")
    return _evaluate(params, plan, state, t, paper_time_origin, props)


def expected_counts(
    params: ValidatedParams,
    plan: InterventionPlan,
    state: StateVector,
    t: float,
    paper_time_origin: bool = False,
    props: Optional[PropagatorSet] = None,
) -> ExpectationResult:
    """Expected number of events per node on ``[tau, t]``, ``t >= tau``."""
    if t < plan.tau:
        raise TimeBeforeTauError(
            f"counts are defined for t >= tau, got t={t}, tau={plan.tau}"
        )
    return _evaluate(params, plan, state, t, paper_time_origin, props)


def totals(result: ExpectationResult) -> tuple:
    """(total expected rate, total expected count) across nodes."""
    return float(result.eta.sum()), float(result.expected_counts.sum())


def reduction_metrics(with_plan: ExpectationResult, baseline: ExpectationResult) -> tuple:
    """Percentage reductions (rate, events) of a plan against the all-ones baseline."""
    eta_base, count_base = totals(baseline)
    if eta_base <= 0 or count_base <= 0:
        raise ZeroBaselineError(
            f"baseline totals must be positive, got rate={eta_base}, events={count_base}"
        )
    eta_plan, count_plan = totals(with_plan)
    return (
        (1.0 - eta_plan / eta_base) * 100.0,
        (1.0 - count_plan / count_base) * 100.0,
    )


def sensitivity(
    params: ValidatedParams,
    plan: InterventionPlan,
    state: StateVector,
    t: float,
    props: Optional[PropagatorSet] = None,
) -> tuple:
    """Partial derivatives of eta(t; u) and E[N(t; u)] in gamma and p.

    Returns ``(d_eta_d_gamma, d_eta_d_p, d_EN_d_gamma, d_EN_d_p)``, each an
    n-vector, all componentwise nonnegative for nonnegative ``A``: raising
    gamma or p can only raise future intensity and counts.
    """
    if t <= plan.tau:
        raise TimeBeforeTauError(
            f"sensitivities are defined for t > tau, got t={t}, tau={plan.tau}"
        )
    dt = t - plan.tau
    if props is None or abs(props.at_time - dt) > _TIME_TOL:
        props = propagators_at(params, dt)
    s = _state_for(params, state)
    picked = 1.0 - plan.u  # 1 at intervened nodes
    bg_dir = params.mass * picked
    hist_dir = params.A @ (picked * s)
    return (
        props.psi_t @ bg_dir,
        props.xi_t @ hist_dir,
        props.gamma_t @ bg_dir,
        props.upsilon_t @ hist_dir,
    )

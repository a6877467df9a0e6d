"""Sample-path generation for the network process, with and without intervention.

Two interchangeable backends:

* ``branching`` — cluster construction: background events are Poisson with
  the per-node mass rate, each event at node j spawns Poisson(a_ij / omega)
  children at node i with Exp(omega) waiting times and isotropic Gaussian
  displacements, recursively.
* ``thinning`` — Ogata-style rejection on the spatially integrated
  intensity, with locations attributed to the triggering source.

Randomness comes from counter-based Philox streams keyed by
``(seed, stream, substream)``, so parallel replications are reproducible
regardless of scheduling; ``mc_estimate`` gives replication ``r`` the
stream ``(seed, r)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EventAfterTauError, NonStationaryError
from .model import (
    Event,
    History,
    InterventionPlan,
    SingleGaussian,
    ValidatedParams,
    WeightedKDE,
)

BACKEND_BRANCHING = "branching"
BACKEND_THINNING = "thinning"

_MASK32 = 0xFFFFFFFF
_MASK64 = 0xFFFFFFFFFFFFFFFF


def philox_stream(seed: int, stream: int = 0, substream: int = 0) -> np.random.Generator:
    """Independent reproducible generator for (seed, stream, substream).

    The 128-bit Philox key is ``[seed, substream << 32 | stream]``; streams
    and substreams below 2**32 never collide.
    """
    key = [seed & _MASK64, ((substream & _MASK32) << 32) | (stream & _MASK32)]
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SimConfig:
    """Simulation request: horizon, optional intervention, seed, backend.

    ``stream``/``substream`` select an independent Philox stream under the
    same seed (see :func:`philox_stream`); they default to the base stream.
    """

    horizon: float
    intervention: Optional[InterventionPlan] = None
    seed: int = 0
    backend: str = BACKEND_BRANCHING
    stream: int = 0
    substream: int = 0

    def __post_init__(self):
        if self.backend not in (BACKEND_BRANCHING, BACKEND_THINNING):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.intervention is not None:
            if self.intervention.tau >= self.horizon:
                raise ValueError("intervention time must precede the horizon")
            if abs(self.intervention.T - self.horizon) > 1e-9:
                raise ValueError(
                    f"plan horizon T={self.intervention.T} disagrees with "
                    f"config horizon {self.horizon}"
                )


@dataclass(frozen=True)
class SimResult:
    """Events of one realization plus summary probes.

    ``counts_post`` counts events in ``[tau, T]`` (all events when no
    intervention); ``intensity_probe`` is the spatially integrated
    intensity at ``T`` given the realized path, whose expectation is the
    closed-form eta.
    """

    events: list
    counts_post: np.ndarray
    intensity_probe: np.ndarray


@dataclass(frozen=True)
class MCEstimate:
    """Replication averages of post-window counts and terminal intensity."""

    mean_counts: np.ndarray
    mean_eta: np.ndarray
    se_counts: np.ndarray
    se_eta: np.ndarray
    mean_count_total: float
    mean_eta_total: float
    se_count_total: float
    se_eta_total: float
    reps: int


def _empty_path(n: int):
    return (np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0, dtype=int))


def _check_stationary(params: ValidatedParams) -> None:
    if params.branching_ratio >= 1.0:
        raise NonStationaryError(
            f"refusing to simulate a supercritical network "
            f"(branching ratio {params.branching_ratio:.3g})"
        )


def _draw_background(rng, params: ValidatedParams, scale, t0: float, t1: float):
    n = params.n
    rates = params.mass * scale
    counts = rng.poisson(rates * (t1 - t0))
    k = int(counts.sum())
    nodes = np.repeat(np.arange(n), counts)
    times = rng.uniform(t0, t1, k)
    bg = params.background
    if isinstance(bg, SingleGaussian):
        xy = rng.normal(0.0, bg.sigma0, (k, 2))
    else:
        xy = np.empty((k, 2))
        offset = 0
        for u in range(n):
            ku = int(counts[u])
            if ku == 0:
                continue
            w = bg.beta[u]
            total = w.sum()
            if total <= 0:
                centers = np.zeros((ku, 2))
            else:
                pick = rng.choice(w.shape[0], size=ku, p=w / total)
                centers = bg.anchors[pick]
            xy[offset : offset + ku] = centers + rng.normal(0.0, bg.delta, (ku, 2))
            offset += ku
    return times, xy[:, 0], xy[:, 1], nodes


def _offspring(rng, params: ValidatedParams, times, xs, ys, nodes, T: float):
    """One branching generation: children of the given parents, clipped to T."""
    if times.size == 0:
        return _empty_path(params.n)
    n = params.n
    lam = params.A[:, nodes].T / params.omega  # (P, n) expected child counts
    counts = rng.poisson(lam)
    k = int(counts.sum())
    if k == 0:
        return _empty_path(n)
    parent = np.repeat(np.arange(times.size), counts.sum(axis=1))
    child_nodes = np.repeat(np.tile(np.arange(n), times.size), counts.ravel())
    ct = times[parent] + rng.exponential(1.0 / params.omega, k)
    disp = rng.normal(0.0, params.sigma, (k, 2))
    cx = xs[parent] + disp[:, 0]
    cy = ys[parent] + disp[:, 1]
    keep = ct <= T
    return ct[keep], cx[keep], cy[keep], child_nodes[keep]


def _history_children(rng, params: ValidatedParams, times, xs, ys, nodes, tau: float, T: float):
    """First post-tau generation triggered by surviving pre-tau events."""
    if times.size == 0:
        return _empty_path(params.n)
    n = params.n
    omega = params.omega
    lo = np.exp(-omega * (tau - times))
    hi = np.exp(-omega * (T - times))
    mass = (lo - hi) / omega  # per-parent temporal mass on (tau, T]
    lam = params.A[:, nodes].T * mass[:, None]
    counts = rng.poisson(lam)
    k = int(counts.sum())
    if k == 0:
        return _empty_path(n)
    parent = np.repeat(np.arange(times.size), counts.sum(axis=1))
    child_nodes = np.repeat(np.tile(np.arange(n), times.size), counts.ravel())
    u = rng.random(k)
    # inverse CDF of Exp(omega) truncated to (tau - t_e, T - t_e]
    wait = -np.log(lo[parent] - u * (lo[parent] - hi[parent])) / omega
    ct = times[parent] + wait
    disp = rng.normal(0.0, params.sigma, (k, 2))
    cx = xs[parent] + disp[:, 0]
    cy = ys[parent] + disp[:, 1]
    return ct, cx, cy, child_nodes


def _cascade(rng, params, gen, T: float):
    """Run the branching recursion from an initial generation; returns all events."""
    chunks = []
    while gen[0].size:
        chunks.append(gen)
        gen = _offspring(rng, params, gen[0], gen[1], gen[2], gen[3], T)
    if not chunks:
        return _empty_path(params.n)
    return tuple(np.concatenate([c[i] for c in chunks]) for i in range(4))


def _branch_plain(rng, params: ValidatedParams, T: float):
    bg = _draw_background(rng, params, 1.0, 0.0, T)
    return _cascade(rng, params, bg, T)


def _branch_continue(rng, params, hist, survive, plan: InterventionPlan):
    """Post-tau continuation given history arrays and survival flags."""
    ht, hx, hy, hn = hist
    keep = survive
    first = _history_children(
        rng, params, ht[keep], hx[keep], hy[keep], hn[keep], plan.tau, plan.T
    )
    bg = _draw_background(rng, params, plan.rho(), plan.tau, plan.T)
    gen0 = tuple(np.concatenate([a, b]) for a, b in zip(first, bg))
    return _cascade(rng, params, gen0, plan.T)


def _thin(rng, params: ValidatedParams, t0: float, T: float, init, bg_mass):
    """Ogata rejection sampling on (t0, T] with initial active contributions."""
    n = params.n
    A = params.A
    omega = params.omega
    act_t = list(init[0])
    act_n = list(init[3])
    act_x = list(init[1])
    act_y = list(init[2])
    out_t, out_x, out_y, out_n = [], [], [], []
    bg = params.background

    def node_rates(s):
        if act_t:
            d = np.exp(-omega * (s - np.asarray(act_t)))
            g = np.bincount(np.asarray(act_n, dtype=int), weights=d, minlength=n)
            return bg_mass + A @ g, d
        return bg_mass.copy(), np.zeros(0)

    s = t0
    lam_vec, _ = node_rates(s)
    bound = float(lam_vec.sum())
    while bound > 0:
        s = s + rng.exponential(1.0 / bound)
        if s > T:
            break
        lam_vec, decay = node_rates(s)
        lam_tot = float(lam_vec.sum())
        if rng.random() * bound <= lam_tot:
            i = int(rng.choice(n, p=lam_vec / lam_tot))
            # attribute the event to background or to one active parent
            contribs = A[i, np.asarray(act_n, dtype=int)] * decay if act_t else np.zeros(0)
            total_i = bg_mass[i] + contribs.sum()
            if rng.random() * total_i <= bg_mass[i]:
                if isinstance(bg, SingleGaussian):
                    x, y = rng.normal(0.0, bg.sigma0, 2)
                else:
                    w = bg.beta[i]
                    tot = w.sum()
                    if tot > 0:
                        a = int(rng.choice(w.shape[0], p=w / tot))
                        cx, cy = bg.anchors[a]
                    else:
                        cx, cy = 0.0, 0.0
                    x, y = cx + rng.normal(0.0, bg.delta), cy + rng.normal(0.0, bg.delta)
            else:
                e = int(rng.choice(len(act_t), p=contribs / contribs.sum()))
                x = act_x[e] + rng.normal(0.0, params.sigma)
                y = act_y[e] + rng.normal(0.0, params.sigma)
            out_t.append(s)
            out_x.append(float(x))
            out_y.append(float(y))
            out_n.append(i)
            act_t.append(s)
            act_n.append(i)
            act_x.append(float(x))
            act_y.append(float(y))
            lam_vec, _ = node_rates(s)
        bound = float(lam_vec.sum())
    return (
        np.asarray(out_t),
        np.asarray(out_x),
        np.asarray(out_y),
        np.asarray(out_n, dtype=int),
    )


def _thin_plain(rng, params: ValidatedParams, T: float):
    return _thin(rng, params, 0.0, T, _empty_path(params.n), params.mass.copy())


def _thin_continue(rng, params, hist, survive, plan: InterventionPlan):
    ht, hx, hy, hn = hist
    init = (ht[survive], hx[survive], hy[survive], hn[survive])
    return _thin(rng, params, plan.tau, plan.T, init, params.mass * plan.rho())


def _survival_flags(rng, plan: InterventionPlan, hist_nodes):
    """Per-event Bernoulli(p) keep flags at intervened nodes, drawn once."""
    flags = np.ones(hist_nodes.size, dtype=bool)
    intervened = plan.u[hist_nodes] == 0
    k = int(intervened.sum())
    if k:
        flags[intervened] = rng.random(k) < plan.p
    return flags


def _probe(params: ValidatedParams, bg_scale, times, nodes, at: float):
    """Spatially integrated intensity at ``at`` given realized contributions."""
    lam = params.mass * bg_scale
    if times.size:
        d = np.exp(-params.omega * (at - times))
        g = np.bincount(nodes, weights=d, minlength=params.n)
        lam = lam + params.A @ g
    return lam


def _continue_arrays(rng, params, hist, plan: InterventionPlan, backend: str):
    """(counts_post, probe, post path) for one intervened continuation."""
    survive = _survival_flags(rng, plan, hist[3])
    if backend == BACKEND_BRANCHING:
        post = _branch_continue(rng, params, hist, survive, plan)
    else:
        post = _thin_continue(rng, params, hist, survive, plan)
    counts = np.bincount(post[3], minlength=params.n).astype(float)
    keep_t = np.concatenate([hist[0][survive], post[0]])
    keep_n = np.concatenate([hist[3][survive], post[3]])
    probe = _probe(params, plan.rho(), keep_t, keep_n, plan.T)
    return counts, probe, post


def _events_list(path) -> list:
    t, x, y, n = path
    order = np.lexsort((y, x, n, t))
    return [Event(float(t[i]), float(x[i]), float(y[i]), int(n[i])) for i in order]


def _path_history(path, horizon: float) -> History:
    return History.from_events(_events_list(path), horizon)


def simulate(params: ValidatedParams, config: SimConfig) -> SimResult:
    """Generate one realization on [0, horizon], intervening mid-way if asked.

    Deterministic given ``config.seed``: the same seed and config always
    produce the identical event list.
    """
    _check_stationary(params)
    rng = philox_stream(config.seed, config.stream, config.substream)
    plan = config.intervention
    if plan is None:
        if config.backend == BACKEND_BRANCHING:
            path = _branch_plain(rng, params, config.horizon)
        else:
            path = _thin_plain(rng, params, config.horizon)
        counts = np.bincount(path[3], minlength=params.n).astype(float)
        probe = _probe(params, 1.0, path[0], path[3], config.horizon)
        return SimResult(_events_list(path), counts, probe)
    pre = (
        _branch_plain(rng, params, plan.tau)
        if config.backend == BACKEND_BRANCHING
        else _thin_plain(rng, params, plan.tau)
    )
    counts, probe, post = _continue_arrays(rng, params, pre, plan, config.backend)
    merged = tuple(np.concatenate([a, b]) for a, b in zip(pre, post))
    return SimResult(_events_list(merged), counts, probe)


def simulate_intervened(
    params: ValidatedParams,
    history: History,
    plan: InterventionPlan,
    config: SimConfig,
) -> SimResult:
    """Continue a given history past tau under the plan; events on (tau, T]."""
    _check_stationary(params)
    ts, xs, ys, nodes = history.arrays()
    if ts.size and ts.max() > plan.tau:
        raise EventAfterTauError(
            f"history extends to t={ts.max()} beyond tau={plan.tau}"
        )
    rng = philox_stream(config.seed, config.stream, config.substream)
    counts, probe, post = _continue_arrays(
        rng, params, (ts, xs, ys, nodes), plan, config.backend
    )
    return SimResult(_events_list(post), counts, probe)


def mc_estimate(
    params: ValidatedParams,
    history: History,
    plan: InterventionPlan,
    reps: int,
    seed: int,
    backend: str = BACKEND_BRANCHING,
) -> MCEstimate:
    """Replication averages of counts on [tau, T] and intensity at T.

    Replication ``r`` owns the Philox stream ``(seed, r)``, so results do
    not depend on execution order; standard errors are NaN when reps == 1.
    """
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    _check_stationary(params)
    hist = history.arrays()
    if hist[0].size and hist[0].max() > plan.tau:
        raise EventAfterTauError("history extends beyond tau")
    n = params.n
    sum_c = np.zeros(n)
    sumsq_c = np.zeros(n)
    sum_e = np.zeros(n)
    sumsq_e = np.zeros(n)
    sum_ct = sumsq_ct = sum_et = sumsq_et = 0.0
    for r in range(reps):
        rng = philox_stream(seed, r, 0)
        counts, probe, _ = _continue_arrays(rng, params, hist, plan, backend)
        sum_c += counts
        sumsq_c += counts**2
        sum_e += probe
        sumsq_e += probe**2
        ct, et = counts.sum(), probe.sum()
        sum_ct += ct
        sumsq_ct += ct**2
        sum_et += et
        sumsq_et += et**2

    def _se(s, sq, k):
        if reps < 2:
            return np.full_like(np.asarray(s, dtype=float), np.nan)
        var = np.maximum(sq / k - (s / k) ** 2, 0.0) * (k / (k - 1))
        return np.sqrt(var / k)

    return MCEstimate(
        mean_counts=sum_c / reps,
        mean_eta=sum_e / reps,
        se_counts=_se(sum_c, sumsq_c, reps),
        se_eta=_se(sum_e, sumsq_e, reps),
        mean_count_total=sum_ct / reps,
        mean_eta_total=sum_et / reps,
        se_count_total=float(_se(np.array(sum_ct), np.array(sumsq_ct), reps)),
        se_eta_total=float(_se(np.array(sum_et), np.array(sumsq_et), reps)),
        reps=reps,
    )

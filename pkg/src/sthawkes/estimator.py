"""EM fitting of the network model from an event history.

The fitted model follows the unit-mass triggering convention internally
(``A4[v, w]`` = expected offspring at node w per event at node v, temporal
kernel ``omega * exp(-omega t)``) with a weighted-KDE background whose
weights are shared per ordered node pair (``beta[u, i] = b[u, node(i)]``).
The E step attributes each event to the background or to one candidate
parent; the M step re-estimates every parameter in closed form except
``omega``, which maximizes the profile objective with ``A4`` concentrated
out (a 1-D root find), so each iteration is an exact coordinate maximizer
and the log-likelihood never decreases.

Outputs are converted to the package's canonical convention
(``a = omega * A4^T``) before they leave this module.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NoImprovementError, NonFiniteError, TooFewEventsError
from .model import (
    History,
    NetworkParams,
    SingleGaussian,
    ValidatedParams,
    WeightedKDE,
    canonicalize_triggering,
)
from .simulate import philox_stream

_ASCENT_SLACK = 1e-8


@dataclass(frozen=True)
class EMInit:
    """Optional overrides for the data-driven initialization."""

    omega: Optional[float] = None
    sigma: Optional[float] = None
    delta: Optional[float] = None
    seed: int = 0


@dataclass(frozen=True)
class EMConfig:
    max_iters: int = 200
    tol: float = 1e-7
    init: EMInit = field(default_factory=EMInit)
    bandwidth_grid: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class EMFit:
    """Fit result in the canonical convention plus fitting diagnostics."""

    params: NetworkParams
    beta: np.ndarray
    delta: float
    log_lik_trace: list
    responsibilities_digest: str
    background_fraction: float
    n_iters: int


@dataclass
class _Pairs:
    """Candidate parent->child pairs (t_j < t_k), fixed across iterations."""

    j_node: np.ndarray
    k_node: np.ndarray
    k_idx: np.ndarray
    dt: np.ndarray
    d2: np.ndarray


def _build_pairs(ts, xs, ys, nodes) -> _Pairs:
    N = ts.size
    j, k = np.triu_indices(N, k=1)
    dt = ts[k] - ts[j]
    keep = dt > 0  # simultaneous events cannot parent each other
    j, k, dt = j[keep], k[keep], dt[keep]
    d2 = (xs[k] - xs[j]) ** 2 + (ys[k] - ys[j]) ** 2
    return _Pairs(nodes[j], nodes[k], k, dt, d2)


def _kernel_sums(
    txs, tys, axs, ays, anchor_nodes, n, delta,
    exclude_self: bool = False, chunk_elems=4_000_000,
):
    """Per-anchor-node kernel sums at each target point.

    Returns ``(ksum, wd2)`` where ``ksum[k, v]`` sums
    ``exp(-d^2 / (2 delta^2))`` over anchors at node v and ``wd2`` is the
    same sum weighted by ``d^2`` (used for the bandwidth update).  With
    ``exclude_self`` the k-th target skips the k-th anchor (targets and
    anchors must then be the same points), which keeps the bandwidth
    likelihood bounded.
    """
    N, M = txs.size, axs.size
    ksum = np.zeros((N, n))
    wd2 = np.zeros((N, n))
    masks = [anchor_nodes == v for v in range(n)]
    step = max(1, chunk_elems // max(M, 1))
    for lo in range(0, N, step):
        hi = min(N, lo + step)
        d2 = (txs[lo:hi, None] - axs[None, :]) ** 2 + (tys[lo:hi, None] - ays[None, :]) ** 2
        K = np.exp(-d2 / (2.0 * delta * delta))
        if exclude_self:
            idx = np.arange(lo, hi)
            K[idx - lo, idx] = 0.0
        W = K * d2
        for v in range(n):
            if masks[v].any():
                ksum[lo:hi, v] = K[:, masks[v]].sum(axis=1)
                wd2[lo:hi, v] = W[:, masks[v]].sum(axis=1)
    return ksum, wd2


@dataclass
class _State:
    A4: np.ndarray  # (n, n), unit-mass convention, [parent, child]
    omega: float
    sigma: float
    b: np.ndarray  # (n, n) KDE weights per (target node, anchor node)
    delta: float


@dataclass
class _EStep:
    lam: np.ndarray
    pair_p: np.ndarray
    bq: np.ndarray  # (N, n) background responsibility mass per anchor node
    bg_d2: float  # responsibility-weighted squared anchor distances
    ll: float


def _estep(state: _State, pairs: _Pairs, ksum, wd2, nodes, r_by_node, counts, tau) -> _EStep:
    n = state.b.shape[0]
    norm = 2.0 * math.pi * state.delta**2 * tau
    bg_num = state.b[nodes] * ksum / norm
    bg = bg_num.sum(axis=1)
    g = (
        state.A4[pairs.j_node, pairs.k_node]
        * state.omega
        * np.exp(-state.omega * pairs.dt)
        * np.exp(-pairs.d2 / (2.0 * state.sigma**2))
        / (2.0 * math.pi * state.sigma**2)
    )
    lam = bg + np.bincount(pairs.k_idx, weights=g, minlength=bg.size)
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise NonFiniteError("an event has zero or non-finite intensity")
    pair_p = g / lam[pairs.k_idx]
    bq = bg_num / lam[:, None]
    bg_d2 = float(((state.b[nodes] * wd2 / norm) / lam[:, None]).sum())
    comp_bg = float((state.b * counts[None, :]).sum())
    edge = 1.0 - np.exp(-state.omega * np.concatenate(r_by_node))
    rows = np.concatenate([np.full(r_by_node[v].size, v, dtype=int) for v in range(n)])
    comp_trig = float((state.A4.sum(axis=1)[rows] * edge).sum())
    ll = float(np.log(lam).sum()) - comp_bg - comp_trig
    return _EStep(lam, pair_p, bq, bg_d2, ll)


def _profile_omega(P_row, P_tot, W_sum, r_by_node, omega_old):
    """Maximize the profiled triggering objective over omega (A4 concentrated out)."""
    active = [v for v in range(len(r_by_node)) if P_row[v] > 0 and r_by_node[v].size]
    if P_tot <= 0 or W_sum <= 0 or not active:
        return omega_old

    def terms(omega):
        E = np.empty(len(active))
        Ed = np.empty(len(active))
        for idx, v in enumerate(active):
            e = np.exp(-omega * r_by_node[v])
            E[idx] = np.sum(1.0 - e)
            Ed[idx] = np.sum(r_by_node[v] * e)
        return E, Ed

    pv = np.array([P_row[v] for v in active])

    def fprime(omega):
        E, Ed = terms(omega)
        return P_tot / omega - W_sum - float((pv * Ed / E).sum())

    def fval(omega):
        E, _ = terms(omega)
        return P_tot * math.log(omega) - omega * W_sum - float((pv * np.log(E)).sum())

    lo, hi = 1e-8, 1e8
    if fprime(lo) <= 0:
        cand = lo
    elif fprime(hi) >= 0:
        cand = hi
    else:
        for _ in range(200):
            mid = math.sqrt(lo * hi)
            if fprime(mid) > 0:
                lo = mid
            else:
                hi = mid
            if hi / lo < 1.0 + 1e-12:
                break
        cand = math.sqrt(lo * hi)
    # never let a root-finding hiccup break monotonicity
    return cand if fval(cand) >= fval(omega_old) else omega_old


def _mstep(
    es: _EStep, state: _State, pairs: _Pairs, nodes, r_by_node, counts,
    learn_delta: bool,
) -> _State:
    n = state.b.shape[0]
    P = np.zeros((n, n))
    np.add.at(P, (pairs.j_node, pairs.k_node), es.pair_p)
    P_tot = float(es.pair_p.sum())
    W_sum = float((es.pair_p * pairs.dt).sum())
    D2_sum = float((es.pair_p * pairs.d2).sum())

    omega = _profile_omega(P.sum(axis=1), P_tot, W_sum, r_by_node, state.omega)
    edge = np.array(
        [np.sum(1.0 - np.exp(-omega * r_by_node[v])) if r_by_node[v].size else 0.0 for v in range(n)]
    )
    A4 = np.zeros((n, n))
    nz = edge > 0
    A4[nz] = P[nz] / edge[nz, None]

    sigma = math.sqrt(D2_sum / (2.0 * P_tot)) if P_tot > 0 else state.sigma
    sigma = max(sigma, 1e-12)

    Q = np.zeros((n, n))
    np.add.at(Q, nodes, es.bq)
    Q_tot = float(Q.sum())
    b = np.zeros((n, n))
    nzc = counts > 0
    b[:, nzc] = Q[:, nzc] / counts[nzc][None, :]

    delta = state.delta
    if learn_delta and Q_tot > 0 and es.bg_d2 > 0:
        delta = max(math.sqrt(es.bg_d2 / (2.0 * Q_tot)), 1e-6)
    return _State(A4, omega, sigma, b, delta)


def _initial_state(ts, xs, ys, nodes, n, tau, init: EMInit, delta_override=None) -> _State:
    gaps = []
    spreads = []
    for v in range(n):
        sel = nodes == v
        tv = ts[sel]
        if tv.size >= 2:
            gaps.append(float(np.diff(tv).mean()))
            spreads.append(
                math.sqrt(max((np.var(xs[sel]) + np.var(ys[sel])) / 2.0, 0.0))
            )
    mean_gap = float(np.mean(gaps)) if gaps else (tau / max(ts.size, 1))
    omega = init.omega if init.omega is not None else 1.0 / max(mean_gap, 1e-9)
    # spatial scale per node, not pooled: the background is node-specific, and
    # pooling across spatially separated nodes would smear the KDE so much
    # that triggering absorbs the per-node background structure
    spread = float(np.mean(spreads)) if spreads else math.sqrt(
        max((np.var(xs) + np.var(ys)) / 2.0, 1e-12)
    )
    spread = max(spread, 1e-9)
    sigma = init.sigma if init.sigma is not None else spread
    delta = delta_override if delta_override is not None else (
        init.delta if init.delta is not None else spread
    )
    rng = philox_stream(init.seed, 0, 977)
    A4 = 0.5 * rng.random((n, n)) / n
    counts = np.bincount(nodes, minlength=n).astype(float)
    b = np.repeat((counts / max(ts.size, 1))[:, None], n, axis=1)
    return _State(A4, omega, sigma, b, delta)


_PROBE_ITERS = 25


def _run_em(ts, xs, ys, nodes, n, tau, config: EMConfig, delta: Optional[float]):
    """EM driver; the bandwidth is learned in-sample (leave-one-out anchors)
    unless fixed by ``delta`` or the init override.

    The decay-rate basin depends strongly on its start, so unless the caller
    pins omega, a few candidate decay scales are probed for a handful of
    iterations and the best chain is continued.
    """
    pairs = _build_pairs(ts, xs, ys, nodes)
    base = _initial_state(ts, xs, ys, nodes, n, tau, config.init, delta)
    learn_delta = delta is None and config.init.delta is None
    counts = np.bincount(nodes, minlength=n).astype(float)
    r_by_node = [tau - ts[nodes == v] for v in range(n)]

    def kernels(d):
        return _kernel_sums(xs, ys, xs, ys, nodes, n, d, exclude_self=True)

    class _Chain:
        def __init__(self, state):
            self.state = state
            self.ksum, self.wd2 = kernels(state.delta)
            self.es = _estep(state, pairs, self.ksum, self.wd2, nodes, r_by_node, counts, tau)
            self.trace = [self.es.ll]
            self.iters = 0
            self.converged = False

        def step(self):
            new_state = _mstep(
                self.es, self.state, pairs, nodes, r_by_node, counts, learn_delta
            )
            if new_state.delta != self.state.delta:
                self.ksum, self.wd2 = kernels(new_state.delta)
            self.state = new_state
            self.es = _estep(
                self.state, pairs, self.ksum, self.wd2, nodes, r_by_node, counts, tau
            )
            self.iters += 1
            prev = self.trace[-1]
            if self.es.ll < prev - _ASCENT_SLACK * max(1.0, abs(prev)):
                raise NoImprovementError(
                    f"log-likelihood decreased from {prev:.6f} to {self.es.ll:.6f}"
                )
            self.trace.append(self.es.ll)
            self.converged = abs(self.es.ll - prev) <= config.tol * max(1.0, abs(prev))

    omegas = [base.omega]
    if config.init.omega is None:
        w0 = 8.0 / tau
        if abs(math.log(w0 / base.omega)) > 0.3:
            omegas.append(w0)
    chains = [_Chain(_State(base.A4, w0, base.sigma, base.b, base.delta)) for w0 in omegas]
    probe = min(_PROBE_ITERS, config.max_iters)
    for chain in chains:
        while chain.iters < probe and not chain.converged:
            chain.step()
    # a chain that drove omega to the lower boundary has degenerated into a
    # static pseudo-background; prefer any non-degenerate alternative
    alive = [c for c in chains if c.state.omega > 1e-6] or chains
    best = max(alive, key=lambda c: c.trace[-1])
    while best.iters < config.max_iters and not best.converged:
        best.step()
    return best.state, best.es, best.trace, best.iters


def _heldout_score(ts, xs, ys, nodes, n, tau, config: EMConfig, delta: float) -> float:
    """Fit on the early window, score the log-likelihood of the late window."""
    split = 0.8 * tau
    train = ts <= split
    hold = ~train
    if train.sum() < 2 or hold.sum() == 0:
        return -math.inf
    st, _, _, _ = _run_em(
        ts[train], xs[train], ys[train], nodes[train], n, split, config, delta
    )
    # intensity at held-out events: KDE background from train anchors plus
    # triggering from every earlier event
    ksum, _ = _kernel_sums(
        xs[hold], ys[hold], xs[train], ys[train], nodes[train], n, st.delta
    )
    bg = (st.b[nodes[hold]] * ksum).sum(axis=1) / (2.0 * math.pi * st.delta**2 * split)
    hold_idx = np.flatnonzero(hold)
    lam = bg.copy()
    for pos, k in enumerate(hold_idx):
        dt = ts[k] - ts[:k]
        ok = dt > 0
        if not ok.any():
            continue
        d2 = (xs[k] - xs[:k][ok]) ** 2 + (ys[k] - ys[:k][ok]) ** 2
        lam[pos] += float(
            (
                st.A4[nodes[:k][ok], nodes[k]]
                * st.omega
                * np.exp(-st.omega * dt[ok])
                * np.exp(-d2 / (2.0 * st.sigma**2))
            ).sum()
            / (2.0 * math.pi * st.sigma**2)
        )
    if np.any(lam <= 0):
        return -math.inf
    mass = (st.b * np.bincount(nodes[train], minlength=n)[None, :]).sum() / split
    comp_bg = float(mass) * (tau - split)
    start = np.maximum(split - ts, 0.0)
    end = tau - ts
    comp_trig = float(
        (st.A4.sum(axis=1)[nodes] * (np.exp(-st.omega * start) - np.exp(-st.omega * end))).sum()
    )
    return float(np.log(lam).sum()) - comp_bg - comp_trig


def em_fit(events: History, n: int, config: EMConfig = EMConfig()) -> EMFit:
    """Fit the network model to an event history by latent-branching EM.

    Returns canonical-convention parameters with the fitted weighted-KDE
    background attached.  ``log_lik_trace`` records the EM objective (the
    background term at each event excludes the event's own anchor, which
    keeps the bandwidth likelihood bounded) and is nondecreasing.  The
    bandwidth is learned in-sample unless fixed via ``config.init.delta``
    or selected from ``config.bandwidth_grid`` by held-out likelihood.
    """
    ts, xs, ys, nodes = events.arrays()
    if ts.size < 2:
        raise TooFewEventsError(f"need at least 2 events, got {ts.size}")
    if nodes.max() >= n:
        raise ValueError(f"node label {nodes.max()} out of range for n={n}")
    tau = float(events.horizon)

    delta = None
    if config.bandwidth_grid:
        scores = [
            (_heldout_score(ts, xs, ys, nodes, n, tau, config, d), -d)
            for d in config.bandwidth_grid
        ]
        delta = -max(scores)[1]

    state, es, trace, iters = _run_em(ts, xs, ys, nodes, n, tau, config, delta)

    beta = state.b[:, nodes]  # expand shared weights to one column per anchor event
    background = WeightedKDE(beta, state.delta, tau, np.column_stack([xs, ys]))
    A = canonicalize_triggering(state.A4.T, state.omega, normalized=True)
    params = NetworkParams(n, background, A, state.omega, state.sigma)

    # background probability per event from the final E step
    p_bg = es.bq.sum(axis=1)
    digest = hashlib.sha256(np.round(p_bg, 9).tobytes()).hexdigest()[:16]
    return EMFit(
        params=params,
        beta=beta,
        delta=state.delta,
        log_lik_trace=trace,
        responsibilities_digest=digest,
        background_fraction=float(p_bg.mean()),
        n_iters=iters,
    )


def log_likelihood(
    events: History,
    params: NetworkParams,
    beta: Optional[np.ndarray] = None,
    delta: Optional[float] = None,
) -> float:
    """Point-process log-likelihood of the events under canonical params.

    ``sum_k log lambda(event_k) - integral of lambda`` over the observation
    window, with exact finite-horizon temporal integrals and unit spatial
    masses (the window is treated as the whole plane).  ``beta``/``delta``
    override the stored background with a weighted KDE anchored at the
    events themselves.
    """
    ts, xs, ys, nodes = events.arrays()
    N = ts.size
    tau = float(events.horizon)
    n = params.n
    if N and nodes.max() >= n:
        raise ValueError(f"node label {nodes.max()} out of range for n={n}")

    bg_model = params.background
    if beta is not None:
        if delta is None:
            raise ValueError("delta is required when beta is supplied")
        bg_model = WeightedKDE(beta, delta, tau, np.column_stack([xs, ys]))

    if isinstance(bg_model, SingleGaussian):
        d2 = xs**2 + ys**2
        bg = bg_model.mu[nodes] * np.exp(-d2 / (2.0 * bg_model.sigma0**2)) / (
            2.0 * math.pi * bg_model.sigma0**2
        )
        comp_bg = float(bg_model.mu.sum()) * tau
    else:
        ax, ay = bg_model.anchors[:, 0], bg_model.anchors[:, 1]
        # anchor weights are per (node, anchor); fold the kernel evaluation in
        lam_bg = np.zeros(N)
        step = max(1, 4_000_000 // max(ax.size, 1))
        for lo in range(0, N, step):
            hi = min(N, lo + step)
            d2 = (xs[lo:hi, None] - ax[None, :]) ** 2 + (ys[lo:hi, None] - ay[None, :]) ** 2
            K = np.exp(-d2 / (2.0 * bg_model.delta**2))
            lam_bg[lo:hi] = (bg_model.beta[nodes[lo:hi]] * K).sum(axis=1)
        bg = lam_bg / (2.0 * math.pi * bg_model.delta**2 * bg_model.window)
        comp_bg = float(bg_model.beta.sum()) / bg_model.window * tau

    omega, sigma = params.omega, params.sigma
    lam = bg.copy()
    if N >= 2:
        pairs = _build_pairs(ts, xs, ys, nodes)
        # canonical kernel a[i, j] exp(-omega dt): child node indexes rows
        g = (
            params.A[pairs.k_node, pairs.j_node]
            * np.exp(-omega * pairs.dt)
            * np.exp(-pairs.d2 / (2.0 * sigma**2))
            / (2.0 * math.pi * sigma**2)
        )
        lam = lam + np.bincount(pairs.k_idx, weights=g, minlength=N)
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise NonFiniteError("an event has zero or non-finite intensity")
    r = tau - ts
    comp_trig = float((params.A.sum(axis=0)[nodes] * (1.0 - np.exp(-omega * r))).sum()) / omega
    return float(np.log(lam).sum()) - comp_bg - comp_trig

"""Domain types for multivariate spatiotemporal self-exciting networks.

Conventions used throughout the package:

* The temporal triggering kernel is ``a_ij * exp(-omega * t)``: the entry
  ``A[i, j]`` multiplies the decaying influence of node ``j``'s events on
  node ``i``.  Fits produced under the unit-mass convention
  (``omega * exp(-omega * t)``) are converted at the estimator boundary by
  :func:`canonicalize_triggering`.
* Spatial kernels integrate to one over the plane, so every spatially
  integrated quantity depends on the background only through its per-node
  mass vector (:func:`background_mass`).
* In an intervention vector ``u``, ``u_i = 0`` means node ``i`` IS
  intervened at and ``u_i = 1`` means it is left alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import (
    BadScaleError,
    InfeasiblePlanError,
    NegativeEntryError,
    NoConvergenceError,
    NonStationaryError,
)

_FEAS_TOL = 1e-9


def _readonly(a: np.ndarray, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SingleGaussian:
    """Background with one isotropic Gaussian bump per node, centred at the origin.

    ``mu[i]`` is the spatial integral of node i's background intensity
    (events per unit time); ``sigma0`` is the spatial scale.
    """

    mu: np.ndarray
    sigma0: float

    def __post_init__(self):
        object.__setattr__(self, "mu", _readonly(np.atleast_1d(self.mu)))
        if self.sigma0 <= 0:
            raise BadScaleError(f"sigma0 must be positive, got {self.sigma0}")
        if np.any(self.mu < 0) or not np.all(np.isfinite(self.mu)):
            raise BadScaleError("background masses must be finite and nonnegative")


@dataclass(frozen=True)
class WeightedKDE:
    """Background given by a weighted Gaussian KDE over anchor locations.

    ``beta[u, i]`` weights anchor ``i``'s kernel in node ``u``'s background;
    each kernel has bandwidth ``delta`` and carries total mass
    ``beta[u, i] / window`` (``window`` is the observation length the
    weights were normalised against).  ``anchors`` is an (N, 2) array of
    anchor locations.
    """

    beta: np.ndarray
    delta: float
    window: float
    anchors: np.ndarray

    def __post_init__(self):
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        anchors = np.asarray(self.anchors, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "beta", _readonly(beta))
        object.__setattr__(self, "anchors", _readonly(anchors))
        if self.delta <= 0:
            raise BadScaleError(f"delta must be positive, got {self.delta}")
        if self.window <= 0:
            raise BadScaleError(f"window must be positive, got {self.window}")
        if beta.shape[1] != anchors.shape[0]:
            raise ValueError(
                f"beta has {beta.shape[1]} columns but {anchors.shape[0]} anchors given"
            )
        if np.any(beta < 0) or not np.all(np.isfinite(beta)):
            raise BadScaleError("KDE weights must be finite and nonnegative")


BackgroundModel = Union[SingleGaussian, WeightedKDE]


def background_mass(bg: BackgroundModel) -> np.ndarray:
    """Spatial integral of each node's background intensity (events/time)."""
    if isinstance(bg, SingleGaussian):
        return np.array(bg.mu, dtype=float)
    return np.asarray(bg.beta, dtype=float).sum(axis=1) / bg.window


@dataclass(frozen=True)
class NetworkParams:
    """Full generative model of the network.

    ``A[i, j] >= 0`` scales the influence of node j on node i under the
    canonical temporal kernel ``exp(-omega t)``; ``sigma`` is the spatial
    triggering scale.
    """

    n: int
    background: BackgroundModel
    A: np.ndarray
    omega: float
    sigma: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        object.__setattr__(self, "A", _readonly(A))
        if A.shape != (self.n, self.n):
            raise ValueError(f"A must be {self.n}x{self.n}, got {A.shape}")
        mass = background_mass(self.background)
        if mass.shape != (self.n,):
            raise ValueError(
                f"background describes {mass.shape[0]} nodes, expected {self.n}"
            )


@dataclass(frozen=True)
class ValidatedParams:
    """A :class:`NetworkParams` that passed :func:`validate`, plus diagnostics."""

    params: NetworkParams
    spectral_radius: float
    branching_ratio: float
    mass: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "mass", _readonly(background_mass(self.background)))

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def A(self) -> np.ndarray:
        return self.params.A

    @property
    def omega(self) -> float:
        return self.params.omega

    @property
    def sigma(self) -> float:
        return self.params.sigma

    @property
    def background(self) -> BackgroundModel:
        return self.params.background


def validate(params: NetworkParams) -> ValidatedParams:
    """Check model well-posedness and return the params with diagnostics.

    Raises :class:`NegativeEntryError`, :class:`BadScaleError` or
    :class:`NonStationaryError`.  Stationarity requires the spectral radius
    of ``A`` to be strictly below ``omega``; the reported branching ratio is
    their quotient.
    """
    from .propagators import spectral_radius as _sr

    if params.omega <= 0:
        raise BadScaleError(f"omega must be positive, got {params.omega}")
    if params.sigma <= 0:
        raise BadScaleError(f"sigma must be positive, got {params.sigma}")
    if np.any(params.A < 0):
        i, j = np.argwhere(params.A < 0)[0]
        raise NegativeEntryError(f"A[{i},{j}] = {params.A[i, j]} is negative")
    try:
        rho = _sr(params.A)
    except NoConvergenceError:
        rho = float(np.max(np.abs(np.linalg.eigvals(params.A))))
    if rho >= params.omega:
        raise NonStationaryError(
            f"spectral radius {rho:.6g} >= omega {params.omega:.6g}; "
            "the network is supercritical"
        )
    return ValidatedParams(params, rho, rho / params.omega)


def canonicalize_triggering(A_fit: np.ndarray, omega: float, normalized: bool) -> np.ndarray:
    """Convert an influence matrix to the canonical ``a * exp(-omega t)`` convention.

    A matrix fitted against the unit-mass kernel ``omega * exp(-omega t)``
    is rescaled by ``omega`` so expected offspring counts are preserved;
    a matrix already in the canonical convention is returned unchanged.
    """
    if omega <= 0:
        raise BadScaleError(f"omega must be positive, got {omega}")
    A_fit = np.asarray(A_fit, dtype=float)
    return omega * A_fit if normalized else A_fit.copy()


@dataclass(frozen=True)
class Event:
    """One event: time, planar location, and the node it occurred at."""

    t: float
    x: float
    y: float
    node: int


@dataclass(frozen=True)
class History:
    """Time-ordered events observed on ``[0, horizon]``."""

    events: tuple
    horizon: float

    def __post_init__(self):
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        ts = [e.t for e in events]
        if any(t1 > t2 for t1, t2 in zip(ts, ts[1:])):
            raise ValueError("events must be sorted by time")
        if events:
            if ts[0] < 0 or not all(math.isfinite(t) for t in ts):
                raise ValueError("event times must be finite and nonnegative")
            if ts[-1] > self.horizon:
                raise ValueError(
                    f"event at t={ts[-1]} lies beyond the horizon {self.horizon}"
                )
            bad = [e.node for e in events if e.node < 0]
            if bad:
                raise ValueError(f"negative node index {bad[0]}")

    @classmethod
    def from_events(cls, events, horizon: float) -> "History":
        """Build a History from possibly unsorted events."""
        ordered = sorted(events, key=lambda e: (e.t, e.node, e.x, e.y))
        return cls(tuple(ordered), horizon)

    def arrays(self):
        """Event fields as (times, xs, ys, nodes) numpy arrays."""
        if not self.events:
            z = np.zeros(0)
            return z, z.copy(), z.copy(), np.zeros(0, dtype=int)
        ts = np.array([e.t for e in self.events])
        xs = np.array([e.x for e in self.events])
        ys = np.array([e.y for e in self.events])
        nodes = np.array([e.node for e in self.events], dtype=int)
        return ts, xs, ys, nodes

    def counts(self, n: int) -> np.ndarray:
        """Number of events per node, length n."""
        nodes = np.array([e.node for e in self.events], dtype=int)
        if nodes.size and nodes.max() >= n:
            raise ValueError(f"node index {nodes.max()} out of range for n={n}")
        return np.bincount(nodes, minlength=n).astype(float)

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class InterventionPlan:
    """Which nodes are intervened at and how strongly.

    ``u`` is binary with 0 marking intervened nodes; ``p`` is the
    probability a pre-intervention event keeps its triggering power;
    ``gamma`` scales background intensity at intervened nodes after
    ``tau``; the plan runs on the window ``[tau, T]``.
    """

    u: np.ndarray
    p: float
    gamma: float
    tau: float
    T: float
    costs: np.ndarray
    budget: float

    def __post_init__(self):
        u = np.asarray(self.u)
        if not np.all((u == 0) | (u == 1)):
            raise InfeasiblePlanError("u must be a binary vector (0 = intervened)")
        object.__setattr__(self, "u", _readonly(u, dtype=float))
        object.__setattr__(self, "costs", _readonly(np.asarray(self.costs)))
        if not 0.0 <= self.p <= 1.0:
            raise InfeasiblePlanError(f"p must lie in [0, 1], got {self.p}")
        if not 0.0 < self.gamma <= 1.0:
            raise InfeasiblePlanError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.T <= self.tau:
            raise InfeasiblePlanError(f"need T > tau, got T={self.T}, tau={self.tau}")
        if np.any(self.costs <= 0):
            raise InfeasiblePlanError("all intervention costs must be positive")
        if self.budget < 0:
            raise InfeasiblePlanError(f"budget must be nonnegative, got {self.budget}")
        if self.spent > self.budget + _FEAS_TOL:
            raise InfeasiblePlanError(
                f"plan spends {self.spent:.6g} over budget {self.budget:.6g}"
            )

    @property
    def spent(self) -> float:
        return float(((1.0 - self.u) * self.costs).sum())

    def rho(self) -> np.ndarray:
        """Background multiplier per node: gamma + (1 - gamma) * u."""
        return self.gamma + (1.0 - self.gamma) * self.u

    def nu(self) -> np.ndarray:
        """Mean survival of pre-intervention triggering: p + (1 - p) * u."""
        return self.p + (1.0 - self.p) * self.u

    @classmethod
    def no_intervention(cls, n: int, tau: float, T: float, costs=None) -> "InterventionPlan":
        """The all-ones baseline plan (nothing intervened)."""
        c = np.ones(n) if costs is None else np.asarray(costs, dtype=float)
        return cls(np.ones(n), p=1.0, gamma=1.0, tau=tau, T=T, costs=c, budget=0.0)


# ---------------------------------------------------------------------------
# Model parameter file (JSON)

_KIND_SINGLE = "single_gaussian"
_KIND_KDE = "weighted_kde"


def params_to_dict(params: NetworkParams) -> dict:
    """Serializable dict in the model parameter file schema."""
    bg = params.background
    if isinstance(bg, SingleGaussian):
        bg_doc = {"kind": _KIND_SINGLE, "mu": bg.mu.tolist(), "sigma0": bg.sigma0}
    else:
        bg_doc = {
            "kind": _KIND_KDE,
            "beta": bg.beta.tolist(),
            "delta": bg.delta,
            "window": bg.window,
            "anchors": bg.anchors.tolist(),
        }
    return {
        "n": params.n,
        "omega": params.omega,
        "sigma": params.sigma,
        "background": bg_doc,
        "A": params.A.tolist(),
        "convention": "raw",
    }


def params_from_dict(doc: dict) -> NetworkParams:
    """Inverse of :func:`params_to_dict`; accepts both triggering conventions."""
    bg_doc = doc["background"]
    if bg_doc["kind"] == _KIND_SINGLE:
        bg = SingleGaussian(np.asarray(bg_doc["mu"], dtype=float), float(bg_doc["sigma0"]))
    elif bg_doc["kind"] == _KIND_KDE:
        bg = WeightedKDE(
            np.asarray(bg_doc["beta"], dtype=float),
            float(bg_doc["delta"]),
            float(bg_doc["window"]),
            np.asarray(bg_doc["anchors"], dtype=float),
        )
    else:
        raise ValueError(f"unknown background kind {bg_doc['kind']!r}")
    omega = float(doc["omega"])
    A = canonicalize_triggering(
        np.asarray(doc["A"], dtype=float), omega, normalized=doc.get("convention") == "normalized"
    )
    return NetworkParams(int(doc["n"]), bg, A, omega, float(doc["sigma"]))


def save_params(params: NetworkParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_dict(params), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(path) -> NetworkParams:
    with open(path) as fh:
        return params_from_dict(json.load(fh))

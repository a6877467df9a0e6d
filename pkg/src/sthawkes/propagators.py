"""Dense matrix-function engine for the decay-coupled network dynamics.

Every closed-form expectation in the package is built from four matrix
functions of ``M = A - omega*I``:

* ``Xi(t)  = expm(M t)`` — decay-coupled influence propagator,
* ``Psi(t) = I + A @ Upsilon(t)`` — background response propagator,
* ``Upsilon(t) = integral of Xi over [0, t]``,
* ``Gamma(t)   = integral of Psi over [0, t]``.

The integrals are read off an augmented block exponential, so no inverse
of ``M`` is ever formed and the formulas stay valid when ``omega`` is an
eigenvalue of ``A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import NoConvergenceError, NonFiniteError

if TYPE_CHECKING:  # pragma: no cover
    from .model import ValidatedParams

# Pade numerator coefficients and scaling thresholds for expm
# (diagonal approximants of degree 3/5/7/9/13).
_PADE_B = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (
        17643225600.0,
        8821612800.0,
        2075673600.0,
        302702400.0,
        30270240.0,
        2162160.0,
        110880.0,
        3960.0,
        90.0,
        1.0,
    ),
    13: (
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ),
}
_PADE_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068,
    13: 5.371920351148152,
}


def _pade_low(M: np.ndarray, m: int) -> np.ndarray:
    b = _PADE_B[m]
    n = M.shape[0]
    eye = np.eye(n)
    powers = [eye, M @ M]
    while len(powers) < (m + 1) // 2:
        powers.append(powers[1] @ powers[-1])
    U = b[1] * eye
    V = b[0] * eye
    for k in range(1, (m + 1) // 2):
        U = U + b[2 * k + 1] * powers[k]
        V = V + b[2 * k] * powers[k]
    U = M @ U
    return np.linalg.solve(V - U, V + U)


def _pade13(M: np.ndarray) -> np.ndarray:
    b = _PADE_B[13]
    n = M.shape[0]
    eye = np.eye(n)
    M2 = M @ M
    M4 = M2 @ M2
    M6 = M2 @ M4
    U = M @ (
        M6 @ (b[13] * M6 + b[11] * M4 + b[9] * M2)
        + b[7] * M6
        + b[5] * M4
        + b[3] * M2
        + b[1] * eye
    )
    V = (
        M6 @ (b[12] * M6 + b[10] * M4 + b[8] * M2)
        + b[6] * M6
        + b[4] * M4
        + b[2] * M2
        + b[0] * eye
    )
    return np.linalg.solve(V - U, V + U)


def expm(M: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring with diagonal Pade approximants."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expm expects a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NonFiniteError("expm input contains NaN or Inf")
    norm = float(np.linalg.norm(M, 1))
    for m in (3, 5, 7, 9):
        if norm <= _PADE_THETA[m]:
            return _pade_low(M, m)
    s = max(0, int(math.ceil(math.log2(norm / _PADE_THETA[13]))))
    E = _pade13(M / (2.0**s))
    for _ in range(s):
        E = E @ E
    return E


def spectral_radius(A: np.ndarray, tol: float = 1e-13, max_iters: int = 20000) -> float:
    """Largest eigenvalue modulus via power iteration.

    Nonnegative matrices are shifted by the identity so the dominant
    eigenvalue is real and unique in modulus; general matrices use the
    plain iteration and raise :class:`NoConvergenceError` when the norm
    ratio fails to settle (rotating spectra), in which case callers may
    fall back to a dense eigensolve.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.all(np.isfinite(A)):
        raise NonFiniteError("spectral_radius input contains NaN or Inf")
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    # nilpotent matrices (rho = 0) defeat ratio estimates; A^n == 0 decides
    # exactly and costs only ceil(log2 n) products
    P = A
    if not np.any(P):
        return 0.0
    for _ in range(int(math.ceil(math.log2(max(n, 2))))):
        P = P @ P
        if not np.any(P):
            return 0.0
    nonneg = bool(np.all(A >= 0))
    shift = 1.0 if nonneg else 0.0
    B = A + shift * np.eye(n)
    x = np.full(n, 1.0 / n)
    est_prev = math.inf
    stable = 0
    for _ in range(max_iters):
        y = B @ x
        m = float(np.max(np.abs(y)))
        if m == 0.0:
            if nonneg:
                # positive start vector annihilated => A is nilpotent
                return 0.0
            raise NoConvergenceError("power iteration hit the null space")
        est = m - shift
        if abs(est - est_prev) <= tol * max(1.0, abs(est)):
            stable += 1
            if stable >= 3:
                return max(est, 0.0)
        else:
            stable = 0
        est_prev = est
        x = y / m
    raise NoConvergenceError(
        f"power iteration did not settle within {max_iters} iterations"
    )


@dataclass(frozen=True)
class PropagatorSet:
    """The four propagators evaluated at one time.

    Satisfies ``Psi(0) = Xi(0) = I`` and ``Upsilon(0) = Gamma(0) = 0``;
    for entrywise-nonnegative ``A`` all four are entrywise nonnegative.
    """

    xi_t: np.ndarray
    psi_t: np.ndarray
    upsilon_t: np.ndarray
    gamma_t: np.ndarray
    at_time: float


def propagators_at(params: "ValidatedParams", t: float) -> PropagatorSet:
    """Evaluate Xi, Psi, Upsilon, Gamma at time ``t >= 0``.

    Uses the augmented block exponential of ``[[M, I, 0], [0, 0, I],
    [0, 0, 0]]`` whose first block row carries ``expm(M t)``, its first
    antiderivative and the antiderivative of that, so the result is
    well-defined even when ``omega`` is an eigenvalue of ``A``.
    """
    if t < 0:
        raise ValueError(f"propagators need t >= 0, got {t}")
    A = params.A
    n = params.n
    M = A - params.omega * np.eye(n)
    block = np.zeros((3 * n, 3 * n))
    block[:n, :n] = M
    block[:n, n : 2 * n] = np.eye(n)
    block[n : 2 * n, 2 * n :] = np.eye(n)
    E = expm(block * t)
    xi = E[:n, :n]
    upsilon = E[:n, n : 2 * n]
    int_upsilon = E[:n, 2 * n :]
    psi = np.eye(n) + A @ upsilon
    gamma = t * np.eye(n) + A @ int_upsilon
    out = PropagatorSet(xi, psi, upsilon, gamma, float(t))
    if not all(
        np.all(np.isfinite(m)) for m in (xi, psi, upsilon, gamma)
    ):  # pragma: no cover - defensive
        raise NonFiniteError("propagator evaluation produced non-finite entries")
    return out

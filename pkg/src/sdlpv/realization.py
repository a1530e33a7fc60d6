"""Controller recovery from a certificate and exact per-step discretization.

The continuous controller has the form::

    dx_K/dt = A_K x_K(t) + A_tauK x_K(t - tau) + A_TK x_K(t_k) + B_K y(t_k)
    u(t)    = C_K x_K(t_k) + D_K y(t_k),               t in [t_k, t_{k+1})

Integrating it over one sampling interval, with the delayed controller state
linearly interpolated between stored samples, gives a difference equation
whose matrices are built here from ``Phi(s) = int_0^s expm(A_K r) dr``. The
integral form is used throughout, so a singular ``A_K`` is fine.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .lpv import LPVDelayPlant

COND_LIMIT = 1e12


class SingularFactorization(ValueError):
    """``I - XY`` (or a factor of it) is numerically singular."""


@dataclass(frozen=True)
class ControllerMatrices:
    """Continuous controller frozen at one scheduling point."""

    A_K: np.ndarray
    A_tau_K: np.ndarray
    A_T_K: np.ndarray
    B_K: np.ndarray
    C_K: np.ndarray
    D_K: np.ndarray
    N: np.ndarray
    M: np.ndarray

    @property
    def n(self) -> int:
        return self.A_K.shape[0]


def factorize(X, Y) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(N, M)`` with ``N M^T = I - XY``, taking ``M = I``.

    Raises
    ------
    SingularFactorization
        If ``I - XY`` has condition number above 1e12, which means the
        coupling matrix ``[[Y, I], [I, X]]`` is not safely positive definite.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape != Y.shape or X.shape[0] != X.shape[1]:
        raise ValueError("X and Y must be square matrices of equal size")
    n = X.shape[0]
    N = np.eye(n) - X @ Y
    c = np.linalg.cond(N)
    if not np.isfinite(c) or c > COND_LIMIT:
        raise SingularFactorization(
            f"I - XY is near-singular (condition number {c:.3e}); "
            "the coupling matrix [[Y, I], [I, X]] is not positive definite enough")
    return N, np.eye(n)


def _check_invertible(name: str, M: np.ndarray):
    c = np.linalg.cond(M)
    if not np.isfinite(c) or c > COND_LIMIT:
        raise SingularFactorization(f"{name} is singular (condition number {c:.3e})")


def realize_from(frozen, X, Y, hats: dict, N=None, M=None) -> ControllerMatrices:
    """Controller matrices from the hat variables at one point.

    ``frozen`` is a :class:`~sdlpv.lpv.FrozenPlant`; ``hats`` maps ``A_hat``,
    ``A_tau_hat``, ``A_T_hat``, ``B_hat``, ``C_hat`` and ``D_K`` to arrays.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if N is None or M is None:
        N, M = factorize(X, Y)
    _check_invertible("N", N)
    _check_invertible("M", M)
    A, At, B2, C2 = frozen.A, frozen.A_tau, frozen.B2, frozen.C2
    DK = np.asarray(hats["D_K"], dtype=float)
    MinvT = np.linalg.inv(M).T

    def left(R):
        return np.linalg.solve(N, R)

    A_K = left(hats["A_hat"] - X @ A @ Y) @ MinvT
    A_tau_K = left(hats["A_tau_hat"] - X @ At @ Y) @ MinvT
    B_K = left(hats["B_hat"] - X @ B2 @ DK)
    C_K = (hats["C_hat"] - DK @ C2 @ Y) @ MinvT
    A_T_K = left(hats["A_T_hat"] - X @ B2 @ DK @ C2 @ Y - N @ B_K @ C2 @ Y
                 - X @ B2 @ C_K @ M.T) @ MinvT
    return ControllerMatrices(A_K, A_tau_K, A_T_K, B_K, C_K, DK.copy(), N, M)


def realize(cert, plant: LPVDelayPlant, rho) -> ControllerMatrices:
    """Controller matrices of certificate ``cert`` at scheduling point ``rho``."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    v = cert.variables_at(rho)
    hats = {k: getattr(v, k) for k in ("A_hat", "A_tau_hat", "A_T_hat", "B_hat", "C_hat", "D_K")}
    return realize_from(plant.at(rho), v.X, v.Y, hats)


def reconstruct_hats(ctrl: ControllerMatrices, frozen, X, Y) -> dict:
    """Map controller matrices back to the hat variables (inverse of :func:`realize_from`)."""
    A, At, B2, C2 = frozen.A, frozen.A_tau, frozen.B2, frozen.C2
    N, M, DK = ctrl.N, ctrl.M, ctrl.D_K
    return {
        "A_hat": N @ ctrl.A_K @ M.T + X @ A @ Y,
        "A_tau_hat": N @ ctrl.A_tau_K @ M.T + X @ At @ Y,
        "B_hat": N @ ctrl.B_K + X @ B2 @ DK,
        "C_hat": ctrl.C_K @ M.T + DK @ C2 @ Y,
        "A_T_hat": (N @ ctrl.A_T_K @ M.T + X @ B2 @ DK @ C2 @ Y + N @ ctrl.B_K @ C2 @ Y
                    + X @ B2 @ ctrl.C_K @ M.T),
        "D_K": DK,
    }


def roundtrip_error(cert, plant: LPVDelayPlant, rho) -> float:
    """Largest relative hat-reconstruction error at ``rho``."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    v = cert.variables_at(rho)
    ctrl = realize(cert, plant, rho)
    back = reconstruct_hats(ctrl, plant.at(rho), v.X, v.Y)
    worst = 0.0
    for k in ("A_hat", "A_tau_hat", "A_T_hat", "B_hat", "C_hat"):
        ref = getattr(v, k)
        err = np.linalg.norm(back[k] - ref) / max(np.linalg.norm(ref), 1e-300)
        worst = max(worst, float(err))
    return worst


class ContinuousController:
    """Gain-scheduled controller of a certificate, evaluated on demand.

    With constant ``X`` and ``Y`` the factorization is computed once.
    """

    def __init__(self, cert, plant: LPVDelayPlant):
        self.cert = cert
        self.plant = plant
        self._NM = None
        self._memo = (None, None)
        if cert.X.is_constant and cert.Y.is_constant:
            self._NM = factorize(cert.X.base, cert.Y.base)

    @property
    def n(self) -> int:
        return self.cert.X.shape[0]

    def at(self, rho) -> ControllerMatrices:
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        key = rho.tobytes()
        if self._memo[0] == key:
            return self._memo[1]
        v = self.cert.variables_at(rho)
        hats = {k: getattr(v, k)
                for k in ("A_hat", "A_tau_hat", "A_T_hat", "B_hat", "C_hat", "D_K")}
        N, M = self._NM if self._NM is not None else (None, None)
        out = realize_from(self.plant.at(rho), v.X, v.Y, hats, N, M)
        self._memo = (key, out)
        return out


# -- discretization -------------------------------------------------------


def matrix_phi(A, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(expm(A h), int_0^h expm(A s) ds)`` via one augmented exponential."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    h = float(h)
    if h < 0:
        raise ValueError(f"h must be nonnegative, got {h}")
    n = A.shape[0]
    if h == 0.0:
        return np.eye(n), np.zeros((n, n))
    big = np.zeros((2 * n, 2 * n))
    big[:n, :n] = A
    big[:n, n:] = np.eye(n)
    F = expm(big * h)
    E, Phi = F[:n, :n], F[:n, n:]
    if not (np.all(np.isfinite(E)) and np.all(np.isfinite(Phi))):
        raise FloatingPointError("matrix exponential produced nonfinite entries")
    return E, Phi


def interp_coeffs(t_k, t_k1, tau_k, t_l, t_l1, t_l2) -> tuple[float, float, float, float]:
    """Linear-interpolation weights of the delayed interval endpoints.

    ``c1, c2`` locate ``t_k - tau_k`` inside ``[t_l, t_l1]`` and ``c3, c4``
    locate ``t_k1 - tau_k`` inside ``[t_l1, t_l2]``.
    """
    d1 = t_l1 - t_l
    d2 = t_l2 - t_l1
    if not d1 > 0 or not d2 > 0:
        raise ValueError("bracketing sample instants must be strictly increasing")
    a = t_k - tau_k
    b = t_k1 - tau_k
    return (t_l1 - a) / d1, (a - t_l) / d1, (t_l2 - b) / d2, (b - t_l1) / d2


@dataclass(frozen=True)
class DigitalTaps:
    """One step of the discrete controller.

    ``x_d(k+1) = A_d x_d(k) + sum_i A_i x_d(t_i) + B_d y(k)`` where the sum runs
    over ``taps`` (pairs of a past sample index and matrix) and
    ``u(k) = C_d x_d(k) + D_d y(k)``.
    """

    A_d: np.ndarray
    B_d: np.ndarray
    C_d: np.ndarray
    D_d: np.ndarray
    taps: tuple[tuple[int, float, np.ndarray], ...]
    t_k: float
    t_k1: float
    tau_k: float
    coeffs: tuple[float, float, float, float]
    clamped: bool = False
    notes: tuple[str, ...] = field(default=())


def find_bracket(sample_times, t_k: float, t_k1: float, tau_k: float):
    """Index ``l`` with ``t_l <= t_k - tau_k < t_{l+1}``, clamped so ``l + 2 <= k``.

    ``sample_times`` must be increasing and end with ``t_k``. Returns
    ``(l, clamped, notes)``.
    """
    ts = np.asarray(sample_times, dtype=float)
    k = len(ts) - 1
    if k < 2 or ts[-1] != t_k:
        raise ValueError("sample history must end at t_k and hold at least three instants")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("sample instants must be strictly increasing")
    a = t_k - tau_k
    if a < ts[0]:
        raise ValueError(
            f"history bracket missing: t_k - tau_k = {a} precedes the first stored instant {ts[0]}")
    l = int(np.searchsorted(ts, a, side="right")) - 1
    notes = []
    if l + 2 > k:
        notes.append(f"delayed window reaches past t_k; bracket index moved from {l} to {k - 2}")
        l = k - 2
    b = t_k1 - tau_k
    if b >= ts[l + 2]:
        notes.append("t_k1 - tau_k lies beyond the third tap; end weight moved to the last tap")
    return l, bool(notes), tuple(notes)


def discretize_step(ctrl: ControllerMatrices, t_k: float, t_k1: float, tau_k: float,
                    sample_times) -> DigitalTaps:
    """Discrete controller matrices for the interval ``[t_k, t_k1]``.

    ``sample_times`` lists all stored sampling instants up to and including
    ``t_k`` (virtual pre-start instants included). Tap indices in the result
    refer to positions in that list.
    """
    h = float(t_k1 - t_k)
    if not h > 0:
        raise ValueError("t_k1 must exceed t_k")
    ts = np.asarray(sample_times, dtype=float)
    l, clamped, notes = find_bracket(ts, t_k, t_k1, tau_k)
    t_l, t_l1, t_l2 = ts[l], ts[l + 1], ts[l + 2]
    c1, c2, c3, c4 = interp_coeffs(t_k, t_k1, tau_k, t_l, t_l1, t_l2)
    if clamped:
        c1 = min(max(c1, 0.0), 1.0)
        c2 = 1.0 - c1
        c3 = min(max(c3, 0.0), 1.0)
        c4 = 1.0 - c3
    s2 = min(max(t_k1 - tau_k - t_l1, 0.0), h)

    E, Phi_h = matrix_phi(ctrl.A_K, h)
    _, Phi_s = matrix_phi(ctrl.A_K, s2)
    early = Phi_h - Phi_s  # weights the part whose delayed argument is before t_{l+1}
    AtK = ctrl.A_tau_K
    A_l = 0.5 * c1 * early @ AtK
    A_l1 = (0.5 * (1.0 + c2) * early + 0.5 * (1.0 + c3) * Phi_s) @ AtK
    A_l2 = 0.5 * c4 * Phi_s @ AtK
    return DigitalTaps(
        A_d=E + Phi_h @ ctrl.A_T_K,
        B_d=Phi_h @ ctrl.B_K,
        C_d=ctrl.C_K.copy(),
        D_d=ctrl.D_K.copy(),
        taps=((l, t_l, A_l), (l + 1, t_l1, A_l1), (l + 2, t_l2, A_l2)),
        t_k=float(t_k), t_k1=float(t_k1), tau_k=float(tau_k),
        coeffs=(c1, c2, c3, c4), clamped=clamped, notes=notes,
    )


class SampledDataController:
    """Digital controller stepping the exact per-interval discretization.

    Before the first real sample the history holds virtual instants spaced by
    the initial sampling period, with zero controller state.
    """

    def __init__(self, ctrl: ContinuousController):
        self.ctrl = ctrl
        self.n = ctrl.n
        self.times: list[float] = []
        self.states: list[np.ndarray] = []

    def reset(self, t0: float, rho0, period0: float, span: float):
        count = int(np.ceil(span / period0)) + 3
        self.times = [t0 - j * period0 for j in range(count, 0, -1)]
        self.states = [np.zeros(self.n) for _ in self.times]

    def sample(self, t_k: float, t_k1: float, tau_k: float, rho_k, y_k):
        """Return ``(u_k, x_d(k), notes)`` and advance the state to ``t_k1``."""
        if not self.times:
            raise RuntimeError("reset() must be called before sampling")
        x_k = self.states[-1]
        if self.times[-1] != t_k:
            # first call after reset: the current state sits at t_k
            self.times.append(float(t_k))
            self.states.append(x_k.copy())
        m = self.ctrl.at(rho_k)
        # only the recent tail can hold the bracket; keeps each step O(1)
        start = max(0, bisect.bisect_right(self.times, t_k - tau_k) - 2)
        taps = discretize_step(m, t_k, t_k1, tau_k, self.times[start:])
        y_k = np.atleast_1d(np.asarray(y_k, dtype=float))
        u_k = taps.C_d @ x_k + taps.D_d @ y_k
        x_next = taps.A_d @ x_k + taps.B_d @ y_k
        for idx, _, A_i in taps.taps:
            x_next = x_next + A_i @ self.states[start + idx]
        self.times.append(float(t_k1))
        self.states.append(x_next)
        return u_k, x_k.copy(), taps.notes

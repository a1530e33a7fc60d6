"""Indirect comparison design: Padé delay removal and Tustin discretization.

The baseline controller is the same continuous gain-scheduled controller,
with its delayed and sampled terms folded into the state matrix and then
discretized by the bilinear rule at the local sampling period. It ignores
the sample-and-hold structure on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lpv import LPVDelayPlant
from .realization import ContinuousController, ControllerMatrices


def pade_factor(s, tau: float):
    """First-order Padé approximation of ``exp(-s tau)``."""
    s = np.asarray(s, dtype=complex)
    return (1 - tau * s / 2) / (1 + tau * s / 2)


@dataclass(frozen=True)
class FrozenDelayFree:
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    C2: np.ndarray


@dataclass(frozen=True, eq=False)
class PadeAugmentedPlant:
    """Delay-free plant with one filter state per delayed state column.

    For a delayed column ``j`` the filter ``dxi/dt = -(2/tau) xi + (4/tau) x_j``
    gives ``xi - x_j`` as the Padé approximation of ``x_j(t - tau)``.
    """

    source: LPVDelayPlant
    delayed_columns: tuple[int, ...]
    order: int = 1

    @property
    def n(self) -> int:
        return self.source.n + len(self.delayed_columns)

    def at(self, rho) -> FrozenDelayFree:
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        p = self.source.at(rho)
        tau = self.source.delay(rho)
        n, J = self.source.n, list(self.delayed_columns)
        q = len(J)
        S = np.zeros((q, n))
        S[np.arange(q), J] = 1.0
        At_J = p.A_tau[:, J]
        Ct_J = p.C1_tau[:, J]
        A = np.block([[p.A - At_J @ S, At_J],
                      [(4.0 / tau) * S, -(2.0 / tau) * np.eye(q)]])
        pad = np.zeros((q, p.B1.shape[1])), np.zeros((q, p.B2.shape[1]))
        return FrozenDelayFree(
            A=A,
            B1=np.vstack([p.B1, pad[0]]),
            B2=np.vstack([p.B2, pad[1]]),
            C1=np.hstack([p.C1 - Ct_J @ S, Ct_J]),
            D11=p.D11,
            D12=p.D12,
            C2=np.hstack([p.C2, np.zeros((p.C2.shape[0], q))]),
        )

    def dc_gain(self, rho) -> np.ndarray:
        """Static gain from ``[w, u]`` to ``[z, y]`` at frozen ``rho``."""
        f = self.at(rho)
        B = np.hstack([f.B1, f.B2])
        C = np.vstack([f.C1, f.C2])
        D = np.vstack([np.hstack([f.D11, f.D12]), np.zeros((f.C2.shape[0], B.shape[1]))])
        return C @ np.linalg.solve(-f.A, B) + D


def delay_dc_gain(plant: LPVDelayPlant, rho) -> np.ndarray:
    """Static gain of the delayed plant (``exp(-s tau) = 1`` at ``s = 0``)."""
    p = plant.at(np.atleast_1d(np.asarray(rho, dtype=float)))
    B = np.hstack([p.B1, p.B2])
    C = np.vstack([p.C1 + p.C1_tau, p.C2])
    D = np.vstack([np.hstack([p.D11, p.D12]), np.zeros((p.C2.shape[0], B.shape[1]))])
    return C @ np.linalg.solve(-(p.A + p.A_tau), B) + D


def pade_augment(plant: LPVDelayPlant, order: int = 1) -> PadeAugmentedPlant:
    if order != 1:
        raise ValueError(f"only first-order Padé approximation is supported, got order {order}")
    mats = np.concatenate([plant.A_tau.coeffs, plant.C1_tau.coeffs], axis=1)
    cols = tuple(int(j) for j in np.flatnonzero(np.any(mats != 0, axis=(0, 1))))
    return PadeAugmentedPlant(plant, cols, order)


def tustin(A, B, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear map ``((I - hA/2)^-1 (I + hA/2), (I - hA/2)^-1 h B)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    if not h > 0:
        raise ValueError("h must be positive")
    L = np.eye(A.shape[0]) - 0.5 * h * A
    c = np.linalg.cond(L)
    if not np.isfinite(c) or c > 1e12:
        raise np.linalg.LinAlgError(f"I - (h/2)A is singular (condition number {c:.3e})")
    return np.linalg.solve(L, np.eye(A.shape[0]) + 0.5 * h * A), np.linalg.solve(L, h * B)


def folded_state_matrix(ctrl: ControllerMatrices) -> np.ndarray:
    """``A_K + A_tauK + A_TK``: delayed and held states treated as current."""
    return ctrl.A_K + ctrl.A_tau_K + ctrl.A_T_K


def tustin_discretize(ctrl: ControllerMatrices, h: float):
    """Return ``(A_d, B_d, C_d, D_d)`` of the folded controller."""
    A_d, B_d = tustin(folded_state_matrix(ctrl), ctrl.B_K, h)
    return A_d, B_d, ctrl.C_K.copy(), ctrl.D_K.copy()


class TustinController:
    """Baseline digital controller, re-discretized at every sampling instant."""

    def __init__(self, ctrl: ContinuousController):
        self.ctrl = ctrl
        self.n = ctrl.n
        self.x = np.zeros(self.n)

    def reset(self, t0: float, rho0, period0: float, span: float):
        self.x = np.zeros(self.n)

    def sample(self, t_k: float, t_k1: float, tau_k: float, rho_k, y_k):
        A_d, B_d, C_d, D_d = tustin_discretize(self.ctrl.at(rho_k), t_k1 - t_k)
        y_k = np.atleast_1d(np.asarray(y_k, dtype=float))
        x_k = self.x
        u_k = C_d @ x_k + D_d @ y_k
        self.x = A_d @ x_k + B_d @ y_k
        return u_k, x_k.copy(), ()


def frozen_closed_loop_abscissa(aug: PadeAugmentedPlant, ctrl: ContinuousController, rho) -> float:
    """Spectral abscissa of the Padé plant in loop with the folded continuous controller."""
    f = aug.at(rho)
    m = ctrl.at(rho)
    AK = folded_state_matrix(m)
    A = np.block([[f.A + f.B2 @ m.D_K @ f.C2, f.B2 @ m.C_K],
                  [m.B_K @ f.C2, AK]])
    return float(np.max(np.linalg.eigvals(A).real))

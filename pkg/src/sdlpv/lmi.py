"""Assembly of the delay-dependent sampled-data synthesis LMI.

:func:`assemble_blocks` is written once against duck-typed matrices: feeding it
numeric arrays gives the numeric LMI matrix (used for certificate checks), and
feeding it :class:`LinExpr` decision variables gives the coefficient data of an
SDP constraint. Both paths therefore evaluate literally the same expression.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any, Sequence

import numpy as np


class LinExpr:
    """Matrix that is affine in a decision vector x: ``const + sum_j x_j lin[j]``."""

    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, const: np.ndarray, lin: np.ndarray):
        self.const = np.asarray(const, dtype=float)
        self.lin = np.asarray(lin, dtype=float)
        if self.lin.shape[1:] != self.const.shape:
            raise ValueError(f"shape mismatch {self.lin.shape} vs {self.const.shape}")

    @property
    def m(self) -> int:
        return self.lin.shape[0]

    @property
    def shape(self):
        return self.const.shape

    @property
    def T(self) -> "LinExpr":
        return LinExpr(self.const.T, self.lin.transpose(0, 2, 1))

    def _coerce(self, other) -> "LinExpr":
        if isinstance(other, LinExpr):
            if other.m != self.m:
                raise ValueError("expressions refer to different decision vectors")
            return other
        o = np.asarray(other, dtype=float)
        if o.ndim == 0:
            if o != 0:
                raise TypeError("cannot add a nonzero scalar to a matrix expression")
            o = np.zeros(self.shape)
        if o.shape != self.shape:
            raise ValueError(f"shape mismatch {o.shape} vs {self.shape}")
        return LinExpr(o, np.zeros((self.m,) + o.shape))

    def __add__(self, other):
        o = self._coerce(other)
        return LinExpr(self.const + o.const, self.lin + o.lin)

    __radd__ = __add__

    def __neg__(self):
        return LinExpr(-self.const, -self.lin)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, s):
        if isinstance(s, LinExpr) or np.ndim(s) != 0:
            raise TypeError("only scalar multiplication is linear")
        s = float(s)
        return LinExpr(s * self.const, s * self.lin)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, LinExpr):
            raise TypeError("product of two decision expressions is not linear")
        o = np.asarray(other, dtype=float)
        return LinExpr(self.const @ o, self.lin @ o)

    def __rmatmul__(self, other):
        o = np.asarray(other, dtype=float)
        return LinExpr(o @ self.const, np.matmul(o, self.lin))

    def value(self, x) -> np.ndarray:
        return self.const + np.tensordot(np.asarray(x, dtype=float), self.lin, axes=1)


def bmat(blocks: Sequence[Sequence[Any]]):
    """Block matrix of arrays and/or :class:`LinExpr` blocks."""
    exprs = [b for row in blocks for b in row if isinstance(b, LinExpr)]
    if not exprs:
        return np.block([[np.asarray(b, dtype=float) for b in row] for row in blocks])
    m = exprs[0].m
    const = np.block([[b.const if isinstance(b, LinExpr) else np.asarray(b, dtype=float)
                       for b in row] for row in blocks])
    lin = np.block([[b.lin if isinstance(b, LinExpr)
                     else np.zeros((m,) + np.shape(b)) for b in row] for row in blocks])
    return LinExpr(const, lin)


@dataclass
class PointVariables:
    """Decision variables evaluated at one scheduling point.

    ``dP`` holds one matrix per scheduling parameter (the partial derivatives
    of ``P``). Entries may be arrays or :class:`LinExpr`.
    """

    P: Any
    dP: Sequence[Any]
    X: Any
    Y: Any
    Q_tau: Any
    Q_T: Any
    R_tau: Any
    R_T: Any
    T_tau: Any
    A_hat: Any
    A_tau_hat: Any
    A_T_hat: Any
    B_hat: Any
    C_hat: Any
    D_K: Any
    gamma: Any

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _neg_scaled_identity(g, k: int):
    I = np.eye(k)
    if isinstance(g, LinExpr):
        if g.shape != (1, 1):
            raise ValueError("gamma must be a scalar expression")
        return LinExpr(-g.const[0, 0] * I, -g.lin[:, 0, 0][:, None, None] * I)
    return -float(np.asarray(g).reshape(())) * I


def _dims(plant) -> tuple[int, int, int]:
    return plant.A.shape[0], plant.B1.shape[1], plant.C1.shape[0]


def lmi_dimension(n: int, n_w: int, n_z: int) -> int:
    return 5 * 2 * n + n_w + n_z


def closed_loop_blocks(plant, v: PointVariables) -> dict:
    """Transformed closed-loop blocks (script A, A_tau, A_T, B, C, C_tau, C_T and V)."""
    A, At, B1, B2 = plant.A, plant.A_tau, plant.B1, plant.B2
    C1, C1t, C2, D12 = plant.C1, plant.C1_tau, plant.C2, plant.D12
    n = A.shape[0]
    I = np.eye(n)
    X, Y, DK = v.X, v.Y, v.D_K
    for nm, M, shape in (("A", A, (n, n)), ("A_tau", At, (n, n)), ("B1", B1, (n, B1.shape[1])),
                         ("B2", B2, (n, B2.shape[1]))):
        if M.shape != shape:
            raise ValueError(f"plant {nm} has shape {M.shape}, expected {shape}")
    if np.shape(X) != (n, n) or np.shape(Y) != (n, n):
        raise ValueError("X and Y must be n x n")

    return {
        "V": bmat([[Y, I], [I, X]]),
        "A": bmat([[A @ Y, A], [v.A_hat, X @ A]]),
        "A_tau": bmat([[At @ Y, At], [v.A_tau_hat, X @ At]]),
        "A_T": bmat([[B2 @ v.C_hat, B2 @ DK @ C2], [v.A_T_hat, v.B_hat @ C2]]),
        "B": bmat([[B1], [X @ B1]]),
        "C": bmat([[C1 @ Y, C1]]),
        "C_tau": bmat([[C1t @ Y, C1t]]),
        "C_T": bmat([[D12 @ v.C_hat, D12 @ DK @ C2]]),
    }


def assemble_blocks(plant, v: PointVariables, lambdas: Sequence[float], tau_bar: float,
                    T_bar: float, signs, nu, dtau, dT):
    """Seven-by-seven block LMI matrix at one scheduling point and sign vertex.

    ``plant`` is a :class:`~sdlpv.lpv.FrozenPlant`; ``lambdas`` is
    ``(l2, l3, l4, l5)``; ``signs``, ``nu``, ``dtau`` and ``dT`` are per-parameter
    vectors (sign choice, rate bound, delay gradient and sampling-period
    gradient). The lower triangle is filled by transposition, so the result is
    exactly symmetric whenever the symmetric inputs are.
    """
    l2, l3, l4, l5 = (float(l) for l in lambdas)
    signs = np.atleast_1d(np.asarray(signs, dtype=float))
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    dtau = np.atleast_1d(np.asarray(dtau, dtype=float))
    dT = np.atleast_1d(np.asarray(dT, dtype=float))
    if not (len(signs) == len(nu) == len(dtau) == len(dT) == len(v.dP)):
        raise ValueError("sign vector, rate bounds and gradients must all have length n_s")
    n, n_w, n_z = _dims(plant)
    if plant.D11.shape != (n_z, n_w):
        raise ValueError(f"D11 has shape {plant.D11.shape}, expected {(n_z, n_w)}")

    S = closed_loop_blocks(plant, v)
    sA, sAt, sAT, sB = S["A"], S["A_tau"], S["A_T"], S["B"]
    sC, sCt, sCT, V = S["C"], S["C_tau"], S["C_T"], S["V"]
    Qt, QT, Rt, RT, Tt = v.Q_tau, v.Q_T, v.R_tau, v.R_T, v.T_tau

    rate_P = None
    for s_i, nu_i, dP_i in zip(signs, nu, v.dP):
        term = (s_i * nu_i) * dP_i
        rate_P = term if rate_P is None else rate_P + term
    rate_tau = float(np.sum(signs * nu * dtau))
    rate_T = float(np.sum(signs * nu * dT))

    # each He(.) term is summed first so the diagonal blocks stay bitwise symmetric
    Xi11 = rate_P + Qt - Rt + tau_bar ** 2 * Tt + QT - RT + (sA + sA.T)
    Xi33 = -(1.0 - rate_tau) * Qt - Rt + l3 * (sAt + sAt.T)
    Xi44 = -(1.0 - rate_T) * QT - RT + l4 * (sAT + sAT.T)

    two_n = 2 * n
    Z = np.zeros
    gI_w = _neg_scaled_identity(v.gamma, n_w)
    gI_z = _neg_scaled_identity(v.gamma, n_z)

    # upper triangle, row by row
    U = [[None] * 7 for _ in range(7)]
    U[0][0] = Xi11
    U[0][1] = v.P - V + l2 * sA.T
    U[0][2] = Rt + sAt + l3 * sA.T
    U[0][3] = RT + sAT + l4 * sA.T
    U[0][4] = l5 * sA.T
    U[0][5] = sB
    U[0][6] = sC.T
    U[1][1] = tau_bar ** 2 * Rt + T_bar ** 2 * RT - 2.0 * l2 * V
    U[1][2] = l2 * sAt - l3 * V
    U[1][3] = l2 * sAT - l4 * V
    U[1][4] = -l5 * V
    U[1][5] = l2 * sB
    U[1][6] = Z((two_n, n_z))
    U[2][2] = Xi33
    U[2][3] = l3 * sAT + l4 * sAt.T
    U[2][4] = l5 * sAt.T
    U[2][5] = l3 * sB
    U[2][6] = sCt.T
    U[3][3] = Xi44
    U[3][4] = l5 * sAT.T
    U[3][5] = l4 * sB
    U[3][6] = sCT.T
    U[4][4] = -1.0 * Tt
    U[4][5] = l5 * sB
    U[4][6] = Z((two_n, n_z))
    U[5][5] = gI_w
    U[5][6] = plant.D11.T
    U[6][6] = gI_z
    for i in range(7):
        for j in range(i):
            U[i][j] = U[j][i].T
    return bmat(U)


def positivity_blocks(v: PointVariables) -> dict:
    """Matrices that must be positive definite at a point: P and V."""
    n = np.shape(v.X)[0]
    I = np.eye(n)
    return {"P": v.P, "V": bmat([[v.Y, I], [I, v.X]])}

"""Standard-form semidefinite programs.

A problem is::

    minimize    c^T x
    subject to  F0^(k) + sum_j x_j F_j^(k)  <=  0     (negative semidefinite), k = 1..K

Each constraint stores its symmetric matrices as packed upper triangles
(column-major over ``i <= j``) in a sparse ``(dim*(dim+1)/2, m+1)`` array whose
column 0 is ``F0``. Two interior-point backends are wired in: ``cvxopt``
(default) and ``clarabel``.
"""

from __future__ import annotations

import enum
import io
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp


class SolverStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical-failure"


def packed_index(dim: int):
    """Row/column indices of the packed upper triangle, in storage order."""
    cols = np.concatenate([np.full(j + 1, j) for j in range(dim)])
    rows = np.concatenate([np.arange(j + 1) for j in range(dim)])
    return rows, cols


def pack(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    r, c = packed_index(M.shape[0])
    return M[r, c]


def unpack(v: np.ndarray, dim: int) -> np.ndarray:
    r, c = packed_index(dim)
    out = np.zeros((dim, dim))
    out[r, c] = v
    out[c, r] = v
    return out


@dataclass(frozen=True, eq=False)
class LMIConstraint:
    """``F0 + sum_j x_j F_j <= 0`` stored as packed sparse columns."""

    dim: int
    coeffs: sp.csc_matrix
    name: str = ""

    def __post_init__(self):
        C = sp.csc_matrix(self.coeffs, dtype=float)
        C.eliminate_zeros()
        C.sort_indices()
        if C.shape[0] != self.dim * (self.dim + 1) // 2:
            raise ValueError(
                f"packed coefficient rows {C.shape[0]} do not match dimension {self.dim}")
        object.__setattr__(self, "coeffs", C)

    @classmethod
    def from_dense(cls, F0, Fs, name: str = "", sym_tol: float = 1e-12) -> "LMIConstraint":
        """Build from a constant matrix and a stack/list of coefficient matrices."""
        F0 = np.asarray(F0, dtype=float)
        Fs = np.asarray(Fs, dtype=float).reshape(-1, *F0.shape)
        dim = F0.shape[0]
        for M in (F0, *Fs):
            if M.shape != (dim, dim):
                raise ValueError("all constraint matrices must share one square shape")
            if np.max(np.abs(M - M.T), initial=0.0) > sym_tol * max(1.0, np.max(np.abs(M), initial=0.0)):
                raise ValueError("constraint matrices must be symmetric")
        r, c = packed_index(dim)
        dense = np.concatenate([F0[None], Fs], axis=0)[:, r, c].T
        return cls(dim, sp.csc_matrix(dense), name)

    @property
    def m(self) -> int:
        return self.coeffs.shape[1] - 1

    def matrix(self, j: int) -> np.ndarray:
        return unpack(self.coeffs[:, j].toarray().ravel(), self.dim)

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v = self.coeffs @ np.concatenate([[1.0], x])
        return unpack(np.asarray(v).ravel(), self.dim)

    def scaled(self, factor: float) -> "LMIConstraint":
        return LMIConstraint(self.dim, self.coeffs * factor, self.name)


@dataclass(frozen=True, eq=False)
class SDPProblem:
    c: np.ndarray
    constraints: tuple[LMIConstraint, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "names", tuple(self.names))
        for k in self.constraints:
            if k.m != c.shape[0]:
                raise ValueError(
                    f"constraint {k.name!r} has {k.m} variables, cost vector has {c.shape[0]}")
        if self.names and len(self.names) != c.shape[0]:
            raise ValueError("variable name map must have one entry per variable")

    @property
    def m(self) -> int:
        return self.c.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(k.dim for k in self.constraints)

    def __eq__(self, other):
        if not isinstance(other, SDPProblem):
            return NotImplemented
        if self.m != other.m or self.dims != other.dims or self.names != other.names:
            return False
        if not np.array_equal(self.c, other.c):
            return False
        return all((a.coeffs != b.coeffs).nnz == 0
                   for a, b in zip(self.constraints, other.constraints))

    __hash__ = None


@dataclass
class SDPSolution:
    x: np.ndarray | None
    objective: float
    status: SolverStatus
    iterations: int
    max_residual: float | None
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status in (SolverStatus.OPTIMAL, SolverStatus.FEASIBLE)


def residual(p: SDPProblem, x) -> np.ndarray:
    """Largest eigenvalue of each constraint matrix at ``x`` (no tolerance applied)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (p.m,):
        raise ValueError(f"x must have length {p.m}")
    return np.array([np.linalg.eigvalsh(k.evaluate(x))[-1] for k in p.constraints])


def _solve_cvxopt(p: SDPProblem, tol_feas: float, tol_gap: float, max_iters: int):
    from cvxopt import matrix, solvers, spmatrix

    Gs, hs = [], []
    for k in p.constraints:
        d = k.dim
        r, c = packed_index(d)
        C = k.coeffs.tocoo()
        i1, i2 = r[C.row], c[C.row]
        const = C.col == 0
        F0 = np.zeros((d, d))
        F0[i1[const], i2[const]] = C.data[const]
        F0[i2[const], i1[const]] = C.data[const]
        lin = ~const
        off = lin & (i1 != i2)
        rows = np.concatenate([i1[lin] + d * i2[lin], i2[off] + d * i1[off]])
        cols = np.concatenate([C.col[lin] - 1, C.col[off] - 1])
        vals = np.concatenate([C.data[lin], C.data[off]])
        Gs.append(spmatrix(vals.tolist(), rows.tolist(), cols.tolist(), (d * d, p.m)))
        hs.append(matrix(-F0))
    opts = {"show_progress": False, "maxiters": max_iters,
            "abstol": tol_gap * 1e-2, "reltol": tol_gap, "feastol": tol_feas * 1e-1,
            "refinement": 1}
    sol = solvers.sdp(matrix(p.c), Gs=Gs, hs=hs, options=opts, kktsolver="chol")
    status = sol["status"]
    x = None if sol["x"] is None else np.array(sol["x"]).ravel()
    stats = {
        "backend": "cvxopt",
        "backend_status": status,
        "gap": sol.get("gap"),
        "relative_gap": sol.get("relative gap"),
        "primal_infeasibility": sol.get("primal infeasibility"),
        "dual_infeasibility": sol.get("dual infeasibility"),
    }
    if status == "optimal":
        kind = "optimal"
    elif status == "primal infeasible":
        kind = "infeasible"
    else:
        kind = "unknown"
    return kind, x, int(sol.get("iterations") or 0), stats


def _solve_clarabel(p: SDPProblem, tol_feas: float, tol_gap: float, max_iters: int):
    import clarabel

    blocks, b, cones = [], [], []
    for k in p.constraints:
        d = k.dim
        r, c = packed_index(d)
        scale = np.where(r == c, 1.0, math.sqrt(2.0))
        C = sp.diags(scale) @ k.coeffs
        blocks.append(C[:, 1:])
        b.append(-np.asarray(C[:, 0].toarray()).ravel())
        cones.append(clarabel.PSDTriangleConeT(d))
    A = sp.vstack(blocks).tocsc()
    P = sp.csc_matrix((p.m, p.m))
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.max_iter = max_iters
    s.tol_feas = tol_feas * 1e-1
    s.tol_gap_rel = tol_gap
    s.tol_gap_abs = tol_gap * 1e-2
    s.max_threads = 1
    solver = clarabel.DefaultSolver(P, p.c, A, np.concatenate(b), cones, s)
    sol = solver.solve()
    status = str(sol.status)
    x = np.asarray(sol.x, dtype=float)
    stats = {"backend": "clarabel", "backend_status": status}
    if status in ("Solved", "AlmostSolved"):
        kind = "optimal" if status == "Solved" else "unknown"
    elif "PrimalInfeasible" in status:
        kind, x = "infeasible", None
    else:
        kind = "unknown"
    return kind, x, int(sol.iterations), stats


_BACKENDS = {"cvxopt": _solve_cvxopt, "clarabel": _solve_clarabel}


def split_block_diagonal(p: SDPProblem) -> SDPProblem:
    """Equivalent problem with block-diagonal constraints split into their blocks.

    Rows/columns are grouped by connected components of the joint sparsity
    pattern of ``F0..Fm``; identical resulting constraints are kept once.
    """
    from scipy.sparse.csgraph import connected_components

    out: list[LMIConstraint] = []
    seen: set[bytes] = set()
    for k in p.constraints:
        d = k.dim
        r, c = packed_index(d)
        nz = np.unique(k.coeffs.tocoo().row)
        adj = sp.coo_matrix((np.ones(len(nz)), (r[nz], c[nz])), shape=(d, d))
        ncomp, label = connected_components(adj, directed=False)
        parts = [np.flatnonzero(label == g) for g in range(ncomp)] if ncomp > 1 else [np.arange(d)]
        for idx in parts:
            if len(idx) == d:
                sub = k
            else:
                sub_d = len(idx)
                sr, sc = packed_index(sub_d)
                rows = idx[sr]
                cols = idx[sc]
                lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
                src = hi * (hi + 1) // 2 + lo
                sub = LMIConstraint(sub_d, k.coeffs[src, :], f"{k.name}#{idx[0]}")
            key = sub.dim.to_bytes(4, "little") + sub.coeffs.indptr.tobytes() + \
                sub.coeffs.indices.tobytes() + sub.coeffs.data.tobytes()
            if key in seen:
                continue
            seen.add(key)
            out.append(sub)
    return SDPProblem(p.c, tuple(out), p.names)


def solve(p: SDPProblem, tol_feas: float = 1e-7, tol_gap: float = 1e-6,
          backend: str = "cvxopt", max_iters: int = 200) -> SDPSolution:
    """Minimize ``c^T x`` subject to the constraints of ``p``.

    The returned status is decided from the exact residual of the backend's
    point, not only from the backend's own report: ``optimal`` requires the
    backend to claim optimality *and* every constraint eigenvalue to be
    ``<= tol_feas``; a point that meets the residual test without a clean
    backend report is ``feasible``.
    """
    try:
        run = _BACKENDS[backend]
    except KeyError:
        raise ValueError(f"unknown SDP backend {backend!r}; choose from {sorted(_BACKENDS)}")
    try:
        kind, x, iters, stats = run(split_block_diagonal(p), tol_feas, tol_gap, max_iters)
    except (ArithmeticError, ValueError) as exc:
        return SDPSolution(None, math.nan, SolverStatus.NUMERICAL_FAILURE, 0, None,
                           {"backend": backend, "error": str(exc)})
    if kind == "infeasible" or x is None or not np.all(np.isfinite(x)):
        status = SolverStatus.INFEASIBLE if kind == "infeasible" else SolverStatus.NUMERICAL_FAILURE
        return SDPSolution(None, math.nan, status, iters, None, stats)
    res = residual(p, x)
    worst = float(res.max()) if res.size else -math.inf
    if worst <= tol_feas:
        status = SolverStatus.OPTIMAL if kind == "optimal" else SolverStatus.FEASIBLE
    else:
        status = SolverStatus.NUMERICAL_FAILURE
    return SDPSolution(x, float(p.c @ x), status, iters, worst, stats)


# ---------------------------------------------------------------------------
# plain-text sparse exchange format
# ---------------------------------------------------------------------------

_MAGIC = "sdlpv-sdp 1"


def write_sdp(p: SDPProblem, dest) -> None:
    """Write ``p`` as text; floats use shortest round-trip repr (bit exact)."""
    lines = [_MAGIC, f"m {p.m}", f"constraints {len(p.constraints)}",
             "dims " + " ".join(str(d) for d in p.dims)]
    for j in np.flatnonzero(p.c):
        lines.append(f"cost {j + 1} {float(p.c[j])!r}")
    for j, nm in enumerate(p.names):
        lines.append(f"name {j + 1} {nm}")
    for k, con in enumerate(p.constraints, start=1):
        if con.name:
            lines.append(f"label {k} {con.name}")
    for k, con in enumerate(p.constraints, start=1):
        r, c = packed_index(con.dim)
        C = con.coeffs.tocsc()
        for j in range(C.shape[1]):
            lo, hi = C.indptr[j], C.indptr[j + 1]
            for pk, v in zip(C.indices[lo:hi], C.data[lo:hi]):
                lines.append(f"{k} {j} {r[pk] + 1} {c[pk] + 1} {float(v)!r}")
    text = "\n".join(lines) + "\n"
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
    else:
        dest.write(text)


def read_sdp(src) -> SDPProblem:
    if isinstance(src, (str, os.PathLike)):
        with open(src, encoding="ascii") as fh:
            text = fh.read()
    else:
        text = src.read()
    lines = io.StringIO(text).read().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ValueError("not an sdlpv SDP file")
    m = K = None
    dims: list[int] = []
    cost: dict[int, float] = {}
    names: dict[int, str] = {}
    labels: dict[int, str] = {}
    entries: dict[int, tuple[list, list, list]] = {}
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        head, _, rest = line.partition(" ")
        try:
            if head == "m":
                m = int(rest)
            elif head == "constraints":
                K = int(rest)
            elif head == "dims":
                dims = [int(t) for t in rest.split()]
            elif head == "cost":
                j, v = rest.split()
                cost[int(j) - 1] = float(v)
            elif head == "name":
                j, _, nm = rest.partition(" ")
                names[int(j) - 1] = nm
            elif head == "label":
                k, _, nm = rest.partition(" ")
                labels[int(k) - 1] = nm
            else:
                k, j, i1, i2, v = line.split()
                k, j, i1, i2 = int(k) - 1, int(j), int(i1) - 1, int(i2) - 1
                if i1 > i2:
                    i1, i2 = i2, i1
                e = entries.setdefault(k, ([], [], []))
                e[0].append(i2 * (i2 + 1) // 2 + i1)
                e[1].append(j)
                e[2].append(float(v))
        except ValueError as exc:
            raise ValueError(f"line {ln}: cannot parse {line!r}") from exc
    if m is None or K is None or len(dims) != K:
        raise ValueError("incomplete SDP header")
    c = np.zeros(m)
    for j, v in cost.items():
        c[j] = v
    cons = []
    for k, d in enumerate(dims):
        rows, cols, vals = entries.get(k, ([], [], []))
        C = sp.csc_matrix((vals, (rows, cols)), shape=(d * (d + 1) // 2, m + 1))
        cons.append(LMIConstraint(d, C, labels.get(k, "")))
    nm: Sequence[str] = tuple(names[j] for j in range(m)) if names else ()
    return SDPProblem(c, tuple(cons), nm)

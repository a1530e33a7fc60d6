"""Gain-scheduled sampled-data controller synthesis over a parameter grid.

For fixed line-search scalars ``(l2, l3, l4, l5)`` the synthesis conditions are
an SDP in the remaining decision variables; :func:`synthesize` sweeps the
Cartesian product of the ``l2``/``l3``/``l4`` lists and keeps the smallest
achieved ``gamma``.

Parameter-dependent decision variables are parametrized internally in the
normalized coordinate ``theta = (rho - center) / half_width`` (better SDP
conditioning); certificates store them back in physical ``M0 + rho M1`` form.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import sdp
from .lmi import LinExpr, PointVariables, assemble_blocks, bmat, lmi_dimension
from .lpv import AffineMatrixFn, Grid, LPVDelayPlant, make_grid, vertex_signs

logger = logging.getLogger(__name__)

AFFINE_CAPABLE = ("P", "X", "Y", "A_hat", "A_tau_hat", "A_T_hat", "B_hat", "C_hat", "D_K")
CONSTANT_ONLY = ("Q_tau", "Q_T", "R_tau", "R_T", "T_tau")

DEFAULT_DEPENDENCE = {
    "P": "affine", "X": "constant", "Y": "constant",
    "A_hat": "affine", "A_tau_hat": "affine", "A_T_hat": "affine",
    "B_hat": "affine", "C_hat": "affine", "D_K": "affine",
}


class InfeasibleEverywhere(RuntimeError):
    """No line-search combination produced a solver-feasible SDP."""

    def __init__(self, trials):
        self.trials = list(trials)
        super().__init__(
            f"synthesis infeasible for all {len(self.trials)} line-search combinations")


@dataclass(frozen=True)
class SynthesisOptions:
    grid_counts: tuple[int, ...] = (5,)
    lambda2: tuple[float, ...] = (0.1, 1.0, 10.0)
    lambda3: tuple[float, ...] = (0.1, 1.0, 10.0)
    lambda4: tuple[float, ...] = (0.1, 1.0, 10.0)
    lambda5: float = 0.0
    margin: float = 1e-7
    verify_counts: tuple[int, ...] = (50,)
    dependence: dict = field(default_factory=lambda: dict(DEFAULT_DEPENDENCE))
    tau_bar: float | None = None
    T_bar: float | None = None
    backend: str = "cvxopt"
    tol_feas: float = 1e-7
    tol_gap: float = 1e-6
    max_iters: int = 200
    workers: int = 1

    def __post_init__(self):
        for nm in ("lambda2", "lambda3", "lambda4"):
            vals = tuple(float(v) for v in getattr(self, nm))
            if not vals:
                raise ValueError(f"{nm} search list must be nonempty")
            object.__setattr__(self, nm, vals)
        object.__setattr__(self, "grid_counts", tuple(int(c) for c in self.grid_counts))
        object.__setattr__(self, "verify_counts", tuple(int(c) for c in self.verify_counts))
        if not self.margin > 0:
            raise ValueError("feasibility margin must be positive")
        dep = dict(DEFAULT_DEPENDENCE)
        dep.update(self.dependence or {})
        for k, v in dep.items():
            if k not in AFFINE_CAPABLE:
                raise ValueError(f"unknown decision variable {k!r}")
            if v not in ("constant", "affine"):
                raise ValueError(f"dependence of {k} must be 'constant' or 'affine'")
        object.__setattr__(self, "dependence", dep)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisOptions":
        d = dict(d)
        for k in ("grid_counts", "lambda2", "lambda3", "lambda4", "verify_counts"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


# ---------------------------------------------------------------------------
# decision-variable layout
# ---------------------------------------------------------------------------


@dataclass
class _Block:
    name: str
    shape: tuple[int, int]
    symmetric: bool
    offset: int

    @property
    def size(self) -> int:
        r, c = self.shape
        return r * (r + 1) // 2 if self.symmetric else r * c


class VariableLayout:
    """Maps named matrix variables onto a flat SDP decision vector."""

    def __init__(self, plant: LPVDelayPlant, dependence: dict):
        n, n_u, n_y, n_s = plant.n, plant.n_u, plant.n_y, plant.n_s
        self.n_s = n_s
        self.center = plant.schedule.center
        self.half_width = plant.schedule.half_width
        self.dependence = dict(dependence)
        self.blocks: dict[str, list[_Block]] = {}
        self._size = 0
        spec = [
            ("P", (2 * n, 2 * n), True),
            ("X", (n, n), True),
            ("Y", (n, n), True),
            ("Q_tau", (2 * n, 2 * n), True),
            ("Q_T", (2 * n, 2 * n), True),
            ("R_tau", (2 * n, 2 * n), True),
            ("R_T", (2 * n, 2 * n), True),
            ("T_tau", (2 * n, 2 * n), True),
            ("A_hat", (n, n), False),
            ("A_tau_hat", (n, n), False),
            ("A_T_hat", (n, n), False),
            ("B_hat", (n, n_y), False),
            ("C_hat", (n_u, n), False),
            ("D_K", (n_u, n_y), False),
        ]
        for name, shape, sym in spec:
            terms = 1 + (n_s if self.dependence.get(name) == "affine" else 0)
            self.blocks[name] = []
            for t in range(terms):
                b = _Block(f"{name}[{t}]", shape, sym, self._size)
                self.blocks[name].append(b)
                self._size += b.size
        self.gamma_index = self._size
        self._size += 1

    @property
    def m(self) -> int:
        return self._size

    def names(self) -> tuple[str, ...]:
        out = [""] * self.m
        for blocks in self.blocks.values():
            for b in blocks:
                r, c = b.shape
                if b.symmetric:
                    idx = [(i, j) for j in range(r) for i in range(j + 1)]
                else:
                    idx = [(i, j) for i in range(r) for j in range(c)]
                for k, (i, j) in enumerate(idx):
                    out[b.offset + k] = f"{b.name}({i},{j})"
        out[self.gamma_index] = "gamma"
        return tuple(out)

    def _basis(self, b: _Block) -> LinExpr:
        r, c = b.shape
        lin = np.zeros((self.m, r, c))
        k = b.offset
        if b.symmetric:
            for j in range(r):
                for i in range(j + 1):
                    lin[k, i, j] = 1.0
                    lin[k, j, i] = 1.0
                    k += 1
        else:
            for i in range(r):
                for j in range(c):
                    lin[k, i, j] = 1.0
                    k += 1
        return LinExpr(np.zeros((r, c)), lin)

    def expr(self, name: str, rho) -> LinExpr:
        blocks = self.blocks[name]
        e = self._basis(blocks[0])
        if len(blocks) > 1:
            theta = (np.asarray(rho, dtype=float) - self.center) / self.half_width
            for i, b in enumerate(blocks[1:]):
                e = e + float(theta[i]) * self._basis(b)
        return e

    def derivative_expr(self, name: str, i: int) -> LinExpr | np.ndarray:
        blocks = self.blocks[name]
        if len(blocks) == 1:
            return np.zeros(blocks[0].shape)
        return (1.0 / float(self.half_width[i])) * self._basis(blocks[1 + i])

    def gamma_expr(self) -> LinExpr:
        lin = np.zeros((self.m, 1, 1))
        lin[self.gamma_index, 0, 0] = 1.0
        return LinExpr(np.zeros((1, 1)), lin)

    def _block_value(self, b: _Block, x) -> np.ndarray:
        return self._basis(b).value(x)

    def physical(self, name: str, x) -> AffineMatrixFn:
        """Affine coefficients ``(M0, M_1..M_ns)`` in physical parameter units."""
        blocks = self.blocks[name]
        base = self._block_value(blocks[0], x)
        if len(blocks) == 1:
            return AffineMatrixFn.constant(base, self.n_s)
        slopes = [self._block_value(b, x) / self.half_width[i] for i, b in enumerate(blocks[1:])]
        M0 = base - sum(self.center[i] * slopes[i] for i in range(self.n_s))
        return AffineMatrixFn.from_terms(M0, slopes)

    def point_variables(self, rho) -> PointVariables:
        return PointVariables(
            P=self.expr("P", rho),
            dP=[self.derivative_expr("P", i) for i in range(self.n_s)],
            X=self.expr("X", rho),
            Y=self.expr("Y", rho),
            Q_tau=self.expr("Q_tau", rho),
            Q_T=self.expr("Q_T", rho),
            R_tau=self.expr("R_tau", rho),
            R_T=self.expr("R_T", rho),
            T_tau=self.expr("T_tau", rho),
            A_hat=self.expr("A_hat", rho),
            A_tau_hat=self.expr("A_tau_hat", rho),
            A_T_hat=self.expr("A_T_hat", rho),
            B_hat=self.expr("B_hat", rho),
            C_hat=self.expr("C_hat", rho),
            D_K=self.expr("D_K", rho),
            gamma=self.gamma_expr(),
        )


# ---------------------------------------------------------------------------
# SDP construction
# ---------------------------------------------------------------------------


def delay_bounds(plant: LPVDelayPlant, options: SynthesisOptions) -> tuple[float, float]:
    tau_bar = plant.delay.upper if options.tau_bar is None else float(options.tau_bar)
    T_bar = plant.sampling.upper if options.T_bar is None else float(options.T_bar)
    return tau_bar, T_bar


def effective_signs(nu) -> np.ndarray:
    """Sign vertices with axes of zero rate bound collapsed (they give identical LMIs)."""
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    signs = vertex_signs(len(nu))
    signs[:, nu == 0] = 1.0
    _, idx = np.unique(signs, axis=0, return_index=True)
    return signs[np.sort(idx)]


def _constraint(expr, margin: float, name: str) -> sdp.LMIConstraint:
    """``expr + margin*I <= 0`` as packed sparse data."""
    d = expr.shape[0]
    r, c = sdp.packed_index(d)
    F0 = expr.const + margin * np.eye(d)
    dense = np.concatenate([F0[None], expr.lin], axis=0)[:, r, c].T
    return sdp.LMIConstraint(d, sp.csc_matrix(dense), name)


def _build(plant: LPVDelayPlant, grid: Grid, options: SynthesisOptions, lambdas):
    if len(grid) == 0:
        raise ValueError("empty synthesis grid")
    layout = VariableLayout(plant, options.dependence)
    tau_bar, T_bar = delay_bounds(plant, options)
    nu = plant.schedule.rate_bound
    signs_all = effective_signs(nu)
    delta = options.margin
    cons = []
    for name in ("Q_tau", "Q_T", "R_tau", "R_T", "T_tau"):
        cons.append(_constraint(-1.0 * layout.expr(name, grid.points[0]), delta, f"{name}>0"))
    for p_idx, rho in enumerate(grid.points):
        frozen = plant.at(rho)
        v = layout.point_variables(rho)
        dtau = plant.delay.gradient(rho)
        dT = plant.sampling.gradient(rho)
        for s in signs_all:
            M = assemble_blocks(frozen, v, lambdas, tau_bar, T_bar, s, nu, dtau, dT)
            cons.append(_constraint(M, delta, f"lmi@{p_idx}{'+' if s[0] > 0 else '-'}"))
        n = plant.n
        I = np.eye(n)
        cons.append(_constraint(-1.0 * v.P, delta, f"P>0@{p_idx}"))
        if p_idx == 0 or options.dependence.get("X") == "affine" or \
                options.dependence.get("Y") == "affine":
            V = bmat([[v.Y, I], [I, v.X]])
            cons.append(_constraint(-1.0 * V, delta, f"V>0@{p_idx}"))
    c = np.zeros(layout.m)
    c[layout.gamma_index] = 1.0
    return sdp.SDPProblem(c, tuple(cons), layout.names()), layout


def build_sdp(plant: LPVDelayPlant, grid: Grid, options: SynthesisOptions,
              lambdas) -> sdp.SDPProblem:
    """SDP minimizing ``gamma`` for fixed ``lambdas = (l2, l3, l4, l5)``."""
    return _build(plant, grid, options, tuple(float(l) for l in lambdas))[0]


def count_main_constraints(problem: sdp.SDPProblem) -> int:
    return sum(1 for k in problem.constraints if k.name.startswith("lmi@"))


# ---------------------------------------------------------------------------
# certificate
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SynthesisCertificate:
    P: AffineMatrixFn
    X: AffineMatrixFn
    Y: AffineMatrixFn
    Q_tau: np.ndarray
    Q_T: np.ndarray
    R_tau: np.ndarray
    R_T: np.ndarray
    T_tau: np.ndarray
    A_hat: AffineMatrixFn
    A_tau_hat: AffineMatrixFn
    A_T_hat: AffineMatrixFn
    B_hat: AffineMatrixFn
    C_hat: AffineMatrixFn
    D_K: AffineMatrixFn
    lambdas: tuple[float, float, float, float]
    gamma: float
    tau_bar: float
    T_bar: float
    dims: dict
    provenance: dict = field(default_factory=dict)

    def variables_at(self, rho) -> PointVariables:
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        return PointVariables(
            P=self.P(rho), dP=[self.P.derivative(i) for i in range(self.P.n_s)],
            X=self.X(rho), Y=self.Y(rho),
            Q_tau=self.Q_tau, Q_T=self.Q_T, R_tau=self.R_tau, R_T=self.R_T, T_tau=self.T_tau,
            A_hat=self.A_hat(rho), A_tau_hat=self.A_tau_hat(rho), A_T_hat=self.A_T_hat(rho),
            B_hat=self.B_hat(rho), C_hat=self.C_hat(rho), D_K=self.D_K(rho),
            gamma=self.gamma,
        )

    def with_gamma(self, gamma: float) -> "SynthesisCertificate":
        from dataclasses import replace

        return replace(self, gamma=float(gamma))

    # -- JSON ---------------------------------------------------------------

    _AFFINE = ("P", "X", "Y", "A_hat", "A_tau_hat", "A_T_hat", "B_hat", "C_hat", "D_K")
    _CONST = ("Q_tau", "Q_T", "R_tau", "R_T", "T_tau")

    def to_dict(self) -> dict:
        return {
            "format": "sdlpv-certificate",
            "version": 1,
            "dimensions": dict(self.dims),
            "gamma": float(self.gamma),
            "lambdas": [float(l) for l in self.lambdas],
            "tau_bar": float(self.tau_bar),
            "T_bar": float(self.T_bar),
            "variables": {
                **{k: {"affine": True, "coefficients": getattr(self, k).coeffs.tolist()}
                   for k in self._AFFINE},
                **{k: {"affine": False, "matrix": np.asarray(getattr(self, k)).tolist()}
                   for k in self._CONST},
            },
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisCertificate":
        if d.get("format") != "sdlpv-certificate":
            raise ValueError("not an sdlpv certificate document")
        var = d["variables"]
        kw = {k: AffineMatrixFn(np.array(var[k]["coefficients"], dtype=float)) for k in cls._AFFINE}
        kw.update({k: np.array(var[k]["matrix"], dtype=float) for k in cls._CONST})
        return cls(**kw, lambdas=tuple(d["lambdas"]), gamma=float(d["gamma"]),
                   tau_bar=float(d["tau_bar"]), T_bar=float(d["T_bar"]),
                   dims=dict(d["dimensions"]), provenance=d.get("provenance", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SynthesisCertificate":
        return cls.from_dict(json.loads(text))


def plant_signature(plant: LPVDelayPlant) -> str:
    """Digest of plant dimensions, coefficients, schedule and sampled laws."""
    h = hashlib.sha256()
    h.update(json.dumps(plant.dims(), sort_keys=True).encode())
    for name, M in plant.matrices().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(M.coeffs).tobytes())
    s = plant.schedule
    for arr in (s.lower, s.upper, s.rate_bound):
        h.update(np.ascontiguousarray(arr).tobytes())
    probe = make_grid(s, [7] * s.n_s).points
    laws = np.array([[plant.delay.value(p), plant.sampling.value(p)] for p in probe])
    h.update(laws.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# synthesis driver
# ---------------------------------------------------------------------------


def _certificate_from_solution(plant, layout, x, lambdas, gamma, tau_bar, T_bar, provenance):
    kw = {k: layout.physical(k, x) for k in AFFINE_CAPABLE}
    for k in CONSTANT_ONLY:
        kw[k] = layout.physical(k, x).base
    return SynthesisCertificate(**kw, lambdas=tuple(lambdas), gamma=float(gamma),
                                tau_bar=tau_bar, T_bar=T_bar, dims=plant.dims(),
                                provenance=provenance)


def _solve_one(plant, grid, options, lambdas):
    problem, layout = _build(plant, grid, options, lambdas)
    sol = sdp.solve(problem, tol_feas=options.tol_feas, tol_gap=options.tol_gap,
                    backend=options.backend, max_iters=options.max_iters)
    return problem, layout, sol


def synthesize(plant: LPVDelayPlant, options: SynthesisOptions | None = None,
               progress=None) -> SynthesisCertificate:
    """Line search over ``(l2, l3, l4)``; returns the smallest-``gamma`` certificate.

    Raises :class:`InfeasibleEverywhere` (carrying every trial) when no
    combination is solver-feasible.
    """
    options = options or SynthesisOptions()
    grid = make_grid(plant.schedule, options.grid_counts)
    tau_bar, T_bar = delay_bounds(plant, options)
    combos = [(l2, l3, l4, options.lambda5) for l2, l3, l4 in
              itertools.product(options.lambda2, options.lambda3, options.lambda4)]

    def run(lams):
        problem, layout, sol = _solve_one(plant, grid, options, lams)
        gamma = float(sol.x[layout.gamma_index]) if sol.ok else None
        trial = {"lambda2": lams[0], "lambda3": lams[1], "lambda4": lams[2],
                 "lambda5": lams[3], "status": sol.status.value, "gamma": gamma,
                 "iterations": sol.iterations, "max_residual": sol.max_residual}
        logger.info("lambdas=%s status=%s gamma=%s", lams, sol.status.value, gamma)
        if progress is not None:
            progress(trial)
        return trial, layout, sol

    if options.workers > 1:
        with ThreadPoolExecutor(max_workers=options.workers) as ex:
            results = list(ex.map(run, combos))
    else:
        results = [run(c) for c in combos]

    trials = [r[0] for r in results]
    feasible = [r for r in results if r[2].ok]
    if not feasible:
        raise InfeasibleEverywhere(trials)
    best_trial, layout, sol = min(feasible, key=lambda r: r[0]["gamma"])
    lams = (best_trial["lambda2"], best_trial["lambda3"], best_trial["lambda4"],
            best_trial["lambda5"])
    provenance = {
        "grid": grid.points.tolist(),
        "options": options.to_dict(),
        "trials": trials,
        "solver": {**{k: v for k, v in sol.stats.items() if k != "backend_status"},
                   "status": sol.status.value, "iterations": sol.iterations,
                   "max_residual": sol.max_residual},
        "plant_signature": plant_signature(plant),
        "plant_metadata": plant.metadata,
    }
    return _certificate_from_solution(plant, layout, sol.x, lams, best_trial["gamma"],
                                      tau_bar, T_bar, provenance)


# ---------------------------------------------------------------------------
# a-posteriori check
# ---------------------------------------------------------------------------


@dataclass
class MarginReport:
    max_lmi_eig: float
    worst_point: list
    worst_sign: list
    min_P_eig: float
    min_V_eig: float
    min_const_eig: float
    points: int
    tol_lmi: float
    tol_pos: float

    @property
    def passed(self) -> bool:
        return (self.max_lmi_eig <= self.tol_lmi and self.min_P_eig >= -self.tol_pos
                and self.min_V_eig >= -self.tol_pos and self.min_const_eig >= -self.tol_pos)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def check_certificate(cert: SynthesisCertificate, plant: LPVDelayPlant, grid: Grid,
                      tol_lmi: float = 1e-6, tol_pos: float = 1e-9) -> MarginReport:
    """Re-evaluate the synthesis LMI with the certificate's numbers on ``grid``."""
    nu = plant.schedule.rate_bound
    signs_all = effective_signs(nu)
    worst, worst_pt, worst_s = -math.inf, None, None
    min_p = min_v = math.inf
    for rho in grid.points:
        v = cert.variables_at(rho)
        frozen = plant.at(rho)
        dtau = plant.delay.gradient(rho)
        dT = plant.sampling.gradient(rho)
        for s in signs_all:
            M = assemble_blocks(frozen, v, cert.lambdas, cert.tau_bar, cert.T_bar, s, nu, dtau, dT)
            e = float(np.linalg.eigvalsh(M)[-1])
            if e > worst:
                worst, worst_pt, worst_s = e, rho.tolist(), s.tolist()
        n = plant.n
        I = np.eye(n)
        min_p = min(min_p, float(np.linalg.eigvalsh(v.P)[0]))
        V = np.block([[v.Y, I], [I, v.X]])
        min_v = min(min_v, float(np.linalg.eigvalsh(V)[0]))
    min_c = min(float(np.linalg.eigvalsh(getattr(cert, k))[0]) for k in CONSTANT_ONLY)
    return MarginReport(worst, worst_pt, worst_s, min_p, min_v, min_c, len(grid),
                        tol_lmi, tol_pos)

"""Affine-in-parameter LPV systems with parameter-varying state delay.

The scheduling parameter ``rho`` is a vector of length ``n_s``. Every plant
matrix is stored as an :class:`AffineMatrixFn`, i.e. ``M0 + sum_i rho_i M_i``.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class OutOfScheduleWarning(UserWarning):
    """Raised (as a warning) when a matrix function is evaluated outside its box."""


def _as_vector(rho, n_s: int | None = None) -> np.ndarray:
    v = np.atleast_1d(np.asarray(rho, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"parameter vector must be 1-D, got shape {v.shape}")
    if n_s is not None and v.shape[0] != n_s:
        raise ValueError(f"expected {n_s} scheduling parameters, got {v.shape[0]}")
    return v


@dataclass(frozen=True)
class ScheduleSet:
    """Box of admissible parameter values plus per-parameter rate bounds."""

    lower: np.ndarray
    upper: np.ndarray
    rate_bound: np.ndarray

    def __post_init__(self):
        lo = _as_vector(self.lower)
        hi = _as_vector(self.upper, lo.shape[0])
        nu = _as_vector(self.rate_bound, lo.shape[0])
        if lo.shape[0] < 1:
            raise ValueError("at least one scheduling parameter is required")
        if np.any(lo >= hi):
            raise ValueError(f"lower bounds must be < upper bounds, got {lo} and {hi}")
        if np.any(nu < 0):
            raise ValueError("rate bounds must be nonnegative")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "rate_bound", nu)

    @property
    def n_s(self) -> int:
        return self.lower.shape[0]

    def contains(self, rho, rtol: float = 1e-12) -> bool:
        r = _as_vector(rho, self.n_s)
        slack = rtol * np.maximum(1.0, np.abs(self.upper - self.lower))
        return bool(np.all(r >= self.lower - slack) and np.all(r <= self.upper + slack))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)


@dataclass(frozen=True)
class DelayLaw:
    """Parameter-dependent delay ``tau(rho)`` with its gradient.

    ``upper`` is the bound used by the synthesis conditions and ``rate_bound``
    bounds the delay derivative along admissible trajectories.
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    upper: float
    rate_bound: float = np.inf

    def __call__(self, rho) -> float:
        return float(self.value(_as_vector(rho)))


@dataclass(frozen=True)
class SamplingLaw:
    """Parameter-dependent sampling period ``T(rho)`` with its gradient."""

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    upper: float

    def __call__(self, rho) -> float:
        return float(self.value(_as_vector(rho)))


@dataclass(frozen=True, eq=False)
class AffineMatrixFn:
    """Matrix function ``M(rho) = M0 + sum_i rho_i * M_i``.

    ``coeffs`` has shape ``(n_s + 1, rows, cols)``; ``coeffs[0]`` is the base
    matrix and ``coeffs[i]`` multiplies ``rho_{i-1}``.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 3 or c.shape[0] < 2:
            raise ValueError(
                "coefficients must have shape (n_s + 1, rows, cols) with n_s >= 1, "
                f"got {c.shape}"
            )
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_terms(cls, base, slopes: Sequence) -> "AffineMatrixFn":
        base = np.atleast_2d(np.asarray(base, dtype=float))
        mats = [base]
        for s in slopes:
            s = np.atleast_2d(np.asarray(s, dtype=float))
            if s.shape != base.shape:
                raise ValueError(
                    f"coefficient shape {s.shape} differs from base shape {base.shape}"
                )
            mats.append(s)
        return cls(np.stack(mats))

    @classmethod
    def constant(cls, matrix, n_s: int = 1) -> "AffineMatrixFn":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls.from_terms(m, [np.zeros_like(m)] * n_s)

    @property
    def n_s(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.coeffs.shape[1], self.coeffs.shape[2]

    @property
    def rows(self) -> int:
        return self.coeffs.shape[1]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[2]

    @property
    def base(self) -> np.ndarray:
        return self.coeffs[0]

    @property
    def slopes(self) -> np.ndarray:
        return self.coeffs[1:]

    def derivative(self, i: int) -> np.ndarray:
        """Partial derivative with respect to ``rho_i`` (a constant matrix)."""
        return self.coeffs[i + 1]

    def is_constant(self) -> bool:
        return not np.any(self.coeffs[1:])

    def __call__(self, rho) -> np.ndarray:
        r = _as_vector(rho, self.n_s)
        out = self.coeffs[0].copy()
        for i, ri in enumerate(r):
            out += ri * self.coeffs[i + 1]
        return out

    def __eq__(self, other):
        if not isinstance(other, AffineMatrixFn):
            return NotImplemented
        return self.coeffs.shape == other.coeffs.shape and bool(
            np.array_equal(self.coeffs, other.coeffs)
        )

    __hash__ = None


def eval_affine(M: AffineMatrixFn, rho, schedule: ScheduleSet | None = None) -> np.ndarray:
    """Evaluate ``M`` at ``rho``.

    Evaluation outside ``schedule`` is allowed but emits an
    :class:`OutOfScheduleWarning`.
    """
    r = _as_vector(rho)
    if r.shape[0] != M.n_s:
        raise ValueError(
            f"parameter vector has length {r.shape[0]} but the matrix function "
            f"has {M.n_s} slope coefficients"
        )
    if schedule is not None and not schedule.contains(r):
        warnings.warn(
            f"evaluating outside the schedule set at rho={r.tolist()}",
            OutOfScheduleWarning,
            stacklevel=2,
        )
    return M(r)


@dataclass(frozen=True, eq=False)
class Grid:
    """Cartesian grid of scheduling points; ``points`` has shape (N, n_s)."""

    points: np.ndarray
    axes: tuple[np.ndarray, ...]

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __iter__(self):
        return iter(self.points)


def make_grid(schedule: ScheduleSet, counts) -> Grid:
    """Uniform grid over ``schedule`` with both endpoints on every axis."""
    counts = tuple(int(c) for c in np.atleast_1d(counts))
    if len(counts) == 1 and schedule.n_s > 1:
        counts = counts * schedule.n_s
    if len(counts) != schedule.n_s:
        raise ValueError(f"need {schedule.n_s} grid counts, got {len(counts)}")
    if any(c < 2 for c in counts):
        raise ValueError(f"every grid count must be >= 2, got {counts}")
    axes = []
    for lo, hi, c in zip(schedule.lower, schedule.upper, counts):
        ax = np.linspace(lo, hi, c)
        ax[0], ax[-1] = lo, hi
        axes.append(ax)
    pts = np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, schedule.n_s)
    return Grid(points=pts, axes=tuple(axes))


def vertex_signs(n_s: int) -> np.ndarray:
    """All ``2**n_s`` sign vectors with entries in {+1, -1}."""
    if n_s < 1:
        raise ValueError("n_s must be >= 1")
    return np.array(list(itertools.product((1.0, -1.0), repeat=n_s)))


@dataclass(frozen=True)
class FrozenPlant:
    """Plant matrices evaluated at one parameter value."""

    A: np.ndarray
    A_tau: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C1_tau: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    C2: np.ndarray


_PLANT_MATRICES = ("A", "A_tau", "B1", "B2", "C1", "C1_tau", "D11", "D12", "C2")


@dataclass(frozen=True, eq=False)
class LPVDelayPlant:
    """LPV system with a parameter-varying state delay::

        dx/dt = A x + A_tau x(t - tau) + B1 w + B2 u
        z     = C1 x + C1_tau x(t - tau) + D11 w + D12 u
        y     = C2 x

    Dimensions are read off ``A`` (n), ``B1`` (n_w), ``B2`` (n_u), ``C1`` (n_z)
    and ``C2`` (n_y); use :func:`validate_plant` to check the rest.
    """

    A: AffineMatrixFn
    A_tau: AffineMatrixFn
    B1: AffineMatrixFn
    B2: AffineMatrixFn
    C1: AffineMatrixFn
    C1_tau: AffineMatrixFn
    D11: AffineMatrixFn
    D12: AffineMatrixFn
    C2: AffineMatrixFn
    schedule: ScheduleSet
    delay: DelayLaw
    sampling: SamplingLaw
    initial_history: np.ndarray = field(default=None)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        phi = self.initial_history
        phi = np.zeros(self.n) if phi is None else np.asarray(phi, dtype=float).ravel()
        object.__setattr__(self, "initial_history", phi)

    @property
    def n(self) -> int:
        return self.A.rows

    @property
    def n_w(self) -> int:
        return self.B1.cols

    @property
    def n_u(self) -> int:
        return self.B2.cols

    @property
    def n_z(self) -> int:
        return self.C1.rows

    @property
    def n_y(self) -> int:
        return self.C2.rows

    @property
    def n_s(self) -> int:
        return self.schedule.n_s

    def dims(self) -> dict:
        return {"n": self.n, "n_w": self.n_w, "n_u": self.n_u, "n_z": self.n_z,
                "n_y": self.n_y, "n_s": self.n_s}

    def matrices(self) -> dict[str, AffineMatrixFn]:
        return {k: getattr(self, k) for k in _PLANT_MATRICES}

    def at(self, rho) -> FrozenPlant:
        r = _as_vector(rho, self.n_s)
        return FrozenPlant(**{k: getattr(self, k)(r) for k in _PLANT_MATRICES})

    def with_matrices(self, **changes) -> "LPVDelayPlant":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class Finding:
    kind: str
    message: str


def _probe_points(schedule: ScheduleSet, per_axis: int = 101) -> np.ndarray:
    return make_grid(schedule, [per_axis] * schedule.n_s).points


def _check_gradient(name, fn, grad, pts, findings, rel=1e-6):
    for p in pts:
        g = np.atleast_1d(np.asarray(grad(p), dtype=float))
        if g.shape != p.shape:
            findings.append(Finding("derivative", f"{name} gradient has shape {g.shape}"))
            return
        for i in range(p.shape[0]):
            step = 1e-5 * max(1.0, abs(p[i]))
            e = np.zeros_like(p)
            e[i] = step
            fd = (fn(p + e) - fn(p - e)) / (2 * step)
            if abs(g[i] - fd) > rel * max(1.0, abs(g[i])):
                findings.append(Finding(
                    "derivative",
                    f"{name} derivative wrt rho_{i} at {p.tolist()}: supplied {g[i]!r}, "
                    f"central difference {fd!r}",
                ))
                return


def validate_plant(p: LPVDelayPlant, probe_per_axis: int = 101) -> list[Finding]:
    """Consistency report for ``p``; an empty list means the plant is valid."""
    findings: list[Finding] = []
    n, nw, nu, nz, ny = p.n, p.n_w, p.n_u, p.n_z, p.n_y
    expected = {
        "A": (n, n), "A_tau": (n, n), "B1": (n, nw), "B2": (n, nu),
        "C1": (nz, n), "C1_tau": (nz, n), "D11": (nz, nw), "D12": (nz, nu), "C2": (ny, n),
    }
    for name, shape in expected.items():
        M = getattr(p, name)
        if M.shape != shape:
            findings.append(Finding("dimension", f"{name} has shape {M.shape}, expected {shape}"))
        if M.n_s != p.n_s:
            findings.append(Finding(
                "dimension", f"{name} has {M.n_s} slopes but the schedule has {p.n_s} parameters"))
    if p.initial_history.shape != (n,):
        findings.append(Finding(
            "dimension", f"initial history has shape {p.initial_history.shape}, expected ({n},)"))

    pts = _probe_points(p.schedule, probe_per_axis)
    tau = np.array([p.delay.value(x) for x in pts], dtype=float)
    bad = ~np.isfinite(tau) | (tau < 0) | (tau > p.delay.upper * (1 + 1e-12))
    if np.any(bad):
        i = int(np.argmax(bad))
        findings.append(Finding(
            "delay-bound",
            f"delay {tau[i]!r} at rho={pts[i].tolist()} outside [0, {p.delay.upper!r}]"))
    else:
        _check_gradient("delay", p.delay.value, p.delay.gradient, pts, findings)

    T = np.array([p.sampling.value(x) for x in pts], dtype=float)
    bad = ~np.isfinite(T) | (T <= 0) | (T > p.sampling.upper * (1 + 1e-12))
    if np.any(bad):
        i = int(np.argmax(bad))
        findings.append(Finding(
            "sampling-bound",
            f"sampling period {T[i]!r} at rho={pts[i].tolist()} outside (0, {p.sampling.upper!r}]"))
    else:
        _check_gradient("sampling", p.sampling.value, p.sampling.gradient, pts, findings)
    return findings


def law_maximum(fn: Callable[[np.ndarray], float], schedule: ScheduleSet,
                per_axis: int = 101) -> float:
    """Largest value of a scalar law over the probe grid of ``schedule``."""
    return float(max(fn(x) for x in _probe_points(schedule, per_axis)))

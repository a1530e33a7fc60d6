"""Spark-ignition engine fuel path with TWC oxygen storage, as an LPV delay plant.

States of the augmented model (scheduling parameter rho = engine speed, rpm):

    x1  normalized AFR deviation upstream of the catalyst (Delta lambda_up)
    x2  actuator state (filtered fuel pulse-width multiplier)
    x3  integrated tracking error (measured output)
    x4  integral of x3, tied to catalyst oxygen storage

Exogenous inputs are w = [r, d] (reference, output disturbance).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .lpv import AffineMatrixFn, DelayLaw, LPVDelayPlant, SamplingLaw, ScheduleSet

CONVENTIONS = ("literal-4pi", "physical-120")


@dataclass(frozen=True)
class EngineConfig:
    cyl: int = 6
    omega_gain: float = 50.0      # actuator input gain
    lambda_pole: float = 50.0     # actuator pole
    eps1: float = 1e-3
    eps2: float = 1e-3
    phi: float = 1.0              # weight on tracking-error integral
    psi: float = 0.1              # weight on oxygen-storage state
    xi: float = 0.1               # weight on control effort
    speed_min: float = 800.0
    speed_max: float = 4000.0
    rate_bound: float = 100.0     # |d omega/dt| bound, rpm/s
    convention: str = "literal-4pi"

    def __post_init__(self):
        if int(self.cyl) != self.cyl or self.cyl < 2:
            raise ValueError(f"cyl must be an integer >= 2, got {self.cyl}")
        if self.omega_gain <= 0 or self.lambda_pole <= 0:
            raise ValueError("actuator scalars must be positive")
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("eps1 and eps2 must be positive")
        if min(self.phi, self.psi, self.xi) < 0:
            raise ValueError("performance weights must be nonnegative")
        if not self.speed_min < self.speed_max:
            raise ValueError(
                f"speed range must satisfy min < max, got [{self.speed_min}, {self.speed_max}]")
        if self.speed_min <= 0:
            raise ValueError("speed range must be positive")
        if self.rate_bound < 0:
            raise ValueError("rate bound must be nonnegative")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}, got {self.convention!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        return cls(**d)

    def replace(self, **kw) -> "EngineConfig":
        return replace(self, **kw)


def _positive_speed(omega: float) -> float:
    omega = float(omega)
    if not omega > 0:
        raise ValueError(f"engine speed must be positive, got {omega}")
    return omega


def time_constant(omega: float, cyl: int = 6) -> float:
    """Fuel-path lag 2(CYL-1)/(omega CYL), with omega in rpm (100/omega for six cylinders)."""
    omega = _positive_speed(omega)
    return 120.0 * (cyl - 1) / (cyl * omega)


def delay_law_engine(omega: float) -> float:
    """Cycle plus transport delay, 180/omega seconds."""
    return 180.0 / _positive_speed(omega)


def delay_law_engine_derivative(omega: float) -> float:
    return -180.0 / _positive_speed(omega) ** 2


def _sampling_numerator(convention: str) -> float:
    if convention == "literal-4pi":
        return 4.0 * math.pi
    if convention == "physical-120":
        return 120.0
    raise ValueError(f"unknown sampling convention {convention!r}")


def sampling_law_engine(omega: float, convention: str = "literal-4pi") -> float:
    """One sample per two revolutions: 4*pi/omega or 120/omega seconds."""
    return _sampling_numerator(convention) / _positive_speed(omega)


def sampling_law_engine_derivative(omega: float, convention: str = "literal-4pi") -> float:
    return -_sampling_numerator(convention) / _positive_speed(omega) ** 2


def build_afr_plant(cfg: EngineConfig | None = None) -> LPVDelayPlant:
    """Four-state AFR plant with tracking integrators and TWC storage state."""
    cfg = cfg or EngineConfig()
    inv_T = cfg.cyl / (120.0 * (cfg.cyl - 1))  # 1/T(rho) = rho * inv_T

    A0 = np.array([
        [0.0, 0.0, 0.0, 0.0],
        [0.0, -cfg.lambda_pole, 0.0, 0.0],
        [-1.0, 0.0, -cfg.eps1, 0.0],
        [0.0, 0.0, 1.0, -cfg.eps2],
    ])
    A1 = np.zeros((4, 4))
    A1[0, 0] = -inv_T
    At1 = np.zeros((4, 4))
    At1[0, 1] = inv_T

    B1 = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, -1.0], [0.0, 0.0]])
    B2 = np.array([[0.0], [cfg.omega_gain], [0.0], [0.0]])
    C2 = np.array([[0.0, 0.0, 1.0, 0.0]])
    C1 = np.array([
        [0.0, 0.0, cfg.phi, 0.0],
        [0.0, 0.0, 0.0, cfg.psi],
        [0.0, 0.0, 0.0, 0.0],
    ])
    D12 = np.array([[0.0], [0.0], [cfg.xi]])

    conv = cfg.convention
    schedule = ScheduleSet([cfg.speed_min], [cfg.speed_max], [cfg.rate_bound])
    # both laws decrease in omega, so their maxima sit at the lowest speed
    delay = DelayLaw(
        value=lambda r: delay_law_engine(r[0]),
        gradient=lambda r: np.array([delay_law_engine_derivative(r[0])]),
        upper=delay_law_engine(cfg.speed_min),
        rate_bound=cfg.rate_bound * 180.0 / cfg.speed_min ** 2,
    )
    sampling = SamplingLaw(
        value=lambda r: sampling_law_engine(r[0], conv),
        gradient=lambda r: np.array([sampling_law_engine_derivative(r[0], conv)]),
        upper=sampling_law_engine(cfg.speed_min, conv),
    )
    const = AffineMatrixFn.constant
    return LPVDelayPlant(
        A=AffineMatrixFn.from_terms(A0, [A1]),
        A_tau=AffineMatrixFn.from_terms(np.zeros((4, 4)), [At1]),
        B1=const(B1),
        B2=const(B2),
        C1=const(C1),
        C1_tau=const(np.zeros((3, 4))),
        D11=const(np.zeros((3, 2))),
        D12=const(D12),
        C2=const(C2),
        schedule=schedule,
        delay=delay,
        sampling=sampling,
        initial_history=np.zeros(4),
        metadata={"model": "si-engine-afr", "engine": cfg.to_dict()},
    )


@dataclass(frozen=True)
class TwcState:
    """Stored-oxygen deviation of the catalyst (normalized units)."""

    delta_m_o2: float = 0.0
    m_o2_up: float = 1.0


def twc_step(s: TwcState, dlambda_up: float, dt: float) -> TwcState:
    """Advance the oxygen-storage integrator by ``dt`` with a constant rate."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return TwcState(s.delta_m_o2 + s.m_o2_up * dlambda_up * dt, s.m_o2_up)

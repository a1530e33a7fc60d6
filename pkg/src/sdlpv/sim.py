"""Hybrid closed-loop simulation: delayed LPV plant, sampled controller, ZOH input.

The plant is integrated with fixed-step RK4; delayed states come from a
history buffer of mesh points. Each sampling interval ``[t_k, t_{k+1}]`` is
split into equal sub-steps no longer than the nominal step ``h``, so every
sampling instant is a mesh point. The controller only runs at sampling
instants and sees the scheduling parameter frozen at ``rho(t_k)``; the plant
follows the continuous speed profile.

The exogenous input is ``w = [r - reference_offset, d]``: the reference is
given in absolute units (AFR ratio, 1 = stoichiometric) and the plant works
with deviations.
"""

from __future__ import annotations

import bisect
import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .engine import TwcState, twc_step
from .lpv import LPVDelayPlant

SIGNAL_KINDS = ("constant", "step-sequence", "pulse-train", "piecewise-linear")
HISTORY_MODES = ("linear", "cubic")


class SimulationHalt(RuntimeError):
    pass


# -- signals ----------------------------------------------------------------


@dataclass(frozen=True)
class SignalSpec:
    """Scalar time signal.

    constant
        ``breakpoints = [(0, v)]``.
    step-sequence
        Value of the latest breakpoint at or before ``t`` (first value before
        the first breakpoint).
    pulse-train
        Each ``(t_i, a_i)`` starts a pulse of height ``a_i`` lasting ``width``
        seconds on top of ``base``.
    piecewise-linear
        Linear interpolation, held constant outside the breakpoints.
    """

    kind: str
    breakpoints: tuple[tuple[float, float], ...]
    width: float | None = None
    base: float = 0.0

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}; expected one of {SIGNAL_KINDS}")
        bp = tuple((float(t), float(v)) for t, v in self.breakpoints)
        if not bp:
            raise ValueError("a signal needs at least one breakpoint")
        ts = [t for t, _ in bp]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("breakpoint times must be strictly increasing")
        if self.kind == "pulse-train":
            if self.width is None or not self.width > 0:
                raise ValueError("pulse-train needs a positive width")
            if any(b - a < self.width for a, b in zip(ts, ts[1:])):
                raise ValueError("pulses must not overlap")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "_t", np.array(ts))
        object.__setattr__(self, "_v", np.array([v for _, v in bp]))

    @classmethod
    def constant(cls, value: float) -> "SignalSpec":
        return cls("constant", ((0.0, value),))

    def __call__(self, t: float) -> float:
        ts, vs = self._t, self._v
        if self.kind == "constant":
            return float(vs[0])
        if self.kind == "piecewise-linear":
            return float(np.interp(t, ts, vs))
        i = bisect.bisect_right(self.breakpoints, (t, math.inf)) - 1
        if self.kind == "step-sequence":
            return float(vs[max(i, 0)])
        if i >= 0 and t < ts[i] + self.width:
            return self.base + float(vs[i])
        return self.base

    def end_time(self) -> float:
        """Time after which the signal no longer changes."""
        last = float(self._t[-1])
        return last + self.width if self.kind == "pulse-train" else last

    def extremes(self) -> tuple[float, float]:
        vals = list(self._v)
        if self.kind == "pulse-train":
            vals = [self.base] + [self.base + v for v in vals]
        return min(vals), max(vals)

    def max_rate(self) -> float:
        """Largest slope magnitude (infinite for jumps)."""
        if self.kind == "constant" or len(self._t) == 1 and self.kind != "pulse-train":
            return 0.0
        if self.kind == "piecewise-linear":
            return float(np.max(np.abs(np.diff(self._v) / np.diff(self._t))))
        return math.inf

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "breakpoints": [list(p) for p in self.breakpoints]}
        if self.width is not None:
            d["width"] = self.width
        if self.base:
            d["base"] = self.base
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SignalSpec":
        return cls(d["kind"], tuple(tuple(p) for p in d["breakpoints"]),
                   d.get("width"), d.get("base", 0.0))


# -- history -----------------------------------------------------------------


class HistoryBuffer:
    """Mesh history of the plant state with interpolated lookup.

    Before the first stored time the constant initial history ``phi`` is
    returned. ``cubic`` mode uses Hermite interpolation with stored
    derivatives and falls back to linear where a derivative is missing.
    """

    def __init__(self, phi, mode: str = "linear"):
        if mode not in HISTORY_MODES:
            raise ValueError(f"history mode must be one of {HISTORY_MODES}")
        self.phi = np.asarray(phi, dtype=float).ravel().copy()
        self.mode = mode
        self.times: list[float] = []
        self.states: list[np.ndarray] = []
        self.derivs: list[np.ndarray | None] = []

    def __len__(self) -> int:
        return len(self.times)

    def append(self, t: float, x, dx=None):
        if self.times and not t > self.times[-1]:
            raise ValueError("history timestamps must be strictly increasing")
        self.times.append(float(t))
        self.states.append(np.asarray(x, dtype=float).copy())
        self.derivs.append(None if dx is None else np.asarray(dx, dtype=float).copy())

    def set_derivative(self, i: int, dx):
        self.derivs[i] = np.asarray(dx, dtype=float).copy()

    @property
    def newest(self) -> float:
        return self.times[-1]


def history_lookup(buf: HistoryBuffer, t: float, mode: str | None = None) -> np.ndarray:
    """State at time ``t`` interpolated from the buffer."""
    mode = mode or buf.mode
    ts = buf.times
    if not ts or t < ts[0]:
        return buf.phi.copy()
    if t > ts[-1]:
        raise ValueError(f"lookup at t={t} is beyond the newest stored time {ts[-1]}")
    i = bisect.bisect_right(ts, t) - 1
    if ts[i] == t or i == len(ts) - 1:
        return buf.states[i].copy()
    t0, t1 = ts[i], ts[i + 1]
    x0, x1 = buf.states[i], buf.states[i + 1]
    dt = t1 - t0
    s = (t - t0) / dt
    if mode == "cubic" and buf.derivs[i] is not None and buf.derivs[i + 1] is not None:
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * x0 + h10 * dt * buf.derivs[i] + h01 * x1 + h11 * dt * buf.derivs[i + 1]
    return x0 + s * (x1 - x0)


# -- plant evaluation -------------------------------------------------------


class _PlantEval:
    """Fast affine evaluation of plant matrices."""

    def __init__(self, plant: LPVDelayPlant):
        self.plant = plant
        self._c = {k: m.coeffs for k, m in plant.matrices().items()}
        self._const = {k: bool(np.all(c[1:] == 0)) for k, c in self._c.items()}
        self._last = None

    def mat(self, name: str, rho: np.ndarray) -> np.ndarray:
        c = self._c[name]
        if self._const[name]:
            return c[0]
        if len(rho) == 1:
            return c[0] + rho[0] * c[1]
        return c[0] + np.tensordot(rho, c[1:], axes=1)

    def delay(self, rho) -> float:
        return float(self.plant.delay.value(rho))

    def rhs(self, t, x, rho, w, u, buf):
        xd = history_lookup(buf, t - self.delay(rho))
        return (self.mat("A", rho) @ x + self.mat("A_tau", rho) @ xd
                + self.mat("B1", rho) @ w + self.mat("B2", rho) @ u)

    def stage(self, s, rho_f, w_f, buf):
        """``(A, B2, g)`` at time ``s`` with ``g = A_tau x(s - tau) + B1 w``.

        The last result is reused when ``s`` repeats; with linear
        interpolation past history never changes, so this is exact.
        """
        last = self._last
        if last is not None and last[0] == s and last[1] is buf and buf.mode == "linear":
            return last[2]
        rho = np.atleast_1d(np.asarray(rho_f(s), dtype=float))
        xd = history_lookup(buf, s - self.delay(rho))
        g = self.mat("A_tau", rho) @ xd + self.mat("B1", rho) @ np.atleast_1d(w_f(s))
        out = (self.mat("A", rho), self.mat("B2", rho), g)
        self._last = (s, buf, out)
        return out


def _as_fn(v):
    if callable(v):
        return v
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    return lambda t: arr


def _rk4(ev: _PlantEval, buf: HistoryBuffer, rho_f, w_f, u, t: float, t_new: float):
    h = t_new - t
    x = buf.states[-1]

    def f(s, xs):
        A, B2, g = ev.stage(s, rho_f, w_f, buf)
        return A @ xs + g + B2 @ u

    k1 = f(t, x)
    if buf.derivs[-1] is None:
        buf.set_derivative(len(buf) - 1, k1)
    k2 = f(t + h / 2, x + h / 2 * k1)
    k3 = f(t + h / 2, x + h / 2 * k2)
    k4 = f(t_new, x + h * k3)
    x_new = x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(x_new)):
        raise SimulationHalt(f"nonfinite state at t={t_new:.6g}")
    buf.append(t_new, x_new)
    return x_new


def dde_step(plant: LPVDelayPlant, buf: HistoryBuffer, rho, u_held, t: float, h: float,
             w=None) -> np.ndarray:
    """One RK4 step of the delayed plant from ``t`` to ``t + h``.

    ``rho`` and ``w`` may be constants or functions of time; ``u_held`` is
    constant over the step. The buffer must end at ``t``; the new state is
    appended and returned.

    Raises
    ------
    SimulationHalt
        If the new state is not finite.
    """
    if not h > 0:
        raise ValueError("step must be positive")
    if not buf.times or buf.times[-1] != t:
        raise ValueError("history buffer must end at the current time")
    w_f = _as_fn(np.zeros(plant.n_w) if w is None else w)
    u = np.atleast_1d(np.asarray(u_held, dtype=float))
    return _rk4(_PlantEval(plant), buf, _as_fn(rho), w_f, u, t, t + h)


# -- scenario and trace -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything needed for one deterministic closed-loop run.

    ``controller`` is an object with ``reset(t0, rho0, period0, span)`` and
    ``sample(t_k, t_k1, tau_k, rho_k, y_k) -> (u_k, x_d_k, info)``, or ``None``
    for zero input. ``h=None`` picks ``min(tau_bar, T_bar)/20``.
    """

    duration: float
    plant: LPVDelayPlant
    controller: object
    speed: SignalSpec
    reference: SignalSpec
    disturbance: SignalSpec
    h: float | None = None
    interpolation: str = "linear"
    seed: int = 0
    reference_offset: float = 1.0
    name: str = ""
    halt_threshold: float = 1e6

    @property
    def step(self) -> float:
        if self.h is not None:
            return float(self.h)
        return min(self.plant.delay.upper, self.plant.sampling.upper) / 20.0

    def validate(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.interpolation not in HISTORY_MODES:
            raise ValueError(f"interpolation must be one of {HISTORY_MODES}")
        if self.plant.n_w != 2:
            raise ValueError("scenarios drive w = [r - offset, d]; the plant must have n_w = 2")
        h = self.step
        if not h > 0:
            raise ValueError("integration step must be positive")
        lo, hi = self.speed.extremes()
        sched = self.plant.schedule
        if lo < sched.lower[0] - 1e-9 or hi > sched.upper[0] + 1e-9:
            raise ValueError(f"speed profile [{lo}, {hi}] leaves the scheduling range "
                             f"[{sched.lower[0]}, {sched.upper[0]}]")
        t_min = min(self.plant.sampling(np.array([v])) for v in (lo, hi))
        if h > t_min / 4 * (1 + 1e-9):
            raise ValueError(f"step {h} exceeds a quarter of the shortest sampling period {t_min}")
        if self.speed.max_rate() > sched.rate_bound[0] * (1 + 1e-9):
            warnings.warn("speed profile exceeds the synthesis rate bound", stacklevel=2)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "duration": self.duration, "h": self.step,
            "interpolation": self.interpolation, "seed": self.seed,
            "reference_offset": self.reference_offset,
            "speed": self.speed.to_dict(), "reference": self.reference.to_dict(),
            "disturbance": self.disturbance.to_dict(),
        }


@dataclass
class SimulationTrace:
    columns: dict
    halted: bool = False
    halt_reason: str = ""
    diagnostics: list = field(default_factory=list)
    scenario: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.columns["t"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def group(self, prefix: str) -> np.ndarray:
        """Stack numbered columns ``prefix1, prefix2, ...`` into an array."""
        names = [k for k in self.columns if k.startswith(prefix) and k[len(prefix):].isdigit()]
        names.sort(key=lambda k: int(k[len(prefix):]))
        return np.column_stack([self.columns[k] for k in names]) if names else np.zeros((len(self), 0))

    @property
    def sample_times(self) -> np.ndarray:
        return self.columns["t"][self.columns["sample"].astype(bool)]

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        names = list(self.columns)
        wr.writerow(names)
        cols = [self.columns[k] for k in names]
        ints = [k == "sample" for k in names]
        for i in range(len(self)):
            wr.writerow([int(c[i]) if is_int else repr(float(c[i])) for c, is_int in zip(cols, ints)])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text


def simulate(sc: Scenario) -> SimulationTrace:
    """Run the scenario and return its trace (halted early on instability)."""
    sc.validate()
    plant, ctrl = sc.plant, sc.controller
    ev = _PlantEval(plant)
    h = sc.step
    T_end = float(sc.duration)
    n_u, n_y = plant.n_u, plant.n_y
    offset = sc.reference_offset

    buf = HistoryBuffer(plant.initial_history, sc.interpolation)
    t = 0.0
    x = plant.initial_history.copy()
    buf.append(t, x)

    def rho_at(s):
        return np.array([sc.speed(s)])

    def w_at(s):
        return np.array([sc.reference(s) - offset, sc.disturbance(s)])

    rho0 = rho_at(0.0)
    if ctrl is not None:
        span = plant.delay.upper + 2 * plant.sampling.upper
        ctrl.reset(0.0, rho0, plant.sampling(rho0), span)
    n_k = getattr(ctrl, "n", 0) if ctrl is not None else 0

    rows: dict[str, list] = {k: [] for k in ("t", "sample", "omega", "tau", "r", "d", "x", "xd",
                                                  "u", "y", "z", "y_track", "dl", "dm")}
    twc = TwcState()
    diagnostics: list[str] = []
    state = {"prev": None}

    def record(s, xs, flag, u, xd_k, rho_s):
        tau_s = ev.delay(rho_s)
        w = w_at(s)
        xdel = history_lookup(buf, s - tau_s)
        z = (ev.mat("C1", rho_s) @ xs + ev.mat("C1_tau", rho_s) @ xdel
             + ev.mat("D11", rho_s) @ w + ev.mat("D12", rho_s) @ u)
        d = w[1]
        dl = xs[0] + d
        nonlocal twc
        if state["prev"] is not None:
            t_prev, dl_prev = state["prev"]
            twc = twc_step(twc, 0.5 * (dl_prev + dl), s - t_prev)
        state["prev"] = (s, dl)
        rows["t"].append(s)
        rows["sample"].append(flag)
        rows["omega"].append(rho_s[0])
        rows["tau"].append(tau_s)
        rows["r"].append(sc.reference(s))
        rows["d"].append(d)
        rows["x"].append(xs.copy())
        rows["xd"].append(xd_k)
        rows["u"].append(u)
        rows["y"].append(ev.mat("C2", rho_s) @ xs)
        rows["z"].append(z)
        rows["y_track"].append(offset + dl)
        rows["dl"].append(dl)
        rows["dm"].append(twc.delta_m_o2)

    halted, reason = False, ""
    k = 0
    while t < T_end - 1e-12 and not halted:
        rho_k = rho_at(t)
        tau_k = ev.delay(rho_k)
        period = plant.sampling(rho_k)
        t_next = t + period
        y_k = ev.mat("C2", rho_k) @ x
        if ctrl is not None:
            u, xd_k, info = ctrl.sample(t, t_next, tau_k, rho_k, y_k)
            u = np.asarray(u, dtype=float).ravel()
            xd_k = np.asarray(xd_k, dtype=float).ravel()
            for note in (info or ()):
                diagnostics.append(f"k={k} t={t!r}: {note}")
        else:
            u, xd_k = np.zeros(n_u), np.zeros(0)
        record(t, x, True, u, xd_k, rho_k)
        n_sub = max(1, math.ceil(period / h - 1e-9))
        for j in range(1, n_sub + 1):
            t_j = t_next if j == n_sub else t + period * j / n_sub
            try:
                x = _rk4(ev, buf, rho_at, w_at, u, buf.newest, t_j)
            except SimulationHalt as exc:
                halted, reason = True, str(exc)
                break
            if np.max(np.abs(x)) > sc.halt_threshold:
                halted, reason = True, f"state norm exceeded {sc.halt_threshold:g} at t={t_j:.6g}"
                break
            if t_j >= T_end - 1e-12:
                break
            if j < n_sub:
                record(t_j, x, False, u, xd_k, rho_at(t_j))
        t = buf.newest
        k += 1
    if not halted:
        record(t, x, False, rows["u"][-1] if rows["u"] else np.zeros(n_u),
               rows["xd"][-1] if rows["xd"] else np.zeros(n_k), rho_at(t))

    cols: dict[str, np.ndarray] = {}
    cols["t"] = np.array(rows["t"])
    cols["sample"] = np.array(rows["sample"], dtype=bool)
    cols["omega"] = np.array(rows["omega"])
    cols["tau"] = np.array(rows["tau"])
    cols["r"] = np.array(rows["r"])
    cols["d"] = np.array(rows["d"])
    for name, key, width in (("x", "x", plant.n), ("xd", "xd", len(rows["xd"][0]) if rows["xd"] else 0),
                             ("u", "u", n_u), ("y", "y", n_y), ("z", "z", plant.n_z)):
        arr = np.array(rows[key]).reshape(len(rows["t"]), width)
        for i in range(width):
            cols[f"{name}{i + 1}"] = arr[:, i].copy()
    cols["y_track"] = np.array(rows["y_track"])
    cols["dlambda_up"] = np.array(rows["dl"])
    cols["dm_o2"] = np.array(rows["dm"])
    return SimulationTrace(cols, halted, reason, diagnostics, sc.to_dict())


# -- metrics -----------------------------------------------------------------


def _window_mask(trace: SimulationTrace, window):
    t = trace["t"]
    if len(t) == 0:
        raise ValueError("empty trace")
    if window is None:
        return np.ones(len(t), dtype=bool)
    a, b = window
    if a < t[0] - 1e-12 or b > t[-1] + 1e-9 or not b > a:
        raise ValueError(f"window [{a}, {b}] is outside the trace span [{t[0]}, {t[-1]}]")
    return (t >= a - 1e-12) & (t <= b + 1e-12)


def l2_norm(t: np.ndarray, sig: np.ndarray) -> float:
    """Trapezoidal L2 norm of a (samples x channels) signal."""
    sig = np.asarray(sig, dtype=float).reshape(len(t), -1)
    return float(math.sqrt(max(np.trapezoid(np.sum(sig ** 2, axis=1), t), 0.0)))


def metrics(trace: SimulationTrace, window=None, band: float = 0.02) -> dict:
    """Step-response and energy metrics over ``window = (t0, t1)`` (whole trace by default).

    Overshoot and settling refer to ``y_track`` moving from its value at the
    window start to its value at the window end; the steady-state error is
    ``|r - y_track|`` at the window end.
    """
    m = _window_mask(trace, window)
    t = trace["t"][m]
    y = trace["y_track"][m]
    r = trace["r"][m]
    y0, yf = float(y[0]), float(y[-1])
    step = yf - y0
    if abs(step) > 1e-12:
        excursion = (y - yf) * np.sign(step)
        overshoot = max(0.0, float(np.max(excursion)) / abs(step) * 100.0)
        outside = np.flatnonzero(np.abs(y - yf) > band * abs(step))
        if len(outside) == 0:
            settling = 0.0
        else:
            i = outside[-1]
            settling = float(t[min(i + 1, len(t) - 1)] - t[0])
    else:
        overshoot, settling = 0.0, 0.0
    z = trace.group("z")[m]
    w = np.column_stack([trace["r"][m] - trace.scenario.get("reference_offset", 1.0), trace["d"][m]])
    wn = l2_norm(t, w)
    zn = l2_norm(t, z)
    gain = zn / wn if wn > 1e-15 else None
    dm = trace["dm_o2"][m] if "dm_o2" in trace.columns else np.zeros(len(t))
    return {
        "window": [float(t[0]), float(t[-1])],
        "overshoot_pct": overshoot,
        "settling_time": settling,
        "steady_state_error": float(abs(r[-1] - y[-1])),
        "z_l2": zn,
        "w_l2": wn,
        "l2_gain": gain,
        "l2_gain_defined": gain is not None,
        "max_abs_dm_o2": float(np.max(np.abs(dm))),
        "halted": bool(trace.halted),
    }


# -- presets -----------------------------------------------------------------


def _pwl(*pts) -> SignalSpec:
    return SignalSpec("piecewise-linear", pts)


# idle, low-speed cruise, acceleration, high-speed cruise, braking; slopes stay <= 100 rpm/s
SPEED_DRIVE = _pwl((0.0, 800.0), (5.0, 800.0), (12.0, 1500.0), (25.0, 1500.0), (50.0, 4000.0),
                   (65.0, 4000.0), (98.0, 800.0), (100.0, 800.0))
REFERENCE_STEPS = SignalSpec("step-sequence", ((0.0, 1.0), (20.0, 1.1), (40.0, 0.9),
                                               (60.0, 1.1), (80.0, 0.9)))
ZERO = SignalSpec.constant(0.0)
ONE = SignalSpec.constant(1.0)

PRESETS: dict[str, dict] = {
    "tracking-no-disturbance": dict(duration=100.0, speed=SPEED_DRIVE, reference=REFERENCE_STEPS,
                                    disturbance=ZERO),
    "tracking-with-disturbance": dict(
        duration=100.0, speed=SPEED_DRIVE, reference=REFERENCE_STEPS,
        disturbance=SignalSpec("pulse-train", ((30.0, 0.05), (50.0, -0.05), (70.0, 0.05)), 2.0)),
    "oxygen-800rpm": dict(
        duration=40.0, speed=SignalSpec.constant(800.0), reference=ONE,
        disturbance=SignalSpec("pulse-train", ((5.0, 0.05), (20.0, -0.05)), 2.0)),
    "oxygen-3000rpm": dict(
        duration=40.0, speed=SignalSpec.constant(3000.0), reference=ONE,
        disturbance=SignalSpec("pulse-train", ((5.0, 0.05), (20.0, -0.05)), 2.0)),
    "energy-pulse": dict(
        duration=40.0, speed=_pwl((0.0, 800.0), (10.0, 1800.0), (40.0, 1800.0)), reference=ONE,
        disturbance=SignalSpec("pulse-train", ((1.0, 0.05),), 2.0)),
    "energy-doublet": dict(
        duration=40.0, speed=SignalSpec.constant(3000.0),
        reference=SignalSpec("step-sequence", ((0.0, 1.0), (1.0, 1.05), (3.0, 0.95), (5.0, 1.0))),
        disturbance=ZERO),
    "energy-triangle": dict(
        duration=40.0, speed=_pwl((0.0, 2400.0), (20.0, 800.0), (40.0, 800.0)), reference=ONE,
        disturbance=_pwl((0.0, 0.0), (2.0, 0.05), (4.0, -0.05), (6.0, 0.0))),
}


def preset_names() -> list[str]:
    return sorted(PRESETS)


def make_scenario(name: str, plant: LPVDelayPlant, controller, **overrides) -> Scenario:
    if name not in PRESETS:
        raise KeyError(f"unknown scenario {name!r}; available: {', '.join(preset_names())}")
    kw = dict(PRESETS[name])
    kw.update(overrides)
    return Scenario(plant=plant, controller=controller, name=name, **kw)


def disturbance_end(sc: Scenario) -> float:
    return sc.disturbance.end_time()


def reference_windows(sc_dict_or_trace, duration: float | None = None) -> list[tuple[float, float]]:
    """Intervals between consecutive reference changes, ending at the trace end."""
    tr = sc_dict_or_trace
    ref = SignalSpec.from_dict(tr.scenario["reference"])
    end = float(tr["t"][-1]) if duration is None else duration
    cuts = [0.0] + [t for t, _ in ref.breakpoints if 0.0 < t < end] + [end]
    return [(a, b) for a, b in zip(cuts, cuts[1:]) if b > a]


def twc_recovery(trace: SimulationTrace, delay: float = 10.0) -> list[dict]:
    """Largest ``|dm_O2|`` from ``delay`` seconds after each disturbance pulse ends.

    Each check window runs until the next pulse starts (or the trace ends).
    """
    dist = SignalSpec.from_dict(trace.scenario["disturbance"])
    if dist.kind != "pulse-train":
        return []
    t, dm = trace["t"], trace["dm_o2"]
    starts = [s for s, _ in dist.breakpoints]
    out = []
    for i, s in enumerate(starts):
        end = s + dist.width
        a = end + delay
        b = starts[i + 1] if i + 1 < len(starts) else float(t[-1])
        mask = (t >= a) & (t <= b)
        out.append({
            "pulse_start": s, "pulse_end": end, "check_from": a, "check_to": b,
            "max_abs_dm_o2": float(np.max(np.abs(dm[mask]))) if mask.any() else None,
            "peak_abs_dm_o2": float(np.max(np.abs(dm[(t >= s) & (t <= b)]))) if mask.any() else None,
        })
    return out

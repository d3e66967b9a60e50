"""Envelope-domain model of the rectifier circuit driven one symbol at a time.

State is the load-capacitor voltage. Over one symbol interval with a constant
received envelope the dynamics are

    C_L dv/dt = I_fwd(a, v) - v/R_L - I_br(a, v)

where ``I_fwd(a, v) = I_s (B0(a/(n V_T)) exp(-v/(n V_T)) - 1)`` is the
cycle-averaged current of an envelope detector (B0 = modified Bessel function
of the first kind, order zero) and ``I_br = G_br max(0, a + v - B_V)`` models
reverse conduction past the diode breakdown voltage, which bounds the state.

Three modeling notes, all load-bearing:

* Both diode conduction paths are limited by the source loop they physically
  flow through. The matching network transforms the antenna resistance up to
  the diode's video resistance at the tuning power, so the Thevenin source
  seen by the diode is kiloohm-scale: forward current is capped at
  ``(a + n V_T)/R_src`` and breakdown conduction flows through
  ``1/G_br + R_src`` in series. This is what makes charging slow against
  microsecond symbols (the memory effect) while discharge runs on R_L C_L,
  and it bounds the otherwise-astronomical forward exponential (~1e190 A
  during the charging boundary layer) that no fixed-step integrator survives.
  The limits sit far above every sub-saturation equilibrium current, so small
  and moderate-signal fixed points are unchanged. In ``ideal`` matching mode
  the source stays at the bare antenna resistance.
* The forward current is evaluated in log space through the scaled Bessel
  function, so no intermediate overflows.
* Integration uses fixed-step TR-BDF2 (one trapezoidal and one BDF2 stage per
  substep, both solved by safeguarded Newton). The equation is stiff whenever
  the diode conducts hard (local time constants of nanoseconds against symbol
  durations of microseconds), so an L-stable implicit scheme is required; an
  explicit fixed-step rule diverges at large-signal drive levels.

Received envelopes are volts against the 1-ohm reference, so ``amplitude**2``
is the received power in watts. The drive seen by the diode is
``a = sqrt(2 * eta(P) * P * R_s)`` with ``eta`` the matching-network power
transfer factor (1 in ``ideal`` mode).
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import i0e

from .errors import NumericFailure

_TRBDF2_GAMMA = 2.0 - np.sqrt(2.0)


@dataclass(frozen=True)
class CircuitParams:
    """Rectifier physics and per-symbol timing.

    Diode defaults are design constants inspired by a small Schottky detector
    diode; all of them are overridable through the config layer.
    """

    r_antenna: float = 50.0  # ohms
    c_load: float = 1e-9  # farads
    r_load: float = 1e4  # ohms
    i_sat: float = 5e-6  # amperes (0 disables the diode entirely)
    ideality: float = 1.05
    v_thermal: float = 0.02585  # volts
    v_breakdown: float = 2.0  # volts
    g_breakdown: float = 1e-2  # siemens
    matching: str = "power-dependent"  # or "ideal"
    matched_power: float = 2.5e-3  # watts, where the matching network is tuned
    symbol_duration: float = 1e-5  # seconds
    substeps: int = 400

    def __post_init__(self):
        for name in ("r_antenna", "c_load", "r_load", "v_thermal", "v_breakdown"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.i_sat < 0 or self.g_breakdown < 0:
            raise ValueError("i_sat and g_breakdown must be >= 0")
        if not self.symbol_duration > 0:
            raise ValueError("symbol_duration must be > 0")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.matching not in ("ideal", "power-dependent"):
            raise ValueError(f"unknown matching mode {self.matching!r}")

    def with_duration(self, symbol_duration: float) -> "CircuitParams":
        return replace(self, symbol_duration=symbol_duration)


@dataclass(frozen=True)
class StepResult:
    """Load voltage at the end of the interval and mean harvested power over it."""

    v_next: float
    avg_power: float


def matching_efficiency(p: CircuitParams, p_in):
    """Power transfer factor of the matching network at input power ``p_in`` (watts).

    The network is tuned to the diode's video resistance at ``matched_power``,
    so the factor is exactly 1 there and falls off as the drive moves the
    operating point. The video-resistance model ``R_d(P) = R_0/(1 + P/P_br)``
    with ``P_br = B_V^2/(2 R_s)`` is an implementer's choice, not a datasheet
    fit; ``ideal`` mode pins the factor at 1.
    """
    p_in = np.asarray(p_in, dtype=float)
    if p.matching == "ideal" or p.i_sat == 0.0:
        return np.ones_like(p_in)
    r0 = p.ideality * p.v_thermal / p.i_sat
    p_br = p.v_breakdown**2 / (2.0 * p.r_antenna)
    r_d = r0 / (1.0 + p_in / p_br)
    r_m = r0 / (1.0 + p.matched_power / p_br)
    return 4.0 * r_m * r_d / (r_m + r_d) ** 2


def rectifier_amplitude(p: CircuitParams, envelope):
    """Map a received envelope (volts, 1-ohm reference) to the diode drive voltage."""
    envelope = np.abs(np.asarray(envelope, dtype=float))
    p_in = envelope**2
    eta = matching_efficiency(p, p_in)
    return np.sqrt(2.0 * eta * p_in * p.r_antenna)


def source_resistance(p: CircuitParams) -> float:
    """Thevenin resistance of the source loop as seen by the diode.

    With a power-dependent matching network this is the diode video
    resistance at the tuning power (the value the network transforms the
    antenna up to); in ``ideal`` mode it is the bare antenna resistance.
    """
    if p.matching == "ideal" or p.i_sat == 0.0:
        return p.r_antenna
    r0 = p.ideality * p.v_thermal / p.i_sat
    p_br = p.v_breakdown**2 / (2.0 * p.r_antenna)
    return r0 / (1.0 + p.matched_power / p_br)


class _DriveContext:
    """Per-amplitude constants reused across all Newton iterations."""

    def __init__(self, p: CircuitParams, a_rect):
        a = np.asarray(a_rect, dtype=float)
        self.a = a
        self.inv_nvt = 1.0 / (p.ideality * p.v_thermal)
        self.params = p
        r_src = source_resistance(p)
        if p.g_breakdown > 0:
            self.g_br_eff = 1.0 / (1.0 / p.g_breakdown + r_src)
        else:
            self.g_br_eff = 0.0
        if p.i_sat > 0:
            z = a * self.inv_nvt
            self.log_fwd0 = np.log(p.i_sat) + z + np.log(i0e(z))
            i_lim = (a + p.ideality * p.v_thermal) / r_src
            self.i_lim = i_lim
            self.log_ilim = np.log(i_lim)
        else:
            self.log_fwd0 = None

    def rate(self, v):
        """dv/dt and its derivative w.r.t. v, both in volts/second."""
        p = self.params
        if self.log_fwd0 is not None:
            log_i = self.log_fwd0 - v * self.inv_nvt
            with np.errstate(under="ignore"):
                i_pos = np.exp(np.minimum(log_i, self.log_ilim))
            capped = log_i >= self.log_ilim
            i_fwd = i_pos - p.i_sat
            di_fwd = np.where(capped, 0.0, -i_pos * self.inv_nvt)
        else:
            i_fwd = np.zeros_like(v)
            di_fwd = np.zeros_like(v)
        over = self.a + v - p.v_breakdown
        i_br = self.g_br_eff * np.maximum(over, 0.0)
        di_br = self.g_br_eff * (over > 0.0)
        f = (i_fwd - v / p.r_load - i_br) / p.c_load
        fp = (di_fwd - 1.0 / p.r_load - di_br) / p.c_load
        return f, fp


def _implicit_solve(ctx: _DriveContext, coef: float, rhs, u0):
    """Solve ``u - coef*rate(u) = rhs`` elementwise by safeguarded Newton.

    The residual is strictly increasing in u (the rate function is
    non-increasing), so a bracketing interval refined alongside the Newton
    iterates guarantees convergence.
    """
    u = np.array(u0, dtype=float, copy=True)
    lo = np.full_like(u, -np.inf)
    hi = np.full_like(u, np.inf)
    for _ in range(80):
        f, fp = ctx.rate(u)
        g = u - coef * f - rhs
        lo = np.where(g < 0, np.maximum(lo, u), lo)
        hi = np.where(g > 0, np.minimum(hi, u), hi)
        if np.all(np.abs(g) <= 1e-14 * (1.0 + np.abs(u))):
            break
        step = -g / (1.0 - coef * fp)
        u_new = u + step
        outside = (u_new <= lo) | (u_new >= hi)
        have_bracket = np.isfinite(lo) & np.isfinite(hi)
        with np.errstate(invalid="ignore"):
            u_new = np.where(outside & have_bracket, 0.5 * (lo + hi), u_new)
        if np.array_equal(u_new, u):
            break
        u = u_new
    return u


def simulate_interval_batch(p: CircuitParams, v0, amplitude, substeps=None):
    """Integrate one symbol interval for each (v0, amplitude) pair.

    Returns ``(v_next, avg_power)`` arrays; ``avg_power`` is the trapezoid
    average of ``v^2/R_L`` on the integration grid.
    """
    v0 = np.asarray(v0, dtype=float)
    amplitude = np.asarray(amplitude, dtype=float)
    if np.any(v0 < 0) or not np.all(np.isfinite(v0)):
        raise ValueError("initial voltages must be finite and >= 0")
    n_sub = int(substeps if substeps is not None else p.substeps)
    if n_sub < 1:
        raise ValueError("substeps must be >= 1")

    ctx = _DriveContext(p, rectifier_amplitude(p, amplitude))
    h = p.symbol_duration / n_sub
    gamma = _TRBDF2_GAMMA
    w_tr = 0.5 * gamma * h
    w_bdf = (1.0 - gamma) / (2.0 - gamma) * h
    c_mid = 1.0 / (gamma * (2.0 - gamma))
    c_old = -((1.0 - gamma) ** 2) / (gamma * (2.0 - gamma))

    v = np.array(np.broadcast_arrays(v0, ctx.a)[0], dtype=float, copy=True)
    power_acc = 0.5 * v**2
    for _ in range(n_sub):
        f_v, _ = ctx.rate(v)
        v_mid = _implicit_solve(ctx, w_tr, v + w_tr * f_v, v)
        v_new = _implicit_solve(ctx, w_bdf, c_mid * v_mid + c_old * v, v_mid)
        if not np.all(np.isfinite(v_new)):
            raise NumericFailure("integration produced a non-finite voltage")
        power_acc += v_new**2
        v = v_new
    power_acc -= 0.5 * v**2
    avg_power = power_acc / (n_sub * p.r_load)
    return v, avg_power


def simulate_interval(p: CircuitParams, v0: float, amplitude: float,
                      substeps=None, return_trajectory=False):
    """Scalar wrapper around the batched integrator.

    With ``return_trajectory=True`` also returns the load voltage at every
    grid point (used by the charging-monotonicity checks).
    """
    if not np.isfinite(v0) or v0 < 0:
        raise ValueError(f"v0 must be finite and >= 0, got {v0}")
    if not return_trajectory:
        v, pw = simulate_interval_batch(p, np.array([v0]), np.array([amplitude]), substeps)
        return StepResult(float(v[0]), float(pw[0]))
    n_sub = int(substeps if substeps is not None else p.substeps)
    one = np.array([v0])
    amp = np.array([amplitude])
    traj = [v0]
    sub_params = p.with_duration(p.symbol_duration / n_sub)
    v = one
    power_acc = 0.0
    for _ in range(n_sub):
        v_new, _ = simulate_interval_batch(sub_params, v, amp, substeps=1)
        power_acc += 0.5 * (v[0] ** 2 + v_new[0] ** 2)
        traj.append(float(v_new[0]))
        v = v_new
    avg_power = power_acc / (n_sub * p.r_load)
    return StepResult(float(v[0]), float(avg_power)), np.array(traj)


def steady_state_response(p: CircuitParams, amplitude: float) -> StepResult:
    """Fixed point of the interval dynamics under a constant envelope.

    Solves ``I_fwd(a, v) = v/R_L + I_br(a, v)`` by bisection; the net current
    is strictly decreasing in v so the root is unique.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    if amplitude == 0.0 or p.i_sat == 0.0:
        return StepResult(0.0, 0.0)
    ctx = _DriveContext(p, rectifier_amplitude(p, np.array([amplitude])))

    def net(v):
        f, _ = ctx.rate(np.array([v]))
        return float(f[0])

    lo, f_lo = 0.0, net(0.0)
    if f_lo < 0:
        return StepResult(0.0, 0.0)
    hi = p.v_breakdown + float(ctx.a[0]) + 1.0
    tries = 0
    while net(hi) > 0:
        hi *= 2.0
        tries += 1
        if tries > 60:
            raise NumericFailure("no sign change found for the steady-state bracket")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if net(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * (1.0 + hi):
            break
    v = 0.5 * (lo + hi)
    return StepResult(v, v * v / p.r_load)


def voltage_ceiling(p: CircuitParams, amp_max: float) -> float:
    """Upper bound on reachable load voltages: steady state at ``amp_max`` + 10%."""
    if not amp_max > 0:
        raise ValueError("amp_max must be > 0")
    return 1.1 * steady_state_response(p, amp_max).v_next


@dataclass
class Dataset:
    """Rows of (v0, x_eh, v_next, avg_power) produced by the circuit model."""

    v0: np.ndarray
    x_eh: np.ndarray
    v_next: np.ndarray
    avg_power: np.ndarray

    def __len__(self):
        return self.v0.size

    def save_csv(self, path):
        rows = np.column_stack([self.v0, self.x_eh, self.v_next, self.avg_power])
        with open(path, "w") as fh:
            fh.write("v0,x_eh,v_next,avg_power\n")
            for r in rows:
                fh.write("%.17g,%.17g,%.17g,%.17g\n" % tuple(r))

    @classmethod
    def load_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 4:
            raise ValueError("dataset CSV must have 4 columns")
        return cls(data[:, 0], data[:, 1], data[:, 2], data[:, 3])


def generate_dataset(p: CircuitParams, n: int, amp_max: float,
                     rng: np.random.Generator) -> Dataset:
    """Sample (v0, x_eh) uniformly over the reachable box and simulate each row.

    v0 is uniform on [0, v_ceiling(amp_max)] and x_eh uniform on
    [-amp_max, amp_max]; the sign of x_eh is kept in the row (the rectifier
    only sees its magnitude).
    """
    if n <= 0:
        raise ValueError("n must be > 0")
    if amp_max <= 0:
        raise ValueError("amp_max must be > 0")
    v_ceiling = voltage_ceiling(p, amp_max)
    v0 = rng.uniform(0.0, v_ceiling, size=n)
    x_eh = rng.uniform(-amp_max, amp_max, size=n)
    v_next, avg_power = simulate_interval_batch(p, v0, np.abs(x_eh))
    return Dataset(v0=v0, x_eh=x_eh, v_next=v_next, avg_power=avg_power)

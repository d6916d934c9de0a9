"""Time-domain motion of the levitated mirror.

Two models are provided. The quasi-static model moves the mirror in the
potential of the steady-state radiation pressure. The dynamic model carries
one complex field per beam and cavity,

    da/dt = (i (c/L) sin(phi) - kappa_d / 2) a + (kappa_d / 2) sqrt(P_in F),

whose steady state reproduces the Airy circulating power exactly when
kappa_d = 2 c / (F L). Fields are kept in units of sqrt(W), so |a|^2 is the
circulating power and each beam pushes with 2 |a|^2 / c.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import solve_ivp

from .model import CONST
from .optics import cavity_phases, nominal_lengths, phase_reference, reduce_phase
from .potential import potential
from .traps import InfeasibleError, _axis_projection, axis_point_for_phase

RTOL = 1e-10


class IntegrationError(RuntimeError):
    """The integrator failed, typically through step-size underflow."""


@dataclass(frozen=True)
class MechState:
    position: np.ndarray
    velocity: np.ndarray
    time: float = 0.0


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    photons: np.ndarray | None
    nfev: int  # right-hand-side evaluations; scipy does not report step counts

    def energy(self, geom, drive, mass, reference):
        """Kinetic plus potential energy relative to U(reference)."""
        u_ref = potential(reference, geom, drive, mass)
        kinetic = 0.5 * mass * np.sum(self.velocity ** 2, axis=1)
        return kinetic + potential(self.position, geom, drive, mass) - u_ref


def _collect(sol, n_pos=3):
    if not sol.success:
        raise IntegrationError(
            f"{sol.message}; try a smaller trap-relative initial displacement")
    return sol


def _atol(scale_pos, omega):
    return np.concatenate([np.full(3, RTOL * scale_pos), np.full(3, RTOL * scale_pos * omega)])


class _GradientKernel:
    """Scalar-math copy of potential.gradient for single points (hot integrator loop)."""

    def __init__(self, geom, drive, mass):
        self.q = [tuple(map(float, row)) for row in geom.q_array]
        self.d0 = [math.sqrt(sum(c * c for c in row)) for row in self.q]
        self.ref = [float(x) for x in phase_reference(geom, drive)]
        self.k = drive.k
        self.F = drive.finesse
        self.w = [2.0 * p / CONST.c for p in drive.input_power_trap]
        self.mg = mass * CONST.g0

    def __call__(self, x, y, z):
        gx = gy = 0.0
        gz = self.mg
        r2 = x * x + y * y + z * z
        F = self.F
        for (qx, qy, qz), d0, ref, w in zip(self.q, self.d0, self.ref, self.w):
            vx, vy, vz = x - qx, y - qy, z - qz
            dist = math.sqrt(vx * vx + vy * vy + vz * vz)
            psi = ref + self.k * (r2 - 2.0 * (qx * x + qy * y + qz * z)) / (dist + d0)
            sn, cs = math.sin(psi), math.cos(psi)
            a = w * F / (cs * cs + F * F * sn * sn) / dist
            gx -= a * vx
            gy -= a * vy
            gz -= a * vz
        return gx, gy, gz


def simulate_quasistatic(initial, geom, drive, mass, duration, extra_damping=0.0, dt_max=np.inf,
                         output_dt=None, length_scale=1e-10, omega_scale=None):
    """Integrate m r'' = -grad U - m gamma r' with an adaptive 8th-order Runge-Kutta scheme."""
    r0 = np.asarray(initial.position, float)
    v0 = np.asarray(initial.velocity, float)
    if omega_scale is None:
        omega_scale = 1.0 / max(duration, 1e-30)
    t0 = float(initial.time)
    if duration <= 0:
        return Trajectory(np.array([t0]), r0[None], v0[None], None, 0)

    kernel = _GradientKernel(geom, drive, mass)
    x0, y0_, z0 = (float(c) for c in r0)

    def rhs(t, y):
        gx, gy, gz = kernel(x0 + y[0], y0_ + y[1], z0 + y[2])
        return np.array([y[3], y[4], y[5],
                         -gx / mass - extra_damping * y[3],
                         -gy / mass - extra_damping * y[4],
                         -gz / mass - extra_damping * y[5]])

    t_eval = None
    if output_dt is not None:
        t_eval = t0 + np.arange(0.0, duration * (1 + 1e-12), output_dt)
    sol = solve_ivp(rhs, (t0, t0 + duration), np.concatenate([np.zeros(3), v0]), method="DOP853",
                    rtol=RTOL, atol=_atol(length_scale, omega_scale), max_step=dt_max, t_eval=t_eval)
    _collect(sol)
    return Trajectory(sol.t, r0 + sol.y[:3].T, sol.y[3:6].T, None, sol.nfev)


# ---------------------------------------------------------------------------
# Dynamic cavity fields
# ---------------------------------------------------------------------------


def field_decay_rate(finesse, length):
    """Amplitude-decay parameter kappa_d = 2 c / (F L) matching the Airy power profile."""
    return 2.0 * CONST.c / (finesse * length)


def photon_number(power, length, omega_c):
    """Photons whose radiation force hbar (omega_c / L) n equals 2 P / c."""
    return 2.0 * power * length / (CONST.hbar * omega_c * CONST.c)


def cooling_offsets(reference, geom, drive):
    """Phase offsets placing each cooling beam at ``detuning_cool`` from resonance at ``reference``."""
    psi, _, _ = cavity_phases(reference, geom, drive)
    phi, _ = reduce_phase(psi)
    lengths = nominal_lengths(geom)
    return np.asarray(drive.detuning_cool, float) * lengths / CONST.c - phi


def operating_point(geom, drive, mass):
    """On-axis equilibrium with both beams at their steady-state powers.

    The cooling beams are taken at ``detuning_cool`` from resonance at the
    returned point, which needs a symmetric drive.
    """
    lengths = nominal_lengths(geom)
    F = drive.finesse
    p_t = float(np.mean(drive.input_power_trap))
    p_c = float(np.mean(drive.input_power_cool))
    phi_c = float(np.mean(drive.detuning_cool)) * lengths[0] / CONST.c
    guess = axis_point_for_phase(geom, drive, 0.0)
    uz = float(np.mean(_axis_projection(geom, guess)))
    need = mass * CONST.g0 * CONST.c / (6.0 * uz)
    trap_share = need - p_c * F / (1 + (F * math.sin(phi_c)) ** 2)
    if trap_share <= 0 or p_t * F < trap_share:
        raise InfeasibleError("beams cannot hold the mirror at the requested cooling detuning")
    phi_t = math.asin(math.sqrt(p_t * F / trap_share - 1.0) / F)
    return axis_point_for_phase(geom, drive, phi_t)


def steady_fields(r, geom, drive, offsets=None):
    """Steady-state trap and cooling amplitudes at pose r (sqrt(W))."""
    psi, _, _ = cavity_phases(r, geom, drive)
    phi, _ = reduce_phase(psi)
    F = drive.finesse
    out = []
    for p_in, ph in ((drive.input_power_trap, phi),
                     (drive.input_power_cool, phi + (0.0 if offsets is None else offsets))):
        drive_amp = np.sqrt(np.asarray(p_in, float) * F)
        out.append(drive_amp / (1.0 - 1j * F * np.sin(ph)))
    return out[0], out[1]


def static_vertical_stiffness(r, geom, drive, mass, offsets=None, step=1e-13):
    """-dF_z/dz from the steady-state fields of both beams."""
    def force_z(z):
        p = np.array([r[0], r[1], z])
        a_t, a_c = steady_fields(p, geom, drive, offsets)
        _, axis, _ = cavity_phases(p, geom, drive)
        power = np.abs(a_t) ** 2 + np.abs(a_c) ** 2
        return float((2 * power / CONST.c) @ axis[:, 2])
    return -(force_z(r[2] + step) - force_z(r[2] - step)) / (2 * step)


@dataclass(frozen=True)
class CooledOperatingPoint:
    drive: object
    position: np.ndarray
    omega_m: float
    stiffness: float


def cooled_operating_point(geom, drive, mass, trap_scale, cool_share, omega_guess,
                           max_iter=100, tol=1e-9):
    """Symmetric trap plus red cooling beams with the cooling detuning at -omega_m.

    The red beams carry ``cool_share`` of the weight at resonance-equivalent
    power and the trap beams the rest, boosted by ``1 + trap_scale^2`` so that
    they sit near ``F sin(phi) = trap_scale``. The vertical frequency is found
    self-consistently from the static stiffness of both beams. Raises
    ``InfeasibleError`` when the combination has no stable vertical trap.
    """
    F = drive.finesse
    L0 = float(np.mean(nominal_lengths(geom)))
    guess = axis_point_for_phase(geom, drive, 0.0)
    uz = float(np.mean(_axis_projection(geom, guess)))
    weight_share = mass * CONST.g0 * CONST.c / (6.0 * uz * F)
    omega = omega_guess
    for _ in range(max_iter):
        x_c = -2 * omega / field_decay_rate(F, L0)
        p_c = cool_share * weight_share * (1 + x_c ** 2)
        p_t = (1 - cool_share) * weight_share * (1 + trap_scale ** 2)
        trial = replace(drive, input_power_trap=(p_t,) * 3, input_power_cool=(p_c,) * 3,
                        detuning_cool=(-omega,) * 3)
        r0 = operating_point(geom, trial, mass)
        k = static_vertical_stiffness(r0, geom, trial, mass, cooling_offsets(r0, geom, trial))
        if k <= 0:
            raise InfeasibleError(f"no stable vertical trap (stiffness {k:.3g} N/m)")
        new = math.sqrt(k / mass)
        if abs(new - omega) < tol * omega:
            return CooledOperatingPoint(trial, r0, new, k)
        omega = 0.5 * (omega + new)
    raise InfeasibleError("cooling detuning did not converge")


def _escape_event(distance):
    if distance is None:
        return None

    def escaped(t, y):
        return float(np.dot(y[:3], y[:3])) - distance ** 2
    escaped.terminal = True
    escaped.direction = 1
    return escaped


def simulate_dynamic(initial, geom, drive, mass, duration, fields=None, dt_max=np.inf,
                     output_dt=None, reference=None, length_scale=1e-10, omega_scale=None,
                     escape_distance=None, clamped=False):
    """Integrate mirror motion coupled to the six intracavity fields.

    With ``escape_distance`` set, integration stops once the mirror is
    that far from its initial position. ``clamped`` holds the mirror fixed
    and evolves only the fields.

    ``reference`` fixes the cooling-beam detuning (defaults to the initial
    position); ``fields`` is a pair of complex 3-vectors (trap, cool) and
    defaults to their steady state at the initial position.
    """
    r0 = np.asarray(initial.position, float)
    v0 = np.asarray(initial.velocity, float)
    reference = r0 if reference is None else np.asarray(reference, float)
    offsets = cooling_offsets(reference, geom, drive)
    if fields is None:
        fields = steady_fields(r0, geom, drive, offsets)
    a_t, a_c = (np.asarray(f, complex) for f in fields)

    lengths = nominal_lengths(geom)
    F = drive.finesse
    kd = field_decay_rate(F, lengths)
    pull = CONST.c / lengths
    eps_t = 0.5 * kd * np.sqrt(np.asarray(drive.input_power_trap, float) * F)
    eps_c = 0.5 * kd * np.sqrt(np.asarray(drive.input_power_cool, float) * F)
    p_scale = max(mass * CONST.g0 * CONST.c / 2.0, 1e-30)
    s = math.sqrt(p_scale)
    weight = np.array([0.0, 0.0, mass * CONST.g0])
    if omega_scale is None:
        omega_scale = 1.0 / max(duration, 1e-30)

    def rhs(t, y):
        r = r0 + y[:3]
        psi, axis, _ = cavity_phases(r, geom, drive)
        phi, _ = reduce_phase(psi)
        at = (y[6:9] + 1j * y[9:12]) * s
        ac = (y[12:15] + 1j * y[15:18]) * s
        dat = (1j * pull * np.sin(phi) - 0.5 * kd) * at + eps_t
        dac = (1j * pull * np.sin(phi + offsets) - 0.5 * kd) * ac + eps_c
        power = np.abs(at) ** 2 + np.abs(ac) ** 2
        force = (2.0 * power / CONST.c) @ axis - weight
        acc = np.zeros(3) if clamped else force / mass
        return np.concatenate([y[3:6], acc, dat.real / s, dat.imag / s, dac.real / s, dac.imag / s])

    y0 = np.concatenate([np.zeros(3), v0, a_t.real / s, a_t.imag / s, a_c.real / s, a_c.imag / s])
    t0 = float(initial.time)
    if duration <= 0:
        photons = photon_number(np.abs(a_t) ** 2 + np.abs(a_c) ** 2, lengths, drive.omega_c)
        return Trajectory(np.array([t0]), r0[None], v0[None], photons[None], 0)
    t_eval = None
    if output_dt is not None:
        t_eval = t0 + np.arange(0.0, duration * (1 + 1e-12), output_dt)
    atol = np.concatenate([_atol(length_scale, omega_scale), np.full(12, RTOL * 1e-3)])
    sol = solve_ivp(rhs, (t0, t0 + duration), y0, method="DOP853", rtol=RTOL, atol=atol,
                    max_step=dt_max, t_eval=t_eval, first_step=min(0.01 / float(kd.max()), duration),
                    events=_escape_event(escape_distance))
    _collect(sol)
    at = (sol.y[6:9] + 1j * sol.y[9:12]).T * s
    ac = (sol.y[12:15] + 1j * sol.y[15:18]).T * s
    photons = photon_number(np.abs(at) ** 2 + np.abs(ac) ** 2, lengths, drive.omega_c)
    return Trajectory(sol.t, r0 + sol.y[:3].T, sol.y[3:6].T, photons, sol.nfev)


# ---------------------------------------------------------------------------
# Trajectory analysis
# ---------------------------------------------------------------------------


def zero_crossing_frequency(t, x):
    """Angular frequency from upward zero crossings of x(t), linearly interpolated."""
    x = np.asarray(x, float)
    idx = np.nonzero((x[:-1] < 0) & (x[1:] >= 0))[0]
    if len(idx) < 2:
        return math.nan
    tc = t[idx] - x[idx] * (t[idx + 1] - t[idx]) / (x[idx + 1] - x[idx])
    return 2 * math.pi * (len(tc) - 1) / (tc[-1] - tc[0])


def envelope_rate(t, x, period, skip_periods=5, max_amplitude=None):
    """Least-squares exponential rate (1/s) of the oscillation envelope of x(t).

    The envelope is the peak |x| in each period; the first ``skip_periods``
    are discarded as transient, and with ``max_amplitude`` the fit stops at the
    first period whose peak exceeds it (the mirror is leaving the trap).
    """
    t = np.asarray(t, float)
    x = np.asarray(x, float)
    start = t[0] + skip_periods * period
    edges = np.arange(start, t[-1], period)
    tp, ap = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (t >= a) & (t < b)
        if np.any(sel):
            j = np.argmax(np.abs(x[sel]))
            if max_amplitude is not None and abs(x[sel][j]) > max_amplitude:
                break
            tp.append(t[sel][j])
            ap.append(abs(x[sel][j]))
    if len(ap) < 2:
        return math.nan
    slope, _ = np.polyfit(np.asarray(tp), np.log(np.asarray(ap)), 1)
    return float(slope)

"""Heating, damping, cooling and sensitivity estimates.

All mechanical frequencies are angular (rad/s). The optional ``cyclic``
frequency convention treats a quoted mechanical frequency value as if it were
the angular frequency itself, which is how some published order-of-magnitude
figures chain together; it is used only when reproducing such figures.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import integrate, optimize

from .model import CONST
from .modes import UnstableSiteError, mode_frequencies, supported_trap
from .optics import (airy_power, linewidth, nominal_lengths, normalized_detuning,
                     phase_to_detuning, reduce_phase, cavity_phases)
from .traps import InfeasibleError, NoConvergenceError

MOLECULAR_DIAMETER = 3.7e-10  # kinetic diameter of N2, m
QUAD_RTOL = 1e-10


class KnudsenWarning(UserWarning):
    """Gas is not in free molecular flow; the drag formula is outside its validity."""


class QuadratureError(RuntimeError):
    pass


class NonPhysicalInputError(ValueError):
    pass


def mechanical_omega(frequency, convention="angular"):
    """Angular frequency used in the formulas for a quoted mechanical frequency (Hz).

    ``"angular"`` gives 2 pi f; ``"cyclic"`` uses the quoted number unchanged.
    """
    if convention == "angular":
        return 2 * math.pi * frequency
    if convention == "cyclic":
        return float(frequency)
    raise ValueError(f"unknown frequency convention {convention!r}")


# ---------------------------------------------------------------------------
# Background gas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GasBudget:
    damping_rate: float
    collision_rate: float
    heating_power: float
    thermal_phonons: float
    quality_factor: float
    heating_power_closed_form: float
    knudsen_number: float


def knudsen_number(env, mirror, diameter=MOLECULAR_DIAMETER):
    if env.pressure == 0:
        return math.inf
    mfp = CONST.kB * env.temperature / (math.sqrt(2) * math.pi * diameter ** 2 * env.pressure)
    return mfp / mirror.diameter


def _check_free_molecular(env, mirror):
    kn = knudsen_number(env, mirror)
    if kn < 10:
        warnings.warn(f"Knudsen number {kn:.3g} is not >> 1; free-molecular drag is approximate",
                      KnudsenWarning, stacklevel=3)
    return kn


def gas_damping(env, mirror):
    """gamma_m = 2 rho_g v_g S / m with v_g = sqrt(2 kB T / m_g)."""
    _check_free_molecular(env, mirror)
    return 2 * env.gas_density * env.mean_speed_1d * mirror.cross_section / mirror.mass


def speed_density(v, v_g):
    """One-dimensional Maxwell-Boltzmann density of |v_z| on [0, inf)."""
    return 2.0 / (math.sqrt(math.pi) * v_g) * np.exp(-(np.asarray(v) / v_g) ** 2)


def gas_heating_closed_form(env, mirror):
    """(P S / kB T) (2 m_g^2 / m) <v^3>, using <v^3> = v_g^3 / sqrt(pi)."""
    v_g = env.mean_speed_1d
    pre = env.pressure * mirror.cross_section / (CONST.kB * env.temperature)
    return pre * 2 * env.gas_molecule_mass ** 2 / mirror.mass * v_g ** 3 / math.sqrt(math.pi)


def gas_heating_quadrature(env, mirror):
    """Integrate Gamma_g(v) D(v) (2 m_g^2 / m) v^2 over v in [0, inf)."""
    v_g = env.mean_speed_1d
    pre = env.pressure * mirror.cross_section / (CONST.kB * env.temperature)
    kick = 2 * env.gas_molecule_mass ** 2 / mirror.mass
    # integrate in u = v / v_g so the integrand is O(1)
    val, err = integrate.quad(lambda u: u ** 3 * 2.0 / math.sqrt(math.pi) * math.exp(-u * u),
                              0.0, math.inf, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)
    if not err <= 10 * QUAD_RTOL * abs(val) + 1e-300:
        raise QuadratureError(f"speed integral did not converge (err {err:.3g})")
    return pre * kick * v_g ** 3 * val


def gas_heating(env, mirror, omega_m):
    """Heating power from gas collisions and the matching thermal occupation.

    Returns ``(heating_power, thermal_phonons)``; the occupation is
    ``heating_power / (gamma_m hbar omega_m)`` and is 0 in vacuum.
    """
    if not omega_m > 0:
        raise ValueError("omega_m must be > 0")
    power = gas_heating_quadrature(env, mirror)
    gamma = gas_damping(env, mirror)
    if gamma == 0:
        return power, 0.0
    return power, power / (gamma * CONST.hbar * omega_m)


def gas_budget(env, mirror, omega_m):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KnudsenWarning)
        gamma = gas_damping(env, mirror)
        power, n_th = gas_heating(env, mirror, omega_m)
    kn = _check_free_molecular(env, mirror)
    rate = env.pressure * mirror.cross_section * env.mean_speed_1d / (CONST.kB * env.temperature)
    q = omega_m / gamma if gamma > 0 else math.inf
    return GasBudget(gamma, rate, power, n_th, q, gas_heating_closed_form(env, mirror), kn)


# ---------------------------------------------------------------------------
# Laser intensity noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LaserNoiseBudget:
    parametric_rate_up: float
    parametric_rate_down: float
    heating_rate: float
    efold_time: float
    rms_requirement: float
    phonon: int = 0


def parametric_rates(n, omega_m, s_eps):
    """Transition rates n -> n+2 and n -> n-2 driven by S_eps(2 omega_m)."""
    if n < 0:
        raise ValueError("phonon number must be >= 0")
    pre = math.pi * omega_m ** 2 / 16.0 * s_eps
    up = pre * (n + 2) * (n + 1)
    down = pre * n * (n - 1) if n >= 2 else 0.0
    return up, down


def _psd_at(s_eps, omega):
    return float(s_eps(omega)) if callable(s_eps) else float(s_eps)


def intensity_heating(omega_m, s_eps):
    """Energy heating rate gamma_I = (omega_m^2 / 4) S_eps(2 omega_m) and its e-folding time.

    ``s_eps`` is a level in 1/Hz or a callable of angular frequency.
    """
    if not omega_m > 0:
        raise ValueError("omega_m must be > 0")
    gamma = omega_m ** 2 / 4.0 * _psd_at(s_eps, 2 * omega_m)
    return gamma, (1.0 / gamma if gamma > 0 else math.inf)


def rms_requirement(omega_m, efold_time, bandwidth):
    """Largest flat-band RMS fractional intensity noise giving at least ``efold_time``."""
    s_max = 4.0 / (omega_m ** 2 * efold_time)
    return math.sqrt(s_max * bandwidth)


def laser_noise_budget(env, omega_m, n=0, target_efold=10.0):
    s = env.intensity_noise_psd(2 * omega_m)
    up, down = parametric_rates(n, omega_m, s)
    gamma, tau = intensity_heating(omega_m, s)
    return LaserNoiseBudget(up, down, gamma, tau,
                            rms_requirement(omega_m, target_efold, env.noise_bandwidth), n)


# ---------------------------------------------------------------------------
# Blackbody balance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThermalBudget:
    bb_absorption_power: float
    bb_emission_power: float
    laser_absorbed_power: float
    internal_temperature: float
    delta_T: float


def blackbody_power(temperature, area, emissivity):
    """pi^2 S eps (kB T)^4 / (60 c^2 hbar^3)."""
    kt = CONST.kB * temperature
    return math.pi ** 2 * area * emissivity * kt ** 4 / (60 * CONST.c ** 2 * CONST.hbar ** 3)


def blackbody_power_quadrature(temperature, area, emissivity):
    """Same power from the k-integral S eps hbar c^2 / (4 pi^2) int k^3 n_k dk."""
    k_t = CONST.kB * temperature / (CONST.hbar * CONST.c)

    def integrand(u):
        # u = k / k_T; expm1 keeps the small-u end accurate
        return u ** 3 * math.exp(-u) / -math.expm1(-u) if u > 0 else 0.0

    val, _ = integrate.quad(integrand, 0.0, math.inf, epsabs=0.0, epsrel=1e-12, limit=200)
    return area * emissivity * CONST.hbar * CONST.c ** 2 / (4 * math.pi ** 2) * k_t ** 4 * val


def blackbody_balance(env, mirror, laser_absorbed_power):
    """Internal temperature where emission balances blackbody plus laser absorption."""
    if laser_absorbed_power < 0:
        raise ValueError("laser_absorbed_power must be >= 0")
    area, eps = mirror.cross_section, mirror.emissivity
    t_env = env.temperature
    absorbed = blackbody_power(t_env, area, eps)
    if laser_absorbed_power == 0:
        return ThermalBudget(absorbed, absorbed, 0.0, t_env, 0.0)

    def excess(t):
        return blackbody_power(t, area, eps) - absorbed - laser_absorbed_power

    hi = t_env + 1e4
    if excess(hi) < 0:
        raise NonPhysicalInputError("internal temperature exceeds the search bracket")
    # bisection keeps T_int >= T_env by construction
    t_int = optimize.bisect(excess, t_env, hi, xtol=1e-12, rtol=1e-14, maxiter=200)
    return ThermalBudget(absorbed, blackbody_power(t_int, area, eps), laser_absorbed_power,
                         t_int, t_int - t_env)


def laser_absorbed_power(site, drive, geom, mirror):
    """Coating absorption fraction times the total circulating power at the site."""
    psi, _, _ = cavity_phases(site.position, geom, drive)
    phi, _ = reduce_phase(psi)
    return mirror.coating_absorption_fraction * float(
        np.sum(airy_power(np.asarray(drive.input_power_trap), drive.finesse, phi)))


# ---------------------------------------------------------------------------
# Sideband cooling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoolingSummary:
    coupling: float
    spectra_plus: tuple
    spectra_minus: tuple
    cooling_rate: float
    min_phonons: float
    combined_phonons: float
    photon_numbers: tuple
    heating_dominated: bool


def intracavity_photons(circulating, length, omega_c):
    """Standing-wave photon number P L / (hbar omega_c c)."""
    return circulating * length / (CONST.hbar * omega_c * CONST.c)


def optomechanical_coupling(omega_c, length, mass, omega_m):
    return omega_c * math.sqrt(CONST.hbar / (2 * mass * omega_m)) / length


def noise_spectrum(omega, photons, kappa, detuning):
    """S(omega) = n kappa / ((kappa / 2)^2 + (omega + delta)^2); delta > 0 is blue."""
    return photons * kappa / ((kappa / 2) ** 2 + (omega + detuning) ** 2)


def sideband_ratio(omega_m, photons, kappa, detunings):
    """Sum S(+omega_m) / sum S(-omega_m) over beams; > 1 means net cooling."""
    photons = np.asarray(photons, float)
    detunings = np.asarray(detunings, float)
    sp = noise_spectrum(omega_m, photons, kappa, detunings)
    sm = noise_spectrum(-omega_m, photons, kappa, detunings)
    return float(sp.sum() / sm.sum()), sp, sm


def min_phonons_from_ratio(ratio):
    """Solve (n + 1) / n = ratio; infinite when the beams heat."""
    return 1.0 / (ratio - 1.0) if ratio > 1 else math.inf


def combined_phonons(cooling_rate, min_phonons, gas_rate, thermal_phonons):
    total = cooling_rate + gas_rate
    if not math.isfinite(min_phonons) or total <= 0:
        return math.inf if not math.isfinite(min_phonons) else thermal_phonons
    return (cooling_rate * min_phonons + gas_rate * thermal_phonons) / total


def cooling_summary(site, drive, geom, mirror, gas):
    """Sideband cooling of the vertical mode by the trap and cooling beams at ``site``."""
    if not site.stable:
        raise UnstableSiteError(float(np.min(np.linalg.eigvalsh(site.stiffness))))
    modes = mode_frequencies(site, mirror.mass)
    omega_m = modes.vertical
    e = modes.axes[:, modes.vertical_index]
    lengths = nominal_lengths(geom)
    L0 = float(np.mean(lengths))
    kappa = linewidth(drive.finesse, L0)
    psi, axis, _ = cavity_phases(site.position, geom, drive)
    phi, _ = reduce_phase(psi)
    weight = (axis @ e) ** 2

    p_trap = airy_power(np.asarray(drive.input_power_trap, float), drive.finesse, phi)
    phi_c = np.asarray(drive.detuning_cool, float) * lengths / CONST.c
    p_cool = airy_power(np.asarray(drive.input_power_cool, float), drive.finesse, phi_c)
    n_trap = intracavity_photons(p_trap, lengths, drive.omega_c) * weight
    n_cool = intracavity_photons(p_cool, lengths, drive.omega_c) * weight
    delta_trap = phase_to_detuning(phi, lengths)
    photons = np.concatenate([n_trap, n_cool])
    detunings = np.concatenate([delta_trap, np.asarray(drive.detuning_cool, float)])

    ratio, sp, sm = sideband_ratio(omega_m, photons, kappa, detunings)
    g = optomechanical_coupling(drive.omega_c, L0, mirror.mass, omega_m)
    rate = g ** 2 * float(sp.sum() - sm.sum())
    n_min = min_phonons_from_ratio(ratio)
    return CoolingSummary(g, tuple(sp), tuple(sm), rate, n_min,
                          combined_phonons(rate, n_min, gas.damping_rate, gas.thermal_phonons),
                          (float(n_trap.sum()), float(n_cool.sum())), ratio <= 1)


@dataclass(frozen=True)
class PhononRow:
    finesse: float
    omega_m: float
    trap_power_total: float
    cool_power_total: float
    photons_trap: float
    photons_cool: float
    min_phonons: float
    feasible: bool = True


def cooling_beam_photons(input_power, finesse, detuning, length, omega_c):
    circ = airy_power(input_power, finesse, detuning * length / CONST.c)
    return intracavity_photons(circ, length, omega_c)


def min_phonon_vs_finesse(finesse_grid, geom, mirror, power_ratio=0.1, trap_detuning=0.5,
                          wavelength=1064e-9, power_bracket=(1e-3, 1e3)):
    """Minimum phonon number versus finesse for a supported trap plus a red cooling beam.

    The trap beam is held at ``trap_detuning`` linewidths by the support
    solve; the cooling beam carries ``1 / power_ratio`` times the trap input
    power at ``-omega_m``. The cooling beam's own force is not included in the
    support solve.
    """
    rows = []
    for finesse in finesse_grid:
        if not 500 <= finesse <= 50000:
            raise ValueError(f"finesse {finesse} outside [500, 50000]")
        try:
            site, drive = supported_trap(trap_detuning, geom, mirror.mass, finesse, wavelength,
                                         power_bracket)
            omega_m = mode_frequencies(site, mirror.mass).vertical
        except (InfeasibleError, NoConvergenceError, UnstableSiteError):
            rows.append(PhononRow(finesse, math.nan, math.nan, math.nan, math.nan, math.nan,
                                  math.nan, False))
            continue
        lengths = nominal_lengths(geom)
        L0 = float(np.mean(lengths))
        kappa = linewidth(finesse, L0)
        p_t = np.asarray(drive.input_power_trap, float)
        p_c = p_t / power_ratio
        psi, _, _ = cavity_phases(site.position, geom, drive)
        phi, _ = reduce_phase(psi)
        n_t = intracavity_photons(airy_power(p_t, finesse, phi), lengths, drive.omega_c)
        n_c = cooling_beam_photons(p_c, finesse, -omega_m, lengths, drive.omega_c)
        ratio, _, _ = sideband_ratio(
            omega_m, np.concatenate([n_t, n_c]), kappa,
            np.concatenate([phase_to_detuning(phi, lengths), np.full(3, -omega_m)]))
        rows.append(PhononRow(finesse, omega_m, float(p_t.sum()), float(p_c.sum()),
                              float(n_t.sum()), float(n_c.sum()), min_phonons_from_ratio(ratio)))
    return rows


def cooled_drive(drive, omega_m, power_ratio=0.1):
    """Trap drive plus cooling beams of ``1 / power_ratio`` times its power at ``-omega_m``."""
    return replace(drive, input_power_cool=tuple(p / power_ratio for p in drive.input_power_trap),
                   detuning_cool=(-omega_m,) * 3)


# ---------------------------------------------------------------------------
# Gravimetry
# ---------------------------------------------------------------------------


def detected_photons(detected_power, integration_time, wavelength):
    return detected_power * integration_time * wavelength / (2 * math.pi * CONST.hbar * CONST.c)


def gravimetric_precision(detected_power, integration_time, wavelength):
    """Shot-noise-limited dg/g = 1 / sqrt(n_ph)."""
    if not (detected_power > 0 and integration_time > 0 and wavelength > 0):
        raise ValueError("power, time and wavelength must be > 0")
    return 1.0 / math.sqrt(detected_photons(detected_power, integration_time, wavelength))


# ---------------------------------------------------------------------------
# Aggregated report
# ---------------------------------------------------------------------------


def budget_report(config, site, drive=None):
    """Gas, laser-noise, thermal and cooling budgets for one trap site, as plain dicts."""
    drive = config.drive if drive is None else drive
    mirror, env, geom = config.mirror, config.environment, config.geometry
    omega_m = mode_frequencies(site, mirror.mass).vertical
    gas = gas_budget(env, mirror, omega_m)
    noise = laser_noise_budget(env, omega_m)
    thermal = blackbody_balance(env, mirror, laser_absorbed_power(site, drive, geom, mirror))
    cool = cooling_summary(site, drive, geom, mirror, gas)
    return {
        "omega_m": omega_m,
        "trap_detunings_over_kappa": [
            float(normalized_detuning(p, drive.finesse)) for p in
            reduce_phase(cavity_phases(site.position, geom, drive)[0])[0]],
        "gas": asdict(gas),
        "laser_noise": asdict(noise),
        "thermal": asdict(thermal),
        "cooling": asdict(cool),
    }

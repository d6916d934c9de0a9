"""Optical-spring mode frequencies and the frequency-versus-detuning sweep."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import BeamDrive
from .traps import (InfeasibleError, NoConvergenceError, find_equilibrium,
                    supported_drive, symmetric_seed)


class UnstableSiteError(ValueError):
    def __init__(self, eigenvalue):
        super().__init__(f"stiffness has non-positive eigenvalue {eigenvalue:.6g} J/m^2")
        self.eigenvalue = eigenvalue


@dataclass(frozen=True)
class ModeSet:
    stiffness: np.ndarray
    frequencies: np.ndarray
    axes: np.ndarray

    @property
    def vertical_index(self):
        return int(np.argmax(np.abs(self.axes[2, :])))

    @property
    def vertical(self):
        return float(self.frequencies[self.vertical_index])

    @property
    def horizontal(self):
        idx = [i for i in range(3) if i != self.vertical_index]
        return tuple(float(self.frequencies[i]) for i in idx)


def mode_frequencies(site_or_stiffness, mass):
    """Eigenfrequencies sqrt(k_i / m) in rad/s, ascending; axes are the columns."""
    k = getattr(site_or_stiffness, "stiffness", site_or_stiffness)
    k = np.asarray(k, dtype=float)
    evals, vecs = np.linalg.eigh(0.5 * (k + k.T))
    if evals[0] <= 0:
        raise UnstableSiteError(float(evals[0]))
    return ModeSet(k, np.sqrt(evals / mass), vecs)


@dataclass(frozen=True)
class SweepRow:
    finesse: float
    detuning_over_kappa: float
    omega_m_vertical: float
    omega_m_h1: float
    omega_m_h2: float
    input_power_total: float
    feasible: bool = True


def supported_trap(fraction, geom, mass, finesse, wavelength=1064e-9, power_bracket=(1e-3, 1e3)):
    """Trap held at normalized detuning ``fraction`` by re-solving the support power."""
    shape = BeamDrive.symmetric(3.0, finesse=finesse, wavelength=wavelength)
    drive = supported_drive(fraction, geom, shape, mass, bracket=power_bracket)
    site = find_equilibrium(symmetric_seed(geom, drive, mass), geom, drive, mass)
    return site, drive


def frequency_vs_detuning(finesse_list, detuning_grid, geom, mass, wavelength=1064e-9,
                          power_bracket=(1e-3, 1e3)):
    """Mechanical frequencies along a detuning sweep with the mirror held at force balance.

    Rows that cannot be supported inside ``power_bracket`` are flagged infeasible.
    """
    rows = []
    for finesse in finesse_list:
        for frac in detuning_grid:
            try:
                site, drive = supported_trap(frac, geom, mass, finesse, wavelength, power_bracket)
                modes = mode_frequencies(site, mass)
            except (InfeasibleError, NoConvergenceError, UnstableSiteError):
                rows.append(SweepRow(finesse, frac, math.nan, math.nan, math.nan, math.nan, False))
                continue
            h1, h2 = modes.horizontal
            rows.append(SweepRow(finesse, frac, modes.vertical, h1, h2, drive.total_trap_power))
    return rows

"""Generalized potential of the levitated mirror, its gradient and Hessian.

Each cavity contributes ``-(2 P_in / c) * Phi(k L) / k`` where
``Phi(x) = arctan(F tan x) + pi * round(x / pi)`` is the continuous branch of
the arctangent. The contribution falls with cavity length, so that minus the
gradient reproduces the outward radiation pressure; gravity adds ``m g z``.
Potentials are defined up to a pose-independent constant (the branch count is
taken relative to the nominal pose).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import CONST
from .optics import as_position, cavity_phases, reduce_phase

HORIZONTAL_STEP = 1e-10
VERTICAL_STEP = 1e-12


class NumericalStepError(ValueError):
    """Finite-difference step too small for the coordinate magnitude."""


@dataclass(frozen=True)
class PotentialSample:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    branch_indices: tuple


def unwrapped_arctan(psi, finesse):
    phi, n = reduce_phase(psi)
    return np.arctan(finesse * np.tan(phi)) + n * math.pi


def unwrapped_arctan_slope(psi, finesse):
    """d/dpsi of the unwrapped arctan(F tan psi)."""
    s, c = np.sin(psi), np.cos(psi)
    return finesse / (c * c + (finesse * s) ** 2)


def _weights(drive):
    return 2.0 * np.asarray(drive.input_power_trap, dtype=float) / CONST.c


def potential(pose, geom, drive, mass):
    r = as_position(pose)
    psi, _, _ = cavity_phases(r, geom, drive)
    optical = -np.sum(_weights(drive) * unwrapped_arctan(psi, drive.finesse), axis=-1) / drive.k
    return optical + mass * CONST.g0 * r[..., 2]


def gradient(pose, geom, drive, mass):
    r = as_position(pose)
    psi, axis, _ = cavity_phases(r, geom, drive)
    slope = _weights(drive) * unwrapped_arctan_slope(psi, drive.finesse)
    g = -np.sum(slope[..., None] * axis, axis=-2)
    g[..., 2] += mass * CONST.g0
    return g


def hessian(pose, geom, drive, mass, steps=(HORIZONTAL_STEP, HORIZONTAL_STEP, VERTICAL_STEP)):
    """Symmetrized central differences of the analytic gradient."""
    r = as_position(pose).astype(float)
    steps = np.asarray(steps, dtype=float)
    floor = 64 * np.finfo(float).eps * np.maximum(np.abs(r), 1e-3)
    if np.any(steps <= floor):
        raise NumericalStepError(f"steps {steps} too small for coordinates {r}")
    cols = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = steps[i]
        cols.append((gradient(r + e, geom, drive, mass) - gradient(r - e, geom, drive, mass)) / (2 * steps[i]))
    h = np.column_stack(cols)
    return 0.5 * (h + h.T)


def sample(pose, geom, drive, mass):
    r = as_position(pose)
    psi, _, _ = cavity_phases(r, geom, drive)
    _, n = reduce_phase(psi)
    return PotentialSample(
        float(potential(r, geom, drive, mass)),
        gradient(r, geom, drive, mass),
        hessian(r, geom, drive, mass),
        tuple(int(i) for i in n),
    )


def potential_grid(geom, drive, mass, xs, ys, zs):
    """Evaluate U on the product grid; returns an (N, 4) array of (x, y, z, U) rows."""
    X, Y, Z = np.meshgrid(np.asarray(xs, float), np.asarray(ys, float), np.asarray(zs, float), indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=-1)
    return np.column_stack([pts, potential(pts, geom, drive, mass)])

"""Cavity geometry and steady-state optical response.

Cavity phases are evaluated as a fixed per-cavity constant plus
``k * (|q_n - r| - |q_n|)``, with the length change computed in a
cancellation-free form. With the frame origin at the nominal pose this keeps
phase round-off near 1e-14 rad, which the finite-difference checks and the
sub-femtometre equilibrium solver rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import CONST, MirrorPose


class DegenerateGeometryError(ValueError):
    """The mirror's centre of curvature coincides with a lower mirror's."""


@dataclass(frozen=True)
class CavityState:
    length: np.ndarray
    axis: np.ndarray
    phase: np.ndarray
    circulating_power: np.ndarray
    force: np.ndarray


def as_position(pose):
    if isinstance(pose, MirrorPose):
        return pose.r_array
    return np.asarray(pose, dtype=float)


def _separation(r, geom):
    """Length change, unit axis (r - q_n)/|r - q_n| and distance for each cavity."""
    q = geom.q_array
    r = np.asarray(r, dtype=float)[..., None, :]
    v = r - q
    dist = np.linalg.norm(v, axis=-1)
    if np.any(dist == 0):
        raise DegenerateGeometryError("mirror centre of curvature coincides with a lower mirror")
    d0 = np.linalg.norm(q, axis=-1)
    r2 = np.sum(r * r, axis=-1)
    delta = (r2 - 2.0 * np.sum(q * r, axis=-1)) / (dist + d0)
    return delta, v / dist[..., None], dist


def cavity_lengths(pose, geom):
    """L_n = R_b - R_t + |q_n - r| for the three cavities."""
    _, _, dist = _separation(as_position(pose), geom)
    return geom.radius_of_curvature_bottom - geom.radius_of_curvature_top + dist


def nominal_lengths(geom):
    return (geom.radius_of_curvature_bottom - geom.radius_of_curvature_top
            + np.linalg.norm(geom.q_array, axis=-1))


def phase_reference(geom, drive):
    """Per-cavity phase at the nominal pose, folded into [0, pi), plus laser offsets."""
    L0 = nominal_lengths(geom)
    base = np.fmod(drive.k * L0, math.pi)
    offset = np.asarray(drive.detuning_trap, dtype=float) * L0 / CONST.c
    return base + offset


def cavity_phases(pose, geom, drive):
    """Unwrapped round-trip phase k L_n, relative to a pose-independent multiple of pi.

    Returns ``(psi, axis, dist)``.
    """
    delta, axis, dist = _separation(as_position(pose), geom)
    return phase_reference(geom, drive) + drive.k * delta, axis, dist


def reduce_phase(psi):
    """Split psi into (phi, N) with psi = phi + N pi and phi in [-pi/2, pi/2]."""
    n = np.round(psi / math.pi)
    return psi - n * math.pi, n.astype(int)


def airy_power(input_power, finesse, phase):
    return input_power * finesse / (1.0 + (finesse * np.sin(phase)) ** 2)


def circulating_power(input_power, finesse, k, length):
    """P = P_in F / (1 + F^2 sin^2(k L))."""
    return airy_power(input_power, finesse, k * length)


def linewidth(finesse, nominal_length):
    """Cavity decay rate kappa = pi c / (F L0) in rad/s."""
    return math.pi * CONST.c / (finesse * nominal_length)


def detuning_to_phase(detuning, length):
    return detuning * length / CONST.c


def phase_to_detuning(phase, length):
    return phase * CONST.c / length


def normalized_detuning(phase, finesse):
    """delta / kappa for a cavity at reduced phase ``phase``."""
    return phase * finesse / math.pi


def phase_for_normalized_detuning(fraction, finesse):
    return fraction * math.pi / finesse


def radiation_force(pose, geom, drive, mass=0.0, include_gravity=True):
    """Total force on the mirror and the per-cavity state.

    Each beam pushes the mirror along (r - q_n)/|r - q_n| with magnitude
    2 P_n / c, lengthening its cavity.
    """
    r = as_position(pose)
    psi, axis, dist = cavity_phases(r, geom, drive)
    phi, _ = reduce_phase(psi)
    power = airy_power(np.asarray(drive.input_power_trap), drive.finesse, phi)
    per_cavity = (2.0 * power / CONST.c)[..., None] * axis
    total = per_cavity.sum(axis=-2)
    if include_gravity:
        total = total.copy()
        total[..., 2] -= mass * CONST.g0
    length = geom.radius_of_curvature_bottom - geom.radius_of_curvature_top + dist
    return total, CavityState(length, axis, phi, power, per_cavity)

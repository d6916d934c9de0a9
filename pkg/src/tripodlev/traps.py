"""Equilibria of the levitated mirror: location, classification, lattice scans,
trap extents and the input power needed for support."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .model import CONST
from .optics import (_separation, as_position, cavity_phases, nominal_lengths,
                     phase_reference, reduce_phase)
from .potential import gradient, hessian, potential

GRADIENT_TOL = 1e-15
STEP_TOL = 1e-15
DEDUP_RADIUS = 1e-9


class NoConvergenceError(RuntimeError):
    """Newton iteration did not reach an equilibrium."""

    def __init__(self, message, last_iterate):
        super().__init__(message)
        self.last_iterate = last_iterate


class InfeasibleError(ValueError):
    """No input power in the search bracket supports the mirror."""


class RegionTooLargeError(ValueError):
    pass


class InvalidSiteError(ValueError):
    pass


@dataclass(frozen=True)
class TrapSite:
    position: np.ndarray
    detunings: np.ndarray
    stiffness: np.ndarray
    frequencies: np.ndarray
    stable: bool
    gradient_norm: float
    extents: np.ndarray | None = None


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def around(cls, centre, half_widths):
        c = np.asarray(centre, float)
        h = np.asarray(half_widths, float)
        return cls(c - h, c + h)

    def contains(self, r):
        r = np.asarray(r, float)
        return bool(np.all(r >= self.lo) and np.all(r <= self.hi))

    def corners(self):
        return np.array(list(itertools.product(*zip(self.lo, self.hi))))


@dataclass(frozen=True)
class LatticeScan:
    sites: list
    spacing: dict = field(default_factory=dict)


def normalized_detunings(r, geom, drive):
    """delta_n / kappa at pose r, with kappa = pi c / (F L0)."""
    psi, _, dist = cavity_phases(r, geom, drive)
    phi, _ = reduce_phase(psi)
    length = geom.radius_of_curvature_bottom - geom.radius_of_curvature_top + dist
    return phi * drive.finesse * geom.nominal_length / (math.pi * length)


def classify(position, geom, drive, mass):
    r = np.asarray(position, float)
    k = hessian(r, geom, drive, mass)
    evals = np.linalg.eigvalsh(k)
    with np.errstate(invalid="ignore"):
        freqs = np.where(evals > 0, np.sqrt(np.abs(evals) / mass), np.nan)
    return TrapSite(
        position=r,
        detunings=normalized_detunings(r, geom, drive),
        stiffness=k,
        frequencies=freqs,
        stable=bool(np.all(evals > 0)),
        gradient_norm=float(np.linalg.norm(gradient(r, geom, drive, mass))),
    )


def find_equilibrium(seed, geom, drive, mass, max_iter=200):
    """Damped Newton iteration on grad U = 0.

    Raises NoConvergenceError carrying the last iterate when no equilibrium
    is reached, e.g. when the beams are off and the mirror is in free fall.
    """
    r = as_position(seed).astype(float).copy()
    g = gradient(r, geom, drive, mass)
    gnorm = np.linalg.norm(g)
    for _ in range(max_iter):
        h = hessian(r, geom, drive, mass)
        evals = np.linalg.eigvalsh(h)
        scale = np.max(np.abs(evals))
        if scale == 0 or np.min(np.abs(evals)) < 1e-12 * scale:
            if scale == 0:
                break
            # near-singular Hessian: steepest descent scaled by the largest curvature
            step = -g / scale
        else:
            step = -np.linalg.solve(h, g)
        if gnorm < GRADIENT_TOL and np.linalg.norm(step) < STEP_TOL:
            return classify(r, geom, drive, mass)
        t = 1.0
        for _ in range(40):
            trial = r + t * step
            g_trial = gradient(trial, geom, drive, mass)
            if np.linalg.norm(g_trial) < gnorm or np.linalg.norm(t * step) < STEP_TOL:
                break
            t *= 0.5
        else:
            raise NoConvergenceError("line search stalled", r)
        r, g = trial, g_trial
        gnorm = np.linalg.norm(g)
        if gnorm < GRADIENT_TOL and np.linalg.norm(t * step) < STEP_TOL:
            return classify(r, geom, drive, mass)
    raise NoConvergenceError(f"no equilibrium after {max_iter} iterations", r)


# ---------------------------------------------------------------------------
# Support power and symmetric seeds
# ---------------------------------------------------------------------------


def axis_point_for_phase(geom, drive, phase):
    """Point on the tripod axis where cavity 0 has reduced phase ``phase``.

    Of all such points the one closest to the nominal pose is returned.
    """
    cx, cy, _ = geom.centroid
    c0 = phase_reference(geom, drive)[0]
    n = round((c0 - phase) / math.pi)
    target = phase + n * math.pi

    def residual(z):
        psi, _, _ = cavity_phases(np.array([cx, cy, z]), geom, drive)
        return psi[0] - target

    span = drive.wavelength
    z = optimize.brentq(residual, -span, span, xtol=1e-22, rtol=4 * np.finfo(float).eps, maxiter=200)
    return np.array([cx, cy, z])


def _axis_projection(geom, point):
    _, axis, _ = _separation(point, geom)
    return axis[:, 2]


def support_phase(geom, drive, mass):
    """Reduced blue-side phase at which equal-phase beams balance gravity, or None."""
    p_in = np.asarray(drive.input_power_trap, float)
    point = axis_point_for_phase(geom, drive, 0.0)
    uz = _axis_projection(geom, point)
    # sum_n (2/c) P_in,n F / (1 + F^2 s^2) u_nz = m g
    peak = np.sum(2 * p_in * drive.finesse / CONST.c * uz)
    need = mass * CONST.g0
    if peak < need or need <= 0:
        return None
    s = math.sqrt(peak / need - 1.0) / drive.finesse
    return math.asin(min(s, 1.0))


def symmetric_seed(geom, drive, mass):
    phase = support_phase(geom, drive, mass)
    if phase is None:
        raise InfeasibleError("input power cannot support the mirror at any detuning")
    return axis_point_for_phase(geom, drive, phase)


def central_site(geom, drive, mass):
    return find_equilibrium(symmetric_seed(geom, drive, mass), geom, drive, mass)


def solve_support_power(target_detuning, geom, drive, mass, bracket=(1e-3, 1e3)):
    """Total trapping input power holding the mirror at normalized detuning ``target_detuning``.

    The per-cavity split follows ``drive.input_power_trap`` (equal if all zero).
    """
    if not 0 < target_detuning < 1:
        raise ValueError("target_detuning must lie in (0, 1)")
    shape = np.asarray(drive.input_power_trap, float)
    shape = np.full(3, 1 / 3) if shape.sum() == 0 else shape / shape.sum()
    L0 = geom.nominal_length
    lengths = nominal_lengths(geom)
    phase = target_detuning * math.pi * lengths / (drive.finesse * L0)
    point = axis_point_for_phase(geom, drive, float(phase[0]))
    uz = _axis_projection(geom, point)
    airy = drive.finesse / (1 + (drive.finesse * np.sin(phase)) ** 2)
    weight = mass * CONST.g0

    def imbalance(total):
        return np.sum(2 * total * shape * airy * uz / CONST.c) - weight

    lo, hi = bracket
    if imbalance(lo) * imbalance(hi) > 0:
        raise InfeasibleError(f"no support power in [{lo}, {hi}] W at detuning {target_detuning} kappa")
    return optimize.bisect(imbalance, lo, hi, xtol=1e-300, rtol=1e-10, maxiter=400)


def supported_drive(target_detuning, geom, drive, mass, bracket=(1e-3, 1e3)):
    total = solve_support_power(target_detuning, geom, drive, mass, bracket=bracket)
    shape = np.asarray(drive.input_power_trap, float)
    shape = np.full(3, 1 / 3) if shape.sum() == 0 else shape / shape.sum()
    return replace(drive, input_power_trap=tuple(float(total * s) for s in shape))


# ---------------------------------------------------------------------------
# Lattice scans
# ---------------------------------------------------------------------------


def _solve_phases(start, targets, geom, drive, tol=1e-13, max_iter=50):
    """Position where each cavity's unwrapped phase equals ``targets``."""
    r = np.asarray(start, float).copy()
    for _ in range(max_iter):
        psi, axis, _ = cavity_phases(r, geom, drive)
        res = psi - targets
        step = np.linalg.solve(drive.k * axis, res)
        r -= step
        if np.max(np.abs(res)) < tol:
            return r
    return r


def _lattice_seeds(region, geom, drive, mass, cap):
    phase = support_phase(geom, drive, mass)
    if phase is None:
        return []
    ref = phase_reference(geom, drive)
    axis0 = -geom.q_array / np.linalg.norm(geom.q_array, axis=1)[:, None]
    corners = region.corners()
    lin = ref + drive.k * corners @ axis0.T
    d0 = np.linalg.norm(geom.q_array, axis=1)
    rho2 = np.max(np.sum(corners ** 2, axis=1))
    margin = drive.k * rho2 / (2 * d0.min()) + math.pi
    ranges = []
    for n in range(3):
        lo = math.ceil((lin[:, n].min() - margin - phase) / math.pi)
        hi = math.floor((lin[:, n].max() + margin - phase) / math.pi)
        ranges.append(range(lo, hi + 1))
    count = math.prod(len(rg) for rg in ranges)
    if count > cap:
        raise RegionTooLargeError(f"{count} candidate sites exceed cap {cap}")
    seeds = []
    for m in itertools.product(*ranges):
        targets = phase + math.pi * np.asarray(m, float)
        guess = np.linalg.solve(drive.k * axis0, targets - ref)
        seeds.append(_solve_phases(guess, targets, geom, drive))
    return seeds


def _grid_seeds(region, grid_step, cap):
    axes = [np.arange(lo, hi + 0.5 * s, s) for lo, hi, s in zip(region.lo, region.hi, grid_step)]
    count = math.prod(len(a) for a in axes)
    if count > cap:
        raise RegionTooLargeError(f"{count} grid seeds exceed cap {cap}")
    return [np.array(p) for p in itertools.product(*axes)]


def scan_lattice(region, geom, drive, mass, seeding="lattice", grid_step=None, cap=100_000):
    """Locate all stable trap sites inside ``region``.

    ``seeding="lattice"`` starts Newton from the points where every cavity sits
    at the support phase (one per resonance-order triple); ``seeding="grid"``
    starts from every point of a regular grid with spacing ``grid_step``
    (default lambda/8 horizontally, 0.2 nm vertically).
    """
    if seeding == "lattice":
        seeds = _lattice_seeds(region, geom, drive, mass, cap)
    elif seeding == "grid":
        if grid_step is None:
            grid_step = (drive.wavelength / 8, drive.wavelength / 8, 0.2e-9)
        seeds = _grid_seeds(region, np.asarray(grid_step, float), cap)
    else:
        raise ValueError(f"unknown seeding {seeding!r}")

    found = []
    for seed in seeds:
        if seeding == "lattice" and not region.contains(seed):
            # seeds are within a few nm of their site; allow sites straddling the boundary
            if np.any(seed < region.lo - 5e-9) or np.any(seed > region.hi + 5e-9):
                continue
        try:
            site = find_equilibrium(seed, geom, drive, mass, max_iter=60 if seeding == "grid" else 200)
        except NoConvergenceError:
            continue
        if site.stable and region.contains(site.position):
            found.append(site)

    unique = []
    for site in sorted(found, key=lambda s: tuple(s.position)):
        if all(np.linalg.norm(site.position - u.position) > DEDUP_RADIUS for u in unique):
            unique.append(site)
    return LatticeScan(unique, spacing_statistics([s.position for s in unique]))


def spacing_statistics(positions):
    pts = np.asarray(positions, float).reshape(-1, 3)
    if len(pts) < 2:
        return {"count": len(pts), "mean": math.nan, "std": math.nan, "min": math.nan, "max": math.nan}
    xy = pts[:, :2]
    d = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    nn = d.min(axis=1)
    return {"count": len(pts), "mean": float(nn.mean()), "std": float(nn.std()),
            "min": float(nn.min()), "max": float(nn.max())}


def is_triangular(positions, rel_tol=0.05, angle_tol=math.radians(3)):
    """True if every nearest-neighbour bond has a common length and a 60-degree multiple direction."""
    pts = np.asarray(positions, float)[:, :2]
    if len(pts) < 3:
        return False
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    a = d.min()
    bonds = [(i, j) for i in range(len(pts)) for j in range(i + 1, len(pts)) if d[i, j] < a * (1 + rel_tol)]
    if not bonds:
        return False
    ref = None
    for i, j in bonds:
        v = pts[j] - pts[i]
        ang = math.atan2(v[1], v[0]) % (math.pi / 3)
        if ref is None:
            ref = ang
        diff = abs(ang - ref)
        diff = min(diff, math.pi / 3 - diff)
        if diff > angle_tol:
            return False
    return len(bonds) >= len(pts) - 1


# ---------------------------------------------------------------------------
# Extents
# ---------------------------------------------------------------------------


def _line_scale(site, geom, drive, direction):
    _, axis, _ = cavity_phases(site.position, geom, drive)
    proj = np.max(np.abs(axis @ direction))
    return 1.0 / (drive.k * drive.finesse * proj)


def _first_barrier(du):
    peaks = np.nonzero((du[1:-1] > du[:-2]) & (du[1:-1] >= du[2:]))[0]
    return du[peaks[0] + 1] if len(peaks) else math.inf


def trap_extents(site, geom, drive, mass, span=60, resolution=40):
    """Isopotential half-widths along the principal axes of the stiffness tensor.

    The escape level is the lowest potential barrier met along any principal
    axis, on either side of the site. Along each axis the half-width is half
    the length of the segment on which U stays below that level.
    """
    if not site.stable:
        raise InvalidSiteError("extents are defined for stable sites only")
    _, vecs = np.linalg.eigh(site.stiffness)
    u0 = float(potential(site.position, geom, drive, mass))
    lines = []
    for i in range(3):
        e = vecs[:, i]
        ell = _line_scale(site, geom, drive, e)
        s = np.linspace(0.0, span * ell, span * resolution + 1)
        for sign in (1.0, -1.0):
            du = potential(site.position + sign * s[:, None] * e, geom, drive, mass) - u0
            lines.append((i, sign, e, s, du))
    level = min(_first_barrier(du) for *_, du in lines)
    if not math.isfinite(level) or level <= 0:
        raise InvalidSiteError("no escape barrier found along the principal axes")

    half = np.zeros((3, 2))
    for i, sign, e, s, du in lines:
        above = np.nonzero(du >= level)[0]
        if len(above) == 0:
            raise InvalidSiteError("isopotential does not close within the scan span")
        j = above[0]

        def f(x):
            return float(potential(site.position + sign * x * e, geom, drive, mass)) - u0 - level

        lo = s[j - 1]
        half[i, 0 if sign > 0 else 1] = lo if f(lo) >= 0 else optimize.brentq(f, lo, s[j], xtol=1e-6 * (s[1] - s[0]))
    return half.mean(axis=1)


def with_extents(site, geom, drive, mass):
    return replace(site, extents=trap_extents(site, geom, drive, mass))

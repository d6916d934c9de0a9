"""Physical constants, parameter records and configuration loading.

Every quantity is stored in SI units. Configuration files are INI-style
``key = value`` files; values may carry a unit suffix (``0.3 mg``,
``10 cm``, ``1e-8 bar``) which is normalized on load.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import constants as sc


@dataclass(frozen=True)
class PhysicalConstants:
    c: float = sc.c
    hbar: float = sc.hbar
    kB: float = sc.k
    g0: float = sc.g


CONST = PhysicalConstants()


class ConfigError(ValueError):
    """Configuration file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ValueError):
    """A parameter violates its invariant."""

    def __init__(self, field_name, message):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


# ---------------------------------------------------------------------------
# Parameter records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MirrorSpec:
    mass: float = 3.0e-7
    radius_of_curvature_top: float = 0.03
    diameter: float = 2.0e-3
    emissivity: float = 2.0e-4
    absorption_coefficient: float = 1.0e-5
    coating_absorption_fraction: float = 1.0e-6

    @property
    def cross_section(self):
        return math.pi * (0.5 * self.diameter) ** 2

    def validate(self):
        if not self.mass > 0:
            raise ValidationError("mass", "must be > 0")
        if not self.radius_of_curvature_top > 0:
            raise ValidationError("radius_of_curvature_top", "must be > 0")
        if not self.diameter > 0:
            raise ValidationError("diameter", "must be > 0")
        if not 0 < self.emissivity <= 1:
            raise ValidationError("emissivity", "must lie in (0, 1]")
        if self.absorption_coefficient < 0:
            raise ValidationError("absorption_coefficient", "must be >= 0")
        if not 0 <= self.coating_absorption_fraction <= 1:
            raise ValidationError("coating_absorption_fraction", "must lie in [0, 1]")


@dataclass(frozen=True)
class TripodGeometry:
    """Centres of curvature of the three lower mirrors.

    The frame origin is the nominal pose of the levitated mirror's centre of
    curvature; the tripod axis is the z axis.
    """

    q: tuple
    radius_of_curvature_bottom: float
    radius_of_curvature_top: float
    nominal_length: float
    tilt_angle: float

    @classmethod
    def from_tilt(cls, radius_of_curvature_bottom=0.20, radius_of_curvature_top=0.03,
                  nominal_length=0.18, tilt_angle=math.radians(2.0)):
        d0 = nominal_length - radius_of_curvature_bottom + radius_of_curvature_top
        if not d0 > 0:
            raise ValidationError(
                "nominal_length", "must exceed radius_of_curvature_bottom - radius_of_curvature_top")
        s, c = math.sin(tilt_angle), math.cos(tilt_angle)
        q = tuple(
            (d0 * s * math.cos(2 * math.pi * n / 3), d0 * s * math.sin(2 * math.pi * n / 3), -d0 * c)
            for n in range(3)
        )
        return cls(q, radius_of_curvature_bottom, radius_of_curvature_top, nominal_length, tilt_angle)

    @property
    def q_array(self):
        return np.array(self.q, dtype=float)

    @property
    def centroid(self):
        return self.q_array.mean(axis=0)

    def validate(self):
        q = self.q_array
        if q.shape != (3, 3) or not np.all(np.isfinite(q)):
            raise ValidationError("q", "need three finite 3-vectors")
        rel = q - self.centroid
        rot = rotation_z(2 * math.pi / 3)
        scale = np.max(np.linalg.norm(rel, axis=1))
        for n in range(3):
            if np.linalg.norm(rot @ rel[n] - rel[(n + 1) % 3]) > 1e-9 * scale:
                raise ValidationError("q", "lower mirrors are not related by 120 deg rotations")
        lengths = (self.radius_of_curvature_bottom - self.radius_of_curvature_top
                   + np.linalg.norm(q, axis=1))
        if np.any(lengths < 0.17 - 1e-12) or np.any(lengths > 0.20 + 1e-12):
            raise ValidationError("nominal_length", "cavity lengths must lie in [0.17, 0.20] m")


@dataclass(frozen=True)
class MirrorPose:
    r: tuple = (0.0, 0.0, 0.0)
    euler: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.euler[1] != 0.0:
            raise ValidationError("euler", "beta must be 0 in the reduced model")

    @property
    def r_array(self):
        return np.asarray(self.r, dtype=float)


@dataclass(frozen=True)
class BeamDrive:
    """Per-cavity drive of the trapping and cooling beams.

    ``detuning_trap`` is a laser frequency offset (rad/s, positive = blue)
    applied to each trapping beam; the detuning realized at a trap site is set
    by the mirror position. ``detuning_cool`` is the cooling-beam detuning
    relative to the cavity resonance at the operating point.
    """

    input_power_trap: tuple = (1.0, 1.0, 1.0)
    detuning_trap: tuple = (0.0, 0.0, 0.0)
    input_power_cool: tuple = (0.0, 0.0, 0.0)
    detuning_cool: tuple = (0.0, 0.0, 0.0)
    wavelength: float = 1064e-9
    finesse: float = 1000.0

    @classmethod
    def symmetric(cls, total_trap_power, finesse=1000.0, wavelength=1064e-9,
                  total_cool_power=0.0, detuning_cool=0.0, detuning_trap=0.0):
        return cls((total_trap_power / 3,) * 3, (detuning_trap,) * 3,
                   (total_cool_power / 3,) * 3, (detuning_cool,) * 3, wavelength, finesse)

    @property
    def k(self):
        return 2 * math.pi / self.wavelength

    @property
    def omega_c(self):
        return CONST.c * self.k

    @property
    def total_trap_power(self):
        return float(sum(self.input_power_trap))

    def scaled(self, factor):
        return replace(self, input_power_trap=tuple(factor * p for p in self.input_power_trap))

    def validate(self):
        for name in ("input_power_trap", "detuning_trap", "input_power_cool", "detuning_cool"):
            if len(getattr(self, name)) != 3:
                raise ValidationError(name, "needs one value per cavity")
        if min(self.input_power_trap) < 0:
            raise ValidationError("input_power_trap", "must be >= 0")
        if min(self.input_power_cool) < 0:
            raise ValidationError("input_power_cool", "must be >= 0")
        if not self.finesse > 1:
            raise ValidationError("finesse", "must be > 1")
        if not self.wavelength > 0:
            raise ValidationError("wavelength", "must be > 0")


@dataclass(frozen=True)
class Environment:
    """Residual gas and laser intensity noise.

    The intensity noise is a flat one-sided spectrum of the fractional
    fluctuation carrying ``noise_rms`` over ``noise_bandwidth`` (Hz).
    """

    pressure: float = 1.0e-3
    temperature: float = 300.0
    gas_molecule_mass: float = 4.65e-26
    noise_rms: float = 7.0e-4
    noise_bandwidth: float = 3.0e5

    @property
    def gas_density(self):
        return self.pressure * self.gas_molecule_mass / (CONST.kB * self.temperature)

    @property
    def mean_speed_1d(self):
        return math.sqrt(2 * CONST.kB * self.temperature / self.gas_molecule_mass)

    def intensity_noise_psd(self, omega):
        """One-sided S_eps (1/Hz) at angular frequency ``omega``."""
        f = np.abs(np.asarray(omega, dtype=float)) / (2 * math.pi)
        level = self.noise_rms ** 2 / self.noise_bandwidth
        out = np.where(f <= self.noise_bandwidth, level, 0.0)
        return float(out) if out.ndim == 0 else out

    def validate(self):
        if self.pressure < 0:
            raise ValidationError("pressure", "must be >= 0")
        if not self.temperature > 0:
            raise ValidationError("temperature", "must be > 0")
        if not self.gas_molecule_mass > 0:
            raise ValidationError("gas_molecule_mass", "must be > 0")
        if self.noise_rms < 0:
            raise ValidationError("noise_rms", "must be >= 0")
        if not self.noise_bandwidth > 0:
            raise ValidationError("noise_bandwidth", "must be > 0")


@dataclass(frozen=True)
class SimulationConfig:
    mirror: MirrorSpec = field(default_factory=MirrorSpec)
    geometry: TripodGeometry = field(default_factory=TripodGeometry.from_tilt)
    drive: BeamDrive = field(default_factory=BeamDrive)
    environment: Environment = field(default_factory=Environment)

    def validate(self):
        self.mirror.validate()
        self.geometry.validate()
        self.drive.validate()
        self.environment.validate()
        if abs(self.geometry.radius_of_curvature_top - self.mirror.radius_of_curvature_top) > 0:
            raise ValidationError("radius_of_curvature_top", "geometry and mirror disagree")
        return self


def rotation_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def default_config():
    """Nominal parameter set: 0.3 mg mirror, finesse 1000, 3 W total trapping power."""
    return SimulationConfig().validate()


# ---------------------------------------------------------------------------
# Config file format
# ---------------------------------------------------------------------------

_UNITS = {
    # mass
    "kg": 1.0, "g": 1e-3, "mg": 1e-6, "ug": 1e-9,
    # length
    "m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6, "nm": 1e-9,
    # pressure
    "pa": 1.0, "bar": 1e5, "mbar": 1e2, "torr": 101325.0 / 760.0,
    # power
    "w": 1.0, "mw": 1e-3, "kw": 1e3,
    # angle
    "rad": 1.0, "deg": math.pi / 180.0,
    # temperature
    "k": 1.0,
    # frequency
    "hz": 1.0, "khz": 1e3, "mhz": 1e6, "rad/s": 1.0,
}

# section -> key -> (attribute, per-cavity?)
_SCHEMA = {
    "mirror": {
        "mass": "mass",
        "radius_of_curvature_top": "radius_of_curvature_top",
        "diameter": "diameter",
        "emissivity": "emissivity",
        "absorption_coefficient": "absorption_coefficient",
        "coating_absorption_fraction": "coating_absorption_fraction",
    },
    "geometry": {
        "radius_of_curvature_bottom": "radius_of_curvature_bottom",
        "nominal_length": "nominal_length",
        "tilt_angle": "tilt_angle",
    },
    "beams": {
        "finesse": "finesse",
        "wavelength": "wavelength",
        "input_power_trap": "input_power_trap",
        "detuning_trap": "detuning_trap",
        "input_power_cool": "input_power_cool",
        "detuning_cool": "detuning_cool",
    },
    "environment": {
        "pressure": "pressure",
        "temperature": "temperature",
        "gas_molecule_mass": "gas_molecule_mass",
        "noise_rms": "noise_rms",
        "noise_bandwidth": "noise_bandwidth",
    },
}
_PER_CAVITY = {"input_power_trap", "detuning_trap", "input_power_cool", "detuning_cool"}


def parse_quantity(text):
    """Parse ``'0.3 mg'`` or ``'1e-3'`` into an SI float."""
    parts = text.strip().split()
    if len(parts) == 1:
        return float(parts[0])
    if len(parts) == 2:
        unit = parts[1].lower()
        if unit not in _UNITS:
            raise ValueError(f"unknown unit {parts[1]!r}")
        return float(parts[0]) * _UNITS[unit]
    raise ValueError(f"cannot parse quantity {text!r}")


def _parse_value(text, per_cavity):
    items = [t for t in text.split(",") if t.strip()]
    values = [parse_quantity(t) for t in items]
    if per_cavity:
        if len(values) == 1:
            return (values[0],) * 3
        if len(values) != 3:
            raise ValueError("expected one value or three comma-separated values")
        return tuple(values)
    if len(values) != 1:
        raise ValueError("expected a single value")
    return values[0]


def _line_of(text, section, key):
    current = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
        elif current == section and line.split("=")[0].split(":")[0].strip().lower() == key:
            return i
    return None


def loads_config(text):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", line) from exc
    except configparser.Error as exc:
        raise ConfigError(str(exc), getattr(exc, "lineno", None)) from exc

    values = {name: {} for name in _SCHEMA}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]", _line_of(text, section, ""))
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", _line_of(text, section, key))
            try:
                values[section][_SCHEMA[section][key]] = _parse_value(raw, key in _PER_CAVITY)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}", _line_of(text, section, key)) from exc

    mirror = MirrorSpec(**values["mirror"])
    geo_kw = dict(values["geometry"])
    geo_kw.setdefault("tilt_angle", math.radians(2.0))
    geometry = TripodGeometry.from_tilt(radius_of_curvature_top=mirror.radius_of_curvature_top, **geo_kw)
    config = SimulationConfig(mirror, geometry, BeamDrive(**values["beams"]),
                              Environment(**values["environment"]))
    return config.validate()


def load_config(path):
    path = Path(path)
    return loads_config(path.read_text())


def dumps_config(config):
    """Serialize with 17 significant digits so that reparsing is exact."""
    g = config.geometry
    sections = {
        "mirror": {f.name: getattr(config.mirror, f.name) for f in fields(MirrorSpec)},
        "geometry": {
            "radius_of_curvature_bottom": g.radius_of_curvature_bottom,
            "nominal_length": g.nominal_length,
            "tilt_angle": g.tilt_angle,
        },
        "beams": {f.name: getattr(config.drive, f.name) for f in fields(BeamDrive)},
        "environment": {f.name: getattr(config.environment, f.name) for f in fields(Environment)},
    }
    parser = configparser.ConfigParser(interpolation=None)
    for name, items in sections.items():
        parser[name] = {
            key: ", ".join(format(v, ".17g") for v in val) if isinstance(val, tuple) else format(val, ".17g")
            for key, val in items.items()
        }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()

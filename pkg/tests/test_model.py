import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tripodlev.model import (CONST, BeamDrive, ConfigError, MirrorPose, ValidationError,
                             default_config, dumps_config, load_config, loads_config,
                             parse_quantity)
from tripodlev.optics import cavity_lengths, nominal_lengths


def test_constants_positive():
    assert all(v > 0 for v in (CONST.c, CONST.hbar, CONST.kB, CONST.g0))


def test_file_echoes_mass_and_finesse(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[mirror]\nmass = 3.0e-7 kg\n[beams]\nfinesse = 1000\n")
    cfg = load_config(p)
    assert cfg.mirror.mass == 3.0e-7
    assert cfg.drive.finesse == 1000


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.ini"
    p.write_text("")
    cfg = load_config(p)
    assert cfg == default_config()
    lengths = cavity_lengths(np.zeros(3), cfg.geometry)
    assert np.all((lengths >= 0.17) & (lengths <= 0.20))
    assert cfg.drive.wavelength == 1064e-9
    assert cfg.geometry.tilt_angle == pytest.approx(math.radians(2))
    assert cfg.environment.gas_molecule_mass == 4.65e-26
    assert cfg.environment.temperature == 300


def test_low_finesse_rejected():
    with pytest.raises(ValidationError) as err:
        loads_config("[beams]\nfinesse = 0.5\n")
    assert err.value.field == "finesse"


def test_parse_error_has_line():
    with pytest.raises(ConfigError) as err:
        loads_config("[mirror]\nmass = 1 kg\n[beams]\nfinesse = lots\n")
    assert err.value.line == 4


def test_unknown_key_has_line():
    with pytest.raises(ConfigError) as err:
        loads_config("\n[mirror]\nmas = 1 kg\n")
    assert err.value.line == 3


def test_unknown_unit():
    with pytest.raises(ConfigError):
        loads_config("[mirror]\nmass = 1 stone\n")


def test_published_defaults(cfg):
    assert cfg.geometry.radius_of_curvature_bottom == 0.20
    assert cfg.environment.pressure == 1e-3
    assert cfg.mirror.mass == 3e-7
    assert cfg.mirror.radius_of_curvature_top == 0.03
    assert cfg.mirror.diameter == 2e-3
    assert cfg.drive.finesse == 1000
    assert cfg.drive.total_trap_power == pytest.approx(3.0)
    assert len(set(cfg.drive.input_power_trap)) == 1
    assert cfg.geometry.nominal_length == 0.18
    assert np.allclose(nominal_lengths(cfg.geometry), 0.18, rtol=0, atol=1e-15)


def test_default_round_trip(cfg):
    assert loads_config(dumps_config(cfg)) == cfg


def test_unit_audit():
    assert parse_quantity("0.3 mg") == pytest.approx(3e-7, rel=1e-15)
    assert parse_quantity("1e-8 bar") == pytest.approx(1e-3, rel=1e-15)
    assert parse_quantity("20 cm") == pytest.approx(0.20, rel=1e-15)


def test_cross_section():
    cfg = default_config()
    assert cfg.mirror.cross_section == pytest.approx(math.pi * 1e-6, rel=1e-12)


def test_beta_must_vanish():
    with pytest.raises(ValidationError):
        MirrorPose((0, 0, 0), (0.1, 0.2, 0.3))
    MirrorPose((0, 0, 0), (0.1, 0.0, 0.3))


def test_length_window_enforced():
    with pytest.raises(ValidationError):
        loads_config("[geometry]\nnominal_length = 25 cm\n")


def test_negative_power_rejected():
    with pytest.raises(ValidationError):
        BeamDrive(input_power_trap=(1.0, -1.0, 1.0)).validate()


finite = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(mass=st.floats(1e-9, 1e-3), finesse=st.floats(2, 1e5), p=st.tuples(finite, finite, finite),
       pressure=st.floats(0, 1e3), tilt=st.floats(0.5, 5))
def test_round_trip_property(mass, finesse, p, pressure, tilt):
    text = (f"[mirror]\nmass = {mass!r}\n[beams]\nfinesse = {finesse!r}\n"
            f"input_power_trap = {p[0]!r}, {p[1]!r}, {p[2]!r}\n"
            f"[environment]\npressure = {pressure!r}\n[geometry]\ntilt_angle = {tilt!r} deg\n")
    cfg = loads_config(text)
    assert loads_config(dumps_config(cfg)) == cfg
    assert cfg.drive.input_power_trap == p

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from marskit.errors import ParseError, ValidationError
from marskit.geometry import (
    MarsConfig,
    PayloadSpec,
    RotorSpec,
    UnitSpec,
    assembly_from_positions,
    build_grid_config,
    centroid,
    composite_inertia,
    config_to_dict,
    default_unit,
    load_config,
    mars_effectiveness,
    rotor_arrays,
    total_mass,
)


def test_default_unit_geometry():
    u = default_unit(side=0.65)
    assert len(u.rotors) == 4
    arm = 0.65 / 4.0
    offsets = np.array([r.offset for r in u.rotors])
    assert_allclose(offsets[:, :2], arm * np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]]))
    assert_allclose(offsets[:, 2], 0.0)
    assert tuple(r.spin_sign for r in u.rotors) == (-1, -1, 1, 1)


def test_grid_layout_cols_along_x_rows_along_y():
    config = build_grid_config(2, 3, spacing=0.65)
    assert config.n_units == 6
    assert config.n_rotors == 24
    xs = sorted({u.position[0] for u in config.units})
    ys = sorted({u.position[1] for u in config.units})
    assert_allclose(xs, [-0.65, 0.0, 0.65])
    assert_allclose(ys, [-0.325, 0.325])
    assert_allclose(centroid(config), 0.0, atol=1e-15)


def test_mass_and_centroid_with_payload():
    config = build_grid_config(1, 2, payload=PayloadSpec(mass=0.6, position=(0.0, 0.0, -0.2)))
    assert_allclose(total_mass(config), 3.6)
    # equal units at x = +-0.325 cancel; only the payload moves the centroid
    assert_allclose(centroid(config), [0.0, 0.0, 0.6 * -0.2 / 3.6])


def test_composite_inertia_two_unit_row():
    # hand value: 2 template units at x = +-0.325, parallel-axis about origin:
    # Ixx = 2*0.0347, Iyy = 2*(0.0459 + 1.5*0.325^2), Izz = 2*(0.0977 + 1.5*0.325^2)
    config = build_grid_config(1, 2)
    inertia = composite_inertia(config)
    assert_allclose(np.diag(inertia), [0.0694, 0.408675, 0.512275], rtol=1e-12)
    assert_allclose(inertia, np.diag(np.diag(inertia)), atol=1e-15)


def test_composite_inertia_minimal_about_centroid():
    rng = np.random.default_rng(7)
    for _ in range(20):
        pts = rng.uniform(-1.0, 1.0, size=(3, 2))
        config = assembly_from_positions(pts)
        about_c = composite_inertia(config)
        shifted = composite_inertia(config, about=centroid(config) + rng.normal(size=3) * 0.3)
        assert np.trace(shifted) >= np.trace(about_c) - 1e-12


def test_effectiveness_rows():
    config = build_grid_config(2, 2)
    g = mars_effectiveness(config)
    rot = rotor_arrays(config)
    c = centroid(config)
    assert g.shape == (4, 16)
    assert_allclose(g[0], 1.0)
    assert_allclose(g[1], -(rot.position[:, 1] - c[1]))
    assert_allclose(g[2], rot.position[:, 0] - c[0])
    assert_allclose(g[3], rot.spin * rot.c_z)
    # opposite spin pairs cancel yaw when forces are equal
    assert_allclose(g[3] @ np.ones(16), 0.0, atol=1e-15)


def test_rotor_arrays_order_and_owner():
    config = build_grid_config(1, 2)
    rot = rotor_arrays(config)
    assert rot.position.shape == (8, 3)
    assert list(rot.unit_index) == [0, 0, 0, 0, 1, 1, 1, 1]
    assert_allclose(rot.f_max, 7.0)
    assert_allclose(rot.f_min, 0.0)
    assert_allclose(rot.c_z, 0.06)


def validate_roundtrip(unit):
    return load_config(config_to_dict(MarsConfig(units=(unit,))))


def test_validate_rejects_bad_spin_pattern():
    u = default_unit()
    bad = UnitSpec(
        mass=u.mass,
        position=u.position,
        rotors=tuple(
            RotorSpec(r.offset, -r.spin_sign, r.f_min, r.f_max, r.c_z) for r in u.rotors
        ),
    )
    with pytest.raises(ValidationError, match="spin_sign"):
        validate_roundtrip(bad)


def test_validate_rejects_bad_force_bounds():
    with pytest.raises(ValidationError, match="f_min < f_max"):
        validate_roundtrip(default_unit(f_min=3.0, f_max=2.0))


def test_validate_rejects_non_coplanar_rotors():
    u = default_unit()
    rotors = list(u.rotors)
    r0 = rotors[0]
    rotors[0] = RotorSpec((r0.offset[0], r0.offset[1], 0.01), r0.spin_sign, r0.f_min, r0.f_max, r0.c_z)
    bad = UnitSpec(mass=u.mass, position=u.position, rotors=tuple(rotors))
    with pytest.raises(ValidationError, match="coplanar"):
        validate_roundtrip(bad)


def test_validate_rejects_wrong_rotor_count():
    u = default_unit()
    bad = UnitSpec(mass=u.mass, position=u.position, rotors=u.rotors[:3])
    with pytest.raises(ValidationError, match="4 rotors"):
        validate_roundtrip(bad)


def test_validate_rejects_nonpositive_masses():
    with pytest.raises(ValidationError, match="mass"):
        validate_roundtrip(default_unit(mass=0.0))
    with pytest.raises(ValidationError, match="payload"):
        load_config(
            config_to_dict(
                MarsConfig(units=(default_unit(),), payload=PayloadSpec(mass=-1.0, position=(0, 0, 0)))
            )
        )


def test_validate_rejects_indefinite_inertia():
    u = default_unit()
    bad = UnitSpec(mass=u.mass, position=u.position, rotors=u.rotors,
                   inertia=((1.0, 0, 0), (0, -2.0, 0), (0, 0, 3.0)))
    with pytest.raises(ValidationError, match="positive definite"):
        validate_roundtrip(bad)


def test_config_roundtrip_through_json():
    config = build_grid_config(
        2, 2, payload=PayloadSpec(mass=0.6, position=(0.1, -0.2, -0.3)), gravity=9.8
    )
    doc = json.dumps(config_to_dict(config))
    back = load_config(doc)
    assert back.gravity == 9.8
    assert back.payload == config.payload
    assert_allclose(
        rotor_arrays(back).position, rotor_arrays(config).position, rtol=0, atol=0
    )


def test_load_config_parse_errors():
    with pytest.raises(ParseError):
        load_config("{not json")
    with pytest.raises(ParseError):
        load_config({"units": []})
    with pytest.raises(ParseError):
        load_config({"units": [{"mass": 1.0}]})
    with pytest.raises(ParseError):
        load_config("/nonexistent/path.json")

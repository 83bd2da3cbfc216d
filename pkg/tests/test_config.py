import math

import numpy as np
import pytest

from hrsowc.config import ConfigError, ExperimentConfig, load_config


def test_defaults():
    c = load_config(None)
    assert c.num_users == 6 and c.num_groups == 2 and c.p_total == 1.0
    assert c.ap_positions.shape == (4, 3)
    assert c.utility == "sum"


def test_yaml_keys(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("""
room: {length: 6, width: 4, height: 3}
aps: [[1.5, 1, 3], [4.5, 3, 3]]
users: {count: 4, seed: 9, height: 0.8}
demands: {min: 1, max: 1.5}
constants: {beam_waist: 15e-6, wavelength: 850e-9, fov_deg: 60, beam_pointing: down}
grouping: {groups: 1}
power: {p_total: 2.0}
solver: {utility: log-message, restarts: 4}
""")
    c = load_config(path)
    assert c.room == (6.0, 4.0, 3.0) and c.ap_positions.shape == (2, 3)
    assert c.constants.beam_waist == 15e-6          # YAML reads "15e-6" as a string
    assert c.constants.fov_half_angle == pytest.approx(math.radians(60))
    assert c.constants.beam_pointing == "down"
    scen = c.scenario()
    assert scen.num_users == 4 and np.all(scen.user_positions[:, 2] == 0.8)
    assert np.all((scen.demands >= 1) & (scen.demands <= 1.5))
    assert c.constraints(scen).p_total_cap == 2.0
    assert ExperimentConfig.from_dict(c.to_dict()) == c


@pytest.mark.parametrize("text", ["colour: red", "constants: {beam: 1}", "users: {count: 0}",
                                  "power: {p_total: abc}", "- 1\n- 2", "room: {length: [1"])
def test_bad_configs(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.yaml")


def test_digest_changes_with_content():
    a = ExperimentConfig()
    assert a.digest() == ExperimentConfig().digest()
    assert a.digest() != a.with_constants(beam_waist=5e-6).digest()

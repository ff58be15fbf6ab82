import json

import pytest

from wzwlab import config


def test_defaults_roundtrip(tmp_path):
    cfg = config.ExperimentConfig()
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert config.ExperimentConfig.from_json(p) == cfg


def test_grid_spec_from_dict():
    cfg = config.ExperimentConfig.from_dict({"grid_spec": {"base_nodes": 10, "fiber_nodes": 9}})
    assert cfg.grid_spec == config.GridSpec(10, 9)


@pytest.mark.parametrize("bad", [{"t_grid": []}, {"l_ladder": [0]}, {"seed": 2**64},
                                 {"s_ladder": [2.0, 1.0]}, {"colour": "red"}])
def test_rejects(bad):
    with pytest.raises(ValueError):
        config.ExperimentConfig.from_dict(bad)


def test_tolerances_are_constants():
    tol = config.tolerances()
    assert tol["FD_REL_TOL"] == 1e-6 and "GridSpec" not in tol
    assert all(k.isupper() for k in tol)

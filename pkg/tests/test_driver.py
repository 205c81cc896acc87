import math

import numpy as np
import pytest
import yaml

from compatswe.driver import cli
from compatswe.driver.analysis import (angular_speed, convergence_study, crest_angle, format_table,
                                       steady_errors)
from compatswe.driver.config import ConfigError, config_from_dict, load_config, save_config
from compatswe.driver.output import CSV_COLUMNS, read_csv, read_vtk, write_csv, write_vtk
from compatswe.driver.scenarios import ScenarioError, setup
from compatswe.fem import l2_error
from compatswe.timestepping import run


def cfg(**kw):
    base = dict(scenario="kelvin_disk", refinement=1, dt=0.02, t_end=0.06)
    base.update(kw)
    return config_from_dict(base)


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


# -- config ---------------------------------------------------------------------------
def test_minimal_config_defaults():
    c = cfg()
    assert (c.degree, c.scheme, c.integrator, c.picard_iters) == (2, "prognostic_Z", "poisson", 4)
    assert c.n_steps == 3
    assert c.newton.abs_tol == 1e-13 and not c.supg.enabled
    sc = c.step_config()
    assert sc.dt == 0.02 and sc.tau == 0.0


@pytest.mark.parametrize("data, match", [
    (dict(scenario="kelvin_disk", refinement=1, dt=0.1, t_end=1, colour="red"), "unknown key"),
    (dict(scenario="kelvin_disk", refinement=1, dt=0.1, t_end=1, newton=dict(tol=1)), "unknown key"),
    (dict(scenario="kelvin_disk", refinement=1, dt=0.1), "missing"),
    (dict(scenario="tsunami", refinement=1, dt=0.1, t_end=1), "scenario"),
    (dict(scenario="kelvin_disk", refinement=1, dt=-0.1, t_end=1), "dt"),
    (dict(scenario="kelvin_disk", refinement=1.5, dt=0.1, t_end=1), "refinement"),
    (dict(scenario="kelvin_disk", refinement=1, dt=0.1, t_end=1, scheme="upwind"), "scheme"),
    (dict(scenario="kelvin_disk", refinement=1, dt=0.1, t_end=1, supg=dict(enabled="yes")), "enabled"),
])
def test_config_rejects(data, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(data)


def test_config_round_trip(tmp_path):
    c = cfg(integrator="picard", supg=dict(enabled=True, tau=0.01), physics=dict(f0=5.0),
            output=dict(csv_path="x.csv"), scenario_params=dict(a0=0.05))
    save_config(c, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == c


def test_config_yaml_error_has_location(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("scenario: kelvin_disk\nrefinement: [1\n")
    with pytest.raises(ConfigError, match="line"):
        load_config(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")


def test_n_steps_rounds_up_partial_steps():
    assert cfg(dt=0.1, t_end=1.0).n_steps == 10
    assert cfg(dt=0.3, t_end=1.0).n_steps == 4
    assert cfg(t_end=0.0).n_steps == 0


# -- scenarios -------------------------------------------------------------------------
def test_kelvin_initial_state():
    s = setup(cfg(refinement=2))
    assert s.model.physics.f0 == 10.0
    D = s.state.D.values()
    assert D.min() >= 0.99 and D.max() <= 1.01
    assert np.max(np.abs(s.model.consistency_residual(s.state.u, s.state.Z))) < 1e-11


def test_solid_rotation_at_rest_is_rest_state():
    s = setup(cfg(scenario="disk_solid_rotation", refinement=1))
    assert np.max(np.abs(s.state.u.coefficients)) == 0.0
    assert np.allclose(s.state.D.values(), 1.0)


def test_channel_jet_fields():
    s = setup(cfg(scenario="channel_jet", refinement=4, scenario_params=dict(D0=3.0, U0=0.5),
                  physics=dict(g=2.0, f0=4.0)))
    u_ex, D_ex = s.scenario.reference()
    x = np.array([0.3, 0.1]), np.array([0.0, 0.5])
    assert np.allclose(D_ex(*x), 3.0 + (4.0 * 0.5 / 2.0) * (np.cos(np.pi * x[1]) - 1) / np.pi)
    assert np.allclose(u_ex(*x)[:, 0], 0.5 * np.sin(np.pi * x[1]))
    assert l2_error(s.state.D, D_ex) < 0.05  # DG0 on 4x4 cells


def test_scenario_mesh_mismatch():
    with pytest.raises(ScenarioError, match="disk mesh"):
        setup(cfg(mesh=dict(kind="torus")))
    with pytest.raises(ScenarioError, match="no_boundary"):
        setup(cfg(scheme="no_boundary"))
    with pytest.raises(ScenarioError, match="unknown parameter"):
        setup(cfg(scenario_params=dict(amplitude=1)))


def test_custom_expression():
    c = cfg(scenario="custom_expression", refinement=4,
            scenario_params=dict(u="0.1*sin(2*pi*y)", v="0*x", D="1 + 0.1*cos(2*pi*x)"))
    s = setup(c)
    assert not s.mesh.has_boundary
    assert l2_error(s.state.D, lambda x, y: 1 + 0.1 * np.cos(2 * np.pi * x)) < 0.05
    bad = cfg(scenario="custom_expression", scenario_params=dict(D="__import__('os')"))
    with pytest.raises(ScenarioError, match="not allowed"):
        setup(bad)


def test_negative_depth_rejected():
    from compatswe.swe import PositivityError
    c = cfg(scenario="custom_expression", refinement=2, scenario_params=dict(D="x - 0.5"))
    with pytest.raises(PositivityError):
        setup(c)


def test_torus_vortex_pair_is_balanced_velocity():
    s = setup(cfg(scenario="torus_vortex_pair", refinement=8, dt=0.01))
    m = s.model
    # u is a perp-gradient, so it is divergence free and the depth tendency vanishes
    assert np.max(np.abs(m.B @ s.state.u.coefficients)) < 1e-12
    assert m.conserved(s.state).Zens > 0


# -- output ---------------------------------------------------------------------------
def test_csv_rows(tmp_path):
    s = setup(cfg())
    res = run(s.model, s.state, s.config.step_config(), 3)
    write_csv(res, tmp_path / "out.csv")
    rows = read_csv(tmp_path / "out.csv")
    assert (tmp_path / "out.csv").read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    assert [r["step"] for r in rows] == [0, 1, 2, 3]
    assert rows[0]["rel_energy_err"] == 0.0 and rows[0]["newton_iters"] == 0
    assert rows[1]["newton_iters"] >= 1
    assert rows[3]["time"] == pytest.approx(0.06)
    assert rows[0]["energy"] == res.conserved[0].H
    assert all(abs(r["rel_energy_err"]) < 1e-11 for r in rows)


def test_csv_rest_state_and_determinism(tmp_path):
    c = cfg(scenario="disk_solid_rotation", refinement=1)
    for name in ("a.csv", "b.csv"):
        s = setup(c)
        write_csv(run(s.model, s.state, c.step_config(), 3), tmp_path / name)
    rows = read_csv(tmp_path / "a.csv")
    assert all(r["rel_energy_err"] == 0.0 and r["rel_enstrophy_err"] == 0.0 for r in rows)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_read_csv_rejects_other_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        read_csv(p)


def test_vtk_rest_state(tmp_path):
    s = setup(cfg(scenario="disk_solid_rotation", refinement=1))
    write_vtk(s.model, s.state, tmp_path / "a.vtk")
    out = read_vtk(tmp_path / "a.vtk")
    assert set(out["point_data"]) == {"q", "u"} and set(out["cell_data"]) == {"D"}
    assert len(out["points"]) == s.mesh.n_vertices
    assert len(out["cells"]) == s.mesh.n_cells and np.all(out["cell_types"] == 5)
    assert np.allclose(out["point_data"]["q"], 1.0)  # f0 / D
    assert np.allclose(out["point_data"]["u"], 0.0)
    assert np.allclose(out["cell_data"]["D"], 1.0)
    write_vtk(s.model, s.state, tmp_path / "b.vtk")
    assert (tmp_path / "a.vtk").read_bytes() == (tmp_path / "b.vtk").read_bytes()


def test_vtk_periodic_points_are_unwrapped(tmp_path):
    s = setup(cfg(scenario="torus_vortex_pair", refinement=4, dt=0.01))
    write_vtk(s.model, s.state, tmp_path / "t.vtk")
    pts = read_vtk(tmp_path / "t.vtk")["points"]
    assert len(pts) == 25 and pts[:, 0].max() == pytest.approx(1.0)


# -- analysis ---------------------------------------------------------------------------
def test_crest_angle_of_kelvin_initial_state():
    s = setup(cfg(refinement=3))
    # depth anomaly ~ y at the wall: crest at +pi/2
    assert crest_angle(s.model, s.state, "harmonic") == pytest.approx(math.pi / 2, abs=1e-2)
    assert crest_angle(s.model, s.state, "argmax") == pytest.approx(math.pi / 2, abs=1e-12)
    with pytest.raises(ValueError):
        crest_angle(s.model, s.state, "median")


def test_angular_speed_unwraps():
    t = np.linspace(0, 10, 50)
    a = np.angle(np.exp(1j * 1.3 * t))
    assert angular_speed(t, a) == pytest.approx(1.3)


def test_convergence_zero_steps_gives_projection_errors():
    c = cfg(scenario="channel_jet", dt=0.05, t_end=0.0)
    rows = convergence_study(c, [4, 8])
    assert rows[1].err_u < rows[0].err_u and rows[1].err_D < rows[0].err_D
    assert rows[1].rate_u > 1.5 and math.isnan(rows[0].rate_u)
    assert "rate_u" in format_table(rows)
    with pytest.raises(ScenarioError, match="steady"):
        steady_errors(cfg(t_end=0.0), 1)


# -- CLI -------------------------------------------------------------------------------
def test_cli_run(tmp_path, capsys):
    p = write_yaml(tmp_path / "c.yaml", dict(scenario="kelvin_disk", refinement=1, dt=0.02, t_end=0.04,
                                             output=dict(csv_path=str(tmp_path / "o.csv"), vtk_every=1,
                                                         vtk_dir=str(tmp_path / "vtk"))))
    assert cli.main(["run", str(p)]) == 0
    assert "max_rel_energy_err" in capsys.readouterr().out
    assert len(read_csv(tmp_path / "o.csv")) == 3
    assert sorted(f.name for f in (tmp_path / "vtk").iterdir()) == [
        "state_000000.vtk", "state_000001.vtk", "state_000002.vtk"]


def test_cli_validate_and_mesh_info(tmp_path, capsys):
    p = write_yaml(tmp_path / "c.yaml", dict(scenario="kelvin_disk", refinement=1, dt=0.02, t_end=1))
    assert cli.main(["validate", str(p)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 5
    assert cli.main(["mesh-info", str(p)]) == 0


def test_cli_converge(tmp_path, capsys):
    p = write_yaml(tmp_path / "c.yaml", dict(scenario="channel_jet", refinement=4, dt=0.05, t_end=0.1))
    assert cli.main(["converge", str(p), "--levels", "4,8"]) == 0
    assert "err_u" in capsys.readouterr().out


def test_cli_errors(tmp_path, capsys):
    p = write_yaml(tmp_path / "c.yaml", dict(scenario="kelvin_disk", refinement=1, dt=0.02))
    assert cli.main(["run", str(p)]) == 2
    assert "missing" in capsys.readouterr().err
    p = write_yaml(tmp_path / "d.yaml", dict(scenario="custom_expression", refinement=2, dt=0.02, t_end=1,
                                             scenario_params=dict(D="x - 0.5")))
    assert cli.main(["validate", str(p)]) == 3
    with pytest.raises(SystemExit):
        cli.main(["converge", str(p), "--levels", "a,b"])

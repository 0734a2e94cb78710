import json

import numpy as np
import pytest

from thinlayer.cli import main


def _write(path, obj):
    path.write_text(json.dumps(obj, indent=1))
    return str(path)


def _config(geometry, field=None, **extra):
    cfg = {"schema": 1, "geometry": geometry}
    if field is not None:
        cfg["field"] = field
    cfg.update(extra)
    return cfg


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = _config({"family": "circle", "params": {"radius": 1.0}, "grid": [64]})
    cfg["mystery"] = 1
    rc = main(["geometry", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 2
    assert "mystery" in capsys.readouterr().err


def test_invalid_json_reports_line(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text('{"schema": 1,\n  "geometry": }')
    rc = main(["geometry", "--config", str(p), "--out", str(tmp_path)])
    assert rc == 2
    assert "line 2" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    rc = main(["geometry", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
    assert rc == 2


def test_bad_family_value_rejected(tmp_path):
    cfg = _config({"family": "moebius", "grid": [64]})
    rc = main(["geometry", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 2


# ---------------------------------------------------------------------------
# geometry command
# ---------------------------------------------------------------------------


def _read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, data


def test_geometry_circle_veff_column(tmp_path):
    cfg = _config({"family": "circle", "params": {"radius": 1.0}, "grid": [64]})
    rc = main(["geometry", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 0
    header, data = _read_csv(tmp_path / "geometry.csv")
    v = data[:, header.index("v_eff")]
    assert np.allclose(v, -0.25, atol=1e-14)


def test_geometry_sphere_veff_zero(tmp_path):
    cfg = _config({"family": "full-sphere", "params": {"radius": 1.0}, "grid": [16, 16]})
    rc = main(["geometry", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 0
    header, data = _read_csv(tmp_path / "geometry.csv")
    assert np.allclose(data[:, header.index("v_eff")], 0.0, atol=1e-14)
    summary = json.loads((tmp_path / "geometry_summary.json").read_text())
    assert summary["rho_m"] == pytest.approx(1.0)
    assert "curvature_regularity" in summary


def test_geometry_torus_veff_recomputed_from_columns(tmp_path):
    cfg = _config(
        {"family": "torus", "params": {"major": 2.0, "minor": 0.5}, "grid": [24, 24]},
        field={"kind": "constant", "b": [0.0, 0.0, 1.0]},
    )
    rc = main(["geometry", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 0
    header, data = _read_csv(tmp_path / "geometry.csv")
    k1 = data[:, header.index("kappa_1")]
    k2 = data[:, header.index("kappa_2")]
    v = data[:, header.index("v_eff")]
    assert np.max(np.abs(v - (-0.25 * (k1 - k2) ** 2))) < 1e-14
    assert "b_eff" in header


def test_geometry_embedding_diagnosis(tmp_path):
    cfg = _config(
        {
            "family": "circle",
            "params": {"radius": 1.0},
            "grid": [64],
            "embedding_epsilon": 0.5,
        }
    )
    rc = main(["geometry", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 0
    summary = json.loads((tmp_path / "geometry_summary.json").read_text())
    assert summary["embedding"]["passed"] is True


# ---------------------------------------------------------------------------
# spectrum command
# ---------------------------------------------------------------------------


def test_spectrum_flat_strip(tmp_path):
    cfg = _config(
        {"family": "segment", "params": {"length": 1.0}, "grid": [120]},
        field={"kind": "zero"},
        solver={"n_eigenpairs": 3, "tol": 1e-11},
        spectrum={"operator": "full-H-renormalized", "epsilon": 0.05, "m_u": 9},
    )
    rc = main(["spectrum", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 0
    header, data = _read_csv(tmp_path / "spectrum.csv")
    vals = data[:, header.index("eigenvalue")]
    want = np.array([1.0, 4.0, 9.0]) * np.pi**2
    assert np.max(np.abs(vals / want - 1.0)) < 1e-3


def test_spectrum_circle_effective(tmp_path):
    cfg = _config(
        {"family": "circle", "params": {"radius": 1.0}, "grid": [256]},
        field={"kind": "zero"},
        solver={"n_eigenpairs": 3, "tol": 1e-11},
        spectrum={"operator": "h-eff"},
    )
    rc = main(["spectrum", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 0
    _, data = _read_csv(tmp_path / "spectrum.csv")
    assert np.max(np.abs(data[:, 1] - [-0.25, 0.75, 0.75])) < 5e-4


def test_spectrum_sphere_effective(tmp_path):
    cfg = _config(
        {"family": "full-sphere", "params": {"radius": 1.0}, "grid": [200, 400]},
        field={"kind": "zero"},
        solver={"n_eigenpairs": 4, "tol": 1e-10},
        spectrum={"operator": "h-eff"},
    )
    rc = main(["spectrum", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 0
    _, data = _read_csv(tmp_path / "spectrum.csv")
    assert np.max(np.abs(data[:, 1] - [0.0, 2.0, 2.0, 2.0])) < 1e-3


def test_spectrum_dumps_operator_and_vectors(tmp_path):
    cfg = _config(
        {"family": "circle", "params": {"radius": 1.0}, "grid": [64]},
        field={"kind": "zero"},
        solver={"n_eigenpairs": 2},
        spectrum={"operator": "h-eff", "dump_operator": True, "dump_eigenvectors": True},
    )
    rc = main(["spectrum", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "operator.mtx").exists()
    sidecar = json.loads((tmp_path / "operator.json").read_text())
    assert sidecar["n_dof"] == 64
    dump = np.load(tmp_path / "eigenvectors.npz")
    assert dump["vectors"].shape == (64, 2)


def test_spectrum_solver_failure_exit_code(tmp_path):
    cfg = _config(
        {"family": "circle", "params": {"radius": 1.0}, "grid": [8]},
        field={"kind": "zero"},
        solver={"n_eigenpairs": 50},
        spectrum={"operator": "h-eff"},
    )
    rc = main(["spectrum", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 3


# ---------------------------------------------------------------------------
# converge command
# ---------------------------------------------------------------------------


def test_converge_flat_exit_zero(tmp_path):
    cfg = _config(
        {"family": "segment", "params": {"length": 1.0}, "grid": [48]},
        field={"kind": "zero"},
        solver={"n_eigenpairs": 1, "seed": 42},
        sweep={"epsilons": [0.2, 0.1, 0.05], "m_u": 9},
    )
    rc = main(["converge", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 0
    summary = json.loads((tmp_path / "converge_summary.json").read_text())
    assert summary["fits"]["cluster_gap"]["tag"] == "exact"
    assert summary["acceptance"]["passed"] is True


def test_converge_circle_exit_zero_and_reproducible(tmp_path):
    cfg = _config(
        {"family": "circle", "params": {"radius": 1.0}, "grid": [96]},
        field={"kind": "zero"},
        solver={"n_eigenpairs": 1, "seed": 42, "tol": 1e-11},
        sweep={"epsilons": [0.2, 0.1, 0.05], "m_u": 9},
    )
    path = _write(tmp_path / "c.json", cfg)
    rc = main(["converge", "--config", path, "--out", str(tmp_path / "a")])
    assert rc == 0
    rc = main(["converge", "--config", path, "--out", str(tmp_path / "b")])
    assert rc == 0
    a = (tmp_path / "a" / "converge.csv").read_bytes()
    b = (tmp_path / "b" / "converge.csv").read_bytes()
    assert a == b


def test_converge_csv_roundtrips_at_full_precision(tmp_path):
    cfg = _config(
        {"family": "circle", "params": {"radius": 1.0}, "grid": [64]},
        field={"kind": "zero"},
        solver={"n_eigenpairs": 1},
        sweep={"epsilons": [0.2, 0.1, 0.05], "m_u": 9, "grid_doubling": False},
    )
    rc = main(["converge", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 0
    import thinlayer

    report = thinlayer.run_sweep(
        thinlayer.SweepSpec(
            family=thinlayer.GeometryFamily("circle", {"radius": 1.0}),
            grid=(64,),
            field=thinlayer.zero_field(2),
            epsilons=(0.2, 0.1, 0.05),
            m_u=9,
            n_pairs=1,
            grid_doubling=False,
        )
    )
    lines = (tmp_path / "converge.csv").read_text().strip().splitlines()[1:]
    for line, row in zip(lines, report.rows):
        parts = line.split(",")
        assert float(parts[2]) == row.lam  # 17 significant digits round-trip
        assert float(parts[4]) == row.gap


def test_converge_under_resolved_grid_exits_four(tmp_path):
    # an ellipse ground state needs surface resolution; 12 nodes cannot track
    # the shrinking gaps and the discretization filter must flag the rows
    cfg = _config(
        {"family": "ellipse", "params": {"a": 1.0, "b": 0.6}, "grid": [12]},
        field={"kind": "zero"},
        solver={"n_eigenpairs": 1},
        sweep={"epsilons": [0.2, 0.1, 0.05], "m_u": 9},
    )
    rc = main(["converge", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 4
    summary = json.loads((tmp_path / "converge_summary.json").read_text())
    assert not summary["acceptance"]["passed"]


# ---------------------------------------------------------------------------
# sampled inputs through the CLI
# ---------------------------------------------------------------------------


def test_user_sampled_geometry_csv(tmp_path):
    n = 64
    t = 2 * np.pi * np.arange(n) / n
    rows = ["i,x,y"]
    for i in range(n):
        rows.append(f"{i},{float(np.cos(t[i])):.17g},{float(np.sin(t[i])):.17g}")
    (tmp_path / "curve.csv").write_text("\n".join(rows) + "\n")
    cfg = _config(
        {
            "family": "user-sampled",
            "params": {"h1": float(2 * np.pi / n)},
            "csv": "curve.csv",
            "closure": ["periodic"],
        }
    )
    rc = main(["geometry", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 0
    header, data = _read_csv(tmp_path / "geometry.csv")
    kap = data[:, header.index("kappa_1")]
    assert np.max(np.abs(kap - 1.0)) < 1e-4  # sampled unit circle


def test_sampled_field_csv_spectrum(tmp_path):
    # symmetric-gauge potential for a unit perpendicular field on a grid
    axes = np.linspace(-1.6, 1.6, 33)
    rows = []
    for y1 in axes:
        for y2 in axes:
            rows.append(",".join(format(float(v), ".17g") for v in (y1, y2, -0.5 * y2, 0.5 * y1)))
    (tmp_path / "field.csv").write_text("\n".join(rows) + "\n")
    cfg = _config(
        {"family": "circle", "params": {"radius": 1.0}, "grid": [128]},
        field={"kind": "sampled", "csv": "field.csv"},
        solver={"n_eigenpairs": 1, "tol": 1e-11},
        spectrum={"operator": "h-eff"},
    )
    rc = main(["spectrum", "--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path)])
    assert rc == 0
    _, data = _read_csv(tmp_path / "spectrum.csv")
    # flux pi through the unit circle shifts the ground state to zero
    assert abs(data[0, 1]) < 5e-3

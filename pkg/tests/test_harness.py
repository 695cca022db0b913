import json
import math
import subprocess
import sys

import numpy as np
import pytest

from nfhi import cli
from nfhi.config import load_config, parse_config_text
from nfhi.errors import InvalidArgument
from nfhi.harness import (_TrialSummary, aggregate, associate, format_csv, nmse, run_point, run_trial, sweep,
                          trial_seed)

SMALL = {"geometry.n": 32, "trials": 3, "scene.targets": [[0.3, 2.0], [-0.3, 3.0]], "scene.t0": 40,
         "sweep.snr_db": [20.0], "schemes": ["proposed", "coarse"]}


def small(**extra):
    flat = dict(SMALL)
    flat.update({k.replace("__", "."): v for k, v in extra.items()})
    return load_config(overrides=flat, env={})


def test_parse_config_text():
    text = "# comment\ngeometry.n = 64\nsweep.snr_db = [0, 10]  # trailing\nscene.model = exact\n"
    assert parse_config_text(text) == {"geometry.n": 64, "sweep.snr_db": [0, 10], "scene.model": "exact"}
    with pytest.raises(InvalidArgument):
        parse_config_text("no equals sign")


def test_load_config_precedence(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("geometry.n = 64\nseed = 5\n")
    cfg = load_config(p, {"geometry.n": 32}, env={})
    assert cfg["geometry.n"] == 32 and cfg["seed"] == 5
    assert load_config(p, env={"NFHI_SEED": "99"})["seed"] == 99
    with pytest.raises(InvalidArgument):
        load_config(None, env={"NFHI_SEED": "abc"})


def test_config_validation():
    for bad in ({"geometry.n": 33}, {"sweep.snr_db": []}, {"schemes": ["music"]}, {"nope": 1},
                {"sweep.range": [5.0]}, {"sweep.p_fault": [1.0]}, {"trials": 0}):
        with pytest.raises(InvalidArgument):
            load_config(overrides=bad, env={})


def test_sweep_points_order():
    cfg = small(sweep__snr_db=[0, 10], sweep__p_fault=[0.01, 0.02], sweep__n=[16, 32])
    pts = cfg.sweep_points()
    assert len(pts) == 8
    assert [(p["n"], p["p_fault"], p["snr_db"]) for p in pts[:3]] == [(16, 0.01, 0.0), (16, 0.01, 10.0),
                                                                       (16, 0.02, 0.0)]
    assert small(schemes=["coarse", "proposed"]).schemes == ["proposed", "coarse"]


def test_trial_seed_streams_distinct():
    a = np.random.default_rng(trial_seed(1, 0, 1)).random()
    assert a == np.random.default_rng(trial_seed(1, 0, 1)).random()
    assert a != np.random.default_rng(trial_seed(1, 1, 1)).random()
    assert a != np.random.default_rng(trial_seed(1, 0, 2)).random()


def test_associate_handles_label_swap():
    dt, dr, dx = associate([-0.3, 0.3], [3.1, 2.0], [0.3, -0.3], [2.0, 3.0])
    np.testing.assert_allclose(dt, [0, 0], atol=1e-15)
    np.testing.assert_allclose(dr, [0.0, 0.1], atol=1e-12)
    np.testing.assert_allclose(dx, [0.0, 0.1], atol=1e-12)


def test_associate_rejects_far_estimate_and_count_mismatch():
    assert associate([0.3, 0.9], [2, 3], [0.3, -0.3], [2, 3]) is None
    with pytest.raises(InvalidArgument):
        associate([0.3], [2], [0.3, -0.3], [2, 3])


def test_position_error_oracle():
    # estimate at the truth rotated by a small angle at the same range: chord length 2 r sin(d/2)
    dt, dr, dx = associate([0.31], [5.0], [0.3], [5.0])
    assert dx[0] == pytest.approx(2 * 5.0 * math.sin(0.005))


def test_nmse_examples():
    assert nmse(np.ones(4), np.ones(4)) == 0
    assert nmse([1, 1, 1, -1], np.ones(4)) == pytest.approx(1.0)


def test_aggregate_rmse_formula():
    s = [_TrialSummary({"proposed": (np.array([0.1, -0.1]), np.array([1.0, 0.0]), np.array([1.0, 0.0]), 0.5)}, None),
         _TrialSummary({"proposed": None}, None),
         _TrialSummary({"proposed": (np.array([0.0, 0.0]), np.array([0.0, 1.0]), np.array([0.0, 1.0]), 0.1)}, None)]
    row = aggregate({"snr_db": 0.0, "p_fault": 0.0, "n": 8}, s, ["proposed"])
    m = row.schemes["proposed"]
    assert m["trials"] == 2 and m["failed"] == 1
    assert m["theta_rmse"] == pytest.approx(math.sqrt(0.02 / 4))
    assert m["r_rmse"] == pytest.approx(math.sqrt(2 / 4))
    assert m["nmse"] == pytest.approx(0.3)
    assert row.bounds is None


def test_run_trial_deterministic_and_shared_draws():
    cfg = small()
    pt = cfg.sweep_points()[0]
    a = run_trial(cfg, pt, 1)
    b = run_trial(cfg, pt, 1)
    np.testing.assert_array_equal(a.outcomes["proposed"].thetas, b.outcomes["proposed"].thetas)
    # same fault pattern at another SNR (common random numbers)
    c = run_trial(cfg, dict(pt, snr_db=0.0), 1)
    np.testing.assert_array_equal(a.hi.coefficients, c.hi.coefficients)


def test_sweep_csv_rows_and_rerun_identical(tmp_path):
    cfg = small(sweep__snr_db=[10, 20])
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    rows = sweep(cfg, p1)
    sweep(cfg, p2)
    assert len(rows) == 2
    t1 = p1.read_text()
    assert t1 == p2.read_text()
    body = [l for l in t1.splitlines() if not l.startswith("#")]
    assert len(body) == 3
    assert body[0].startswith("snr_db,p_fault,n_antennas,range,proposed_trials")


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = small(trials=2)
    serial = format_csv(cfg, sweep(cfg), cfg.schemes, False)
    par = small(trials=2, workers=2)
    assert format_csv(cfg, sweep(par), cfg.schemes, False) == serial


def test_sweep_unwritable_path():
    with pytest.raises(OSError):
        sweep(small(), "/nonexistent_dir/x.csv")


def test_bounds_columns_present():
    cfg = small(trials=1)
    row = run_point(cfg, cfg.sweep_points()[0], schemes=[], with_bounds=True)
    text = format_csv(cfg, [row], [], True)
    header = [l for l in text.splitlines() if not l.startswith("#")][0].split(",")
    assert "r_lb_range" in header and "bounds_trials" in header
    assert row.bounds_trials == 1


def test_cli_simulate_and_diagnose(capsys):
    args = ["--geometry.n", "32", "--scene.targets", "[[0.3, 2.0]]", "--scene.t0", "40", "--schemes", '["coarse"]']
    assert cli.main(["simulate", *args]) == 0
    out = json.loads(capsys.readouterr().out)
    assert "coarse" in out["outcomes"] and len(out["truth"]) == 1
    assert cli.main(["diagnose", *args]) == 0
    out = json.loads(capsys.readouterr().out)
    assert "detected_faults" in out or "error" in out


def test_cli_bad_option_exits_2(capsys):
    assert cli.main(["sweep", "--no.such.key", "1"]) == 2
    assert "unknown option" in capsys.readouterr().err


def test_cli_sweep_writes_file(tmp_path, capsys):
    out = tmp_path / "s.csv"
    rc = cli.main(["sweep", "--geometry.n", "32", "--trials", "1", "--scene.targets", "[[0.3, 2.0]]",
                   "--scene.t0", "40", "--schemes", '["coarse"]', "--output", str(out)])
    assert rc == 0 and out.exists()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "nfhi", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for sub in ("simulate", "sweep", "bounds", "diagnose"):
        assert sub in r.stdout

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from lbl import cli

QUICK = "steps = 40\nt_train = 300\nt_test = 120\nctrl_episodes = 2\nctrl_length = 80\n" \
        "plan_steps = 4\nplan_samples = 16\npf_particles = 400\npf_steps = 20\n"


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "quick.cfg"
    p.write_text(QUICK)
    return p


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_sweep_is_byte_deterministic(tmp_path, cfg_file):
    for name in ("a", "b"):
        assert run("sweep", "--config", cfg_file, "--scales", "0,2", "--out", tmp_path / name, "--no-timing") == 0
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    ma, mb = (json.loads((tmp_path / n / "manifest.json").read_text()) for n in "ab")
    assert ma["config"].pop("out") != mb["config"].pop("out")
    assert ma == mb
    rows = list(csv.DictReader(a.decode().splitlines()))
    assert len(rows) == 10
    assert all(r["train_s"] == "" and r["eval_s"] == "" for r in rows)
    assert all(r["noise_r2_test"] == "" for r in rows if r["scale"] == "0.0")
    assert all(r["noise_r2_test"] != "" for r in rows if r["scale"] == "2.0")


def test_cells_do_not_depend_on_the_rest_of_the_sweep(tmp_path, cfg_file):
    run("sweep", "--config", cfg_file, "--scales", "0,2", "--out", tmp_path / "all", "--no-timing")
    run("sweep", "--config", cfg_file, "--scales", "2", "--models", "jepa", "--out", tmp_path / "one", "--no-timing")
    full = {(r["scale"], r["model"]): r for r in csv.DictReader(open(tmp_path / "all" / "results.csv"))}
    (one,) = csv.DictReader(open(tmp_path / "one" / "results.csv"))
    assert one == full[("2.0", "jepa")]


def test_parallel_json_matches_serial_csv(tmp_path, cfg_file):
    run("sweep", "--config", cfg_file, "--scales", "0,2", "--models", "ar,vjepa", "--out", tmp_path / "s", "--no-timing")
    run("sweep", "--config", cfg_file, "--scales", "0,2", "--models", "ar,vjepa", "--out", tmp_path / "p",
        "--no-timing", "--workers", "2", "--format", "json")
    serial = list(csv.DictReader(open(tmp_path / "s" / "results.csv")))
    assert json.loads((tmp_path / "p" / "results.json").read_text()) == serial


def test_timing_fields_present_by_default(tmp_path, cfg_file):
    run("sweep", "--config", cfg_file, "--scales", "1", "--models", "ar", "--out", tmp_path)
    (row,) = csv.DictReader(open(tmp_path / "results.csv"))
    assert float(row["train_s"]) > 0
    assert "wall_time_s" in json.loads((tmp_path / "manifest.json").read_text())


def test_diverged_cells_are_recorded(tmp_path, cfg_file):
    cfg_file.write_text(QUICK + "lr = 1e200\n")
    assert run("sweep", "--config", cfg_file, "--scales", "1", "--models", "ar,jepa", "--out", tmp_path,
               "--no-timing") == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert [c["status"] for c in man["cells"]] == ["diverged", "diverged"]
    assert "non-finite loss" in man["cells"][0]["error"]
    rows = list(csv.DictReader(open(tmp_path / "results.csv")))
    assert rows[0]["signal_r2_test"] == ""


def test_precedence(tmp_path, cfg_file, monkeypatch):
    parser = cli.build_parser()
    monkeypatch.delenv("LBL_SEED", raising=False)
    assert cli.resolve_config(parser.parse_args(["sweep"])).seed == 111
    monkeypatch.setenv("LBL_SEED", "7")
    assert cli.resolve_config(parser.parse_args(["sweep"])).seed == 7
    cfg_file.write_text(QUICK + "seed = 9\n")
    assert cli.resolve_config(parser.parse_args(["sweep", "--config", str(cfg_file)])).seed == 9
    args = parser.parse_args(["sweep", "--config", str(cfg_file), "--seed", "3", "--scales", "1,2"])
    cfg = cli.resolve_config(args)
    assert (cfg.seed, cfg.scales, cfg.steps) == (3, (1.0, 2.0), 40)


@pytest.mark.parametrize("text, msg", [
    ("bogus = 1\n", "unknown key 'bogus'"),
    ("steps = many\n", "bad value for steps"),
    ("just words\n", "expected 'key = value'"),
])
def test_config_file_errors(tmp_path, text, msg):
    p = tmp_path / "bad.cfg"
    p.write_text(text)
    with pytest.raises(cli.CliError, match=msg):
        cli.read_config_file(p)


@pytest.mark.parametrize("argv, msg", [
    (["sweep", "--models", "vae,gpt"], "unknown models"),
    (["sweep", "--scales", "2,1"], "strictly increasing"),
    (["sweep", "--workers", "0"], "workers"),
    (["plan"], "missing --checkpoint"),
    (["plan", "--checkpoint", "nope.npz"], "no such file"),
])
def test_errors_exit_2(argv, msg, capsys, tmp_path):
    assert run(*argv, "--out", tmp_path) == 2
    assert msg in capsys.readouterr().err


def test_plot_and_report(tmp_path, cfg_file, capsys):
    run("sweep", "--config", cfg_file, "--scales", "0,2", "--out", tmp_path, "--no-timing")
    assert run("plot", "--out", tmp_path) == 0
    assert (tmp_path / "results.svg").read_text().startswith("<svg")
    assert run("report", "--out", tmp_path) == 0
    md = (tmp_path / "report.md").read_text()
    assert md.count("\n") == 12 and "| 2.0 (" in md


def test_plot_empty_csv_writes_nothing(tmp_path, capsys):
    (tmp_path / "e.csv").write_text("")
    assert run("plot", tmp_path / "e.csv") == 2
    assert "empty results file" in capsys.readouterr().err
    assert not (tmp_path / "e.svg").exists()


def test_generate(tmp_path, cfg_file):
    assert run("generate", "--config", cfg_file, "--scales", "1", "--out", tmp_path, "--traj-format", "npz") == 0
    with np.load(tmp_path / "traj_s1_train.npz") as f:
        assert f["x"].shape == (300, 20)
    env = json.loads((tmp_path / "env.json").read_text())
    assert np.asarray(env["C"]).shape == (20, 4)


def test_train_controlled_then_plan(tmp_path, cfg_file):
    assert run("train", "--controlled", "--config", cfg_file, "--out", tmp_path) == 0
    ckpt = tmp_path / "controlled_vjepa.npz"
    assert run("plan", "--config", cfg_file, "--out", tmp_path, "--checkpoint", ckpt) == 0
    rec = json.loads((tmp_path / "plan.json").read_text())
    z, u, g = (np.array(rec[k]) for k in ("latents", "actions", "goal_latent"))
    assert u.shape == (4, 2) and z.shape == (5, 4) and len(rec["distances"]) == 5
    assert rec["cost"] == pytest.approx(np.sum((z[1:] - g) ** 2) + rec["lambda"] * np.sum(u * u), rel=1e-12)
    first = (tmp_path / "plan.json").read_bytes()
    run("plan", "--config", cfg_file, "--out", tmp_path, "--checkpoint", ckpt)
    assert (tmp_path / "plan.json").read_bytes() == first


def test_train_writes_checkpoints_and_probe_reports(tmp_path, cfg_file):
    assert run("train", "--config", cfg_file, "--scales", "2", "--models", "bjepa", "--out", tmp_path,
               "--no-timing") == 0
    rep = json.loads((tmp_path / "bjepa_s2_probe.json").read_text())
    assert rep["status"] == "ok" and "train_s" not in rep
    assert len((tmp_path / "bjepa_s2_loss.csv").read_text().splitlines()) == 41
    assert run("filter-demo", "--config", cfg_file, "--out", tmp_path, "--scales", "2",
               "--checkpoint", tmp_path / "bjepa_s2.npz") == 0


def test_filter_demo_scalar(tmp_path, cfg_file):
    assert run("filter-demo", "--config", cfg_file, "--out", tmp_path) == 0
    d = np.loadtxt(tmp_path / "filter.csv", delimiter=",", skiprows=1)
    assert d.shape == (20, 4)
    assert np.mean(np.abs(d[:, 1] - d[:, 2])) < 0.15


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "lbl.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "0.1.0" in out.stdout

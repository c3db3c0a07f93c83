import json
from pathlib import Path

import numpy as np
import pytest

from spindyn.cli import read_csv, replay, run, write_csv

ROOT = Path(__file__).resolve().parents[1]
MODELS = ROOT / "models"
FM_CHAIN = str(MODELS / "fm_chain.toml")
AFM = str(MODELS / "afm_square.toml")
FM_SQUARE = str(MODELS / "fm_square_4x4.toml")

SMALL_CHAIN = """
[crystal]
lattice = [[1.0, 0, 0], [0, 10.0, 0], [0, 0, 10.0]]
sites = [[0, 0, 0]]

[spins]
s = 1.0
g = 1.0

[[exchange]]
sites = [0, 0]
offset = [1, 0, 0]
J = -1.0

[field]
B = [0, 0, 0.3]

[supercell]
dims = [8, 1, 1]
"""


@pytest.fixture
def chain_file(tmp_path):
    p = tmp_path / "chain.toml"
    p.write_text(SMALL_CHAIN)
    return str(p)


def outputs(d: Path) -> dict:
    """Every output file's bytes; run.json without its wall-clock entry."""
    out = {}
    for f in sorted(d.iterdir()):
        if f.name == "run.json":
            m = json.loads(f.read_text())
            m.pop("wall_time")
            out[f.name] = json.dumps(m, sort_keys=True).encode()
        else:
            out[f.name] = f.read_bytes()
    return out


def test_csv_round_trip_is_exact(tmp_path):
    x = np.random.default_rng(0).standard_normal(50) * 10.0 ** np.arange(-25, 25)
    write_csv(tmp_path / "t.csv", ["i", "x"], [np.arange(50), x])
    header, data = read_csv(tmp_path / "t.csv")
    assert header == ["i", "x"]
    assert np.array_equal(data[:, 1], x)


def test_minimize_fm_chain(tmp_path, chain_file):
    assert run(["minimize", chain_file, "--out", str(tmp_path / "o"), "--seed", "1"]) == 0
    header, data = read_csv(tmp_path / "o" / "minimized.csv")
    assert header[-3:] == ["ux", "uy", "uz"] and data.shape == (8, 8)
    assert np.allclose(data[:, 5:], [0, 0, 1], atol=1e-8)
    m = json.loads((tmp_path / "o" / "run.json").read_text())
    assert m["results"]["final_gradnorm"] < m["results"]["tol"]
    assert len(m["model"]["sha256"]) == 64 and m["seed"] == 1
    assert m["defaults"]["minimize"]["tol"] == m["results"]["tol"]


def test_lswt_unstable_state_exits_2(tmp_path, capsys):
    init = tmp_path / "fm.csv"
    init.write_text("index,ux,uy,uz\n0,0,0,1\n1,0,0,1\n")
    code = run(["lswt", AFM, "--out", str(tmp_path / "o"), "--qpath", "0,0,0;0.5,0,0", "--points", "3",
                "--init", str(init)])
    assert code == 2
    assert "q = [0.0, 0.0, 0.0]" in capsys.readouterr().err
    m = json.loads((tmp_path / "o" / "run.json").read_text())
    assert m["status"] == "numerical-failure"


def test_lswt_afm_dispersion(tmp_path):
    assert run(["lswt", AFM, "--out", str(tmp_path), "--qpath", "0,0,0;0.5,0,0", "--points", "5",
                "--sigma", "0.1"]) == 0
    header, data = read_csv(tmp_path / "dispersion.csv")
    h, k = data[:, 1], data[:, 2]
    # Neel-cell r.l.u. -> square-lattice momentum: (qx, qy) = pi (h - k, h + k)
    qx, qy = np.pi * (h - k), np.pi * (h + k)
    gamma = 0.5 * (np.cos(qx) + np.cos(qy))
    assert np.allclose(data[:, 6], 4 * np.sqrt(np.clip(1 - gamma**2, 0, None)), atol=1e-6)
    assert (tmp_path / "spectrum.csv").exists() and (tmp_path / "ground_state.csv").exists()


@pytest.mark.parametrize("argv, needle", [
    (["frobnicate", FM_CHAIN, "--out", "x"], "invalid choice"),
    (["minimize", FM_CHAIN], "--out"),
    (["dynamics", FM_CHAIN, "--out", "x", "--steps", "10"], "--dt"),
    (["sample", FM_CHAIN, "--out", "x", "--method", "pt", "--temp", "1.0"], "two"),
    (["lswt", FM_CHAIN, "--out", "x"], "--qpath"),
])
def test_usage_errors_exit_1(tmp_path, monkeypatch, capsys, argv, needle):
    monkeypatch.chdir(tmp_path)
    assert run(argv) == 1
    assert needle in capsys.readouterr().err


def test_bad_model_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(SMALL_CHAIN.replace("[[exchange]]", "[[excahnge]]"))
    assert run(["minimize", str(bad), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "excahnge" in err and "line 10" in err


def test_threads_env_validated(tmp_path, monkeypatch, chain_file):
    monkeypatch.setenv("SPINDYN_THREADS", "zero")
    assert run(["minimize", chain_file, "--out", str(tmp_path)]) == 1


def test_dynamics_structfact_pipeline(tmp_path, chain_file):
    d = tmp_path / "dyn"
    assert run(["dynamics", chain_file, "--out", str(d), "--dt", "0.05", "--steps", "200", "--stride", "4",
                "--temp", "0.2", "--therm-steps", "200", "--members", "2", "--seed", "5"]) == 0
    side = json.loads((d / "traj_001.json").read_text())
    assert side["nframes"] == 51 and side["metadata"]["integrator"] == "midpoint"
    run_meta = json.loads((d / "run.json").read_text())
    for m in run_meta["results"]["members"]:
        assert m["max_abs_energy_change"] < 1e-6 * abs(m["energy_first"])
    s = tmp_path / "sf"
    assert run(["structfact", chain_file, "--out", str(s), "--traj", str(d), "--no-subtract-mean"]) == 0
    _, sqw = read_csv(s / "sqw.csv")
    _, static = read_csv(s / "static.csv")
    meta = json.loads((s / "structfact.json").read_text())
    S = (sqw[:, 4] + 1j * sqw[:, 5]).reshape(8, meta["nomega"], 3, 3)
    Sst = (static[:, 3] + 1j * static[:, 4]).reshape(8, 3, 3)
    assert np.max(np.abs(S.sum(axis=1) * meta["delta_omega"] - Sst)) < 1e-10


def test_sun_dynamics(tmp_path):
    assert run(["dynamics", str(MODELS / "spin1_chain_sun.toml"), "--out", str(tmp_path), "--dt", "0.01",
                "--steps", "200", "--stride", "20"]) == 0
    m = json.loads((tmp_path / "run.json").read_text())["results"]["members"][0]
    assert m["max_abs_energy_change"] < 1e-6 * abs(m["energy_first"])
    assert run(["dynamics", str(MODELS / "spin1_chain_sun.toml"), "--out", str(tmp_path / "x"), "--dt", "0.01",
                "--steps", "5", "--lambda", "0.1"]) == 1


def test_wang_landau_incomplete_then_resume(tmp_path):
    base = ["sample", FM_SQUARE, "--method", "wl", "--emin", "-31", "--emax", "5", "--bins", "72",
            "--temp", "1.0,2.0", "--seed", "3"]
    assert run(base + ["--out", str(tmp_path / "a"), "--steps", "20000"]) == 2
    m = json.loads((tmp_path / "a" / "run.json").read_text())
    assert m["results"]["status"] == "incomplete" and m["results"]["mc_steps"] == 20000
    state = tmp_path / "a" / "wl_state.json"
    assert run(base + ["--out", str(tmp_path / "b"), "--steps", "40000", "--resume", str(state)]) == 2
    m = json.loads((tmp_path / "b" / "run.json").read_text())
    assert m["results"]["mc_steps"] == 40000
    assert (tmp_path / "b" / "thermo.csv").exists()


def test_metropolis_outputs(tmp_path):
    assert run(["sample", FM_SQUARE, "--out", str(tmp_path), "--temp", "0.5", "--steps", "400"]) == 0
    header, data = read_csv(tmp_path / "samples.csv")
    assert header == ["sweep", "energy", "mx", "my", "mz"] and len(data) == 200
    m = json.loads((tmp_path / "run.json").read_text())["results"]
    assert m["mean_energy"] == pytest.approx(data[:, 1].mean())


@pytest.mark.parametrize("argv", [
    ["dynamics", FM_CHAIN, "--dt", "0.05", "--steps", "60", "--stride", "3", "--temp", "0.3", "--lambda", "0.2",
     "--members", "3"],
    ["sample", FM_SQUARE, "--method", "pt", "--temp", "0.5,1,2,4", "--steps", "200", "--swap-interval", "5"],
])
def test_byte_identical_across_runs_and_thread_caps(tmp_path, monkeypatch, argv):
    dirs = []
    for k, threads in enumerate(["1", "4", "4"]):
        monkeypatch.setenv("SPINDYN_THREADS", threads)
        d = tmp_path / f"r{k}"
        assert run(argv + ["--seed", "42", "--out", str(d)]) == 0
        dirs.append(d)
    ref = outputs(dirs[0])
    assert outputs(dirs[1]) == ref and outputs(dirs[2]) == ref
    assert replay(dirs[0] / "run.json", tmp_path / "replayed") == 0
    assert outputs(tmp_path / "replayed") == ref
    monkeypatch.setenv("SPINDYN_THREADS", "1")
    assert run(argv + ["--seed", "43", "--out", str(tmp_path / "other")]) == 0
    assert outputs(tmp_path / "other") != ref


def test_anneal_then_minimize(tmp_path):
    a = tmp_path / "anneal"
    assert run(["sample", FM_SQUARE, "--out", str(a), "--temp", "0.05", "--steps", "200", "--seed", "2"]) == 0
    assert run(["minimize", FM_SQUARE, "--out", str(tmp_path / "m"), "--init", str(a / "final.csv")]) == 0
    m = json.loads((tmp_path / "m" / "run.json").read_text())["results"]
    assert m["energy"] == pytest.approx(-32.0, abs=1e-8)

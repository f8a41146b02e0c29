import json
import math

import pytest

from bbmlab.cli import EXIT_CHECK, EXIT_INTEGRITY, EXIT_OK, EXIT_PARTIAL, main
from bbmlab.config import SCHEMA

SOLVE_FD = """[meta]
schema = {schema}
command = solve
[solve]
scheme = {scheme}
store_every = {store}
{extra}
[grid]
z_min = -20
z_max = 20
dz = {dz}
dt = {dt}
t_max = {t_max}
"""


def ini(tmp_path, name, text, **kw):
    p = tmp_path / name
    p.write_text(text.format(schema=SCHEMA, **kw))
    return str(p)


def solve_cfg(tmp_path, scheme="fd", t_max=2.0, store=0.5, dz=0.05, extra="", name="solve.ini"):
    # dz^2/dt = 0.1 at dz = 0.02, 0.25 at dz = 0.05
    dt = 0.004 if dz < 0.05 else 0.01
    return ini(tmp_path, name, SOLVE_FD, scheme=scheme, t_max=t_max, store=store, dz=dz, dt=dt, extra=extra)


def listing(d):
    return sorted(p.name for p in d.iterdir())


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("solve")
    cfg = solve_cfg(tmp)
    code = main(["solve", "--config", cfg, "--out-dir", str(tmp / "run"), "--probes=-1,0,2"])
    return code, tmp


def test_solve_outputs(solved, capsys):
    code, tmp = solved
    assert code == EXIT_OK
    run = tmp / "run"
    assert listing(run) == ["field.bin", "field.csv", "manifest.json", "probes.csv", "summary.json"]
    man = json.loads((run / "manifest.json").read_text())
    assert [o["path"] for o in man["outputs"]] == ["field.csv", "field.bin", "probes.csv", "summary.json"]
    assert man["flags"]["probes"] == [-1.0, 0.0, 2.0]
    summary = json.loads((run / "summary.json").read_text())
    assert summary["invariants"]["bounded"] == 0 and summary["slices"] == 4
    u = {p["z"]: p["u"] for p in summary["probes"]}
    assert 0 < u[-1.0] < u[0.0] < u[2.0] < 1


def test_replay_identical(solved, capsys):
    _, tmp = solved
    for argv in (["replay", str(tmp / "run" / "manifest.json"), "--out-dir", str(tmp / "again")],
                 ["solve", "--replay", str(tmp / "run" / "manifest.json"), "--out-dir", str(tmp / "again2")]):
        assert main(argv) == EXIT_OK
        out = capsys.readouterr().out
        assert "DIFFERENT" not in out and "identical  field.bin" in out
    for name in ("field.csv", "field.bin", "probes.csv", "summary.json"):
        assert (tmp / "run" / name).read_bytes() == (tmp / "again" / name).read_bytes()


def test_replay_detects_changed_input(solved, tmp_path, capsys):
    _, tmp = solved
    f = tmp_path / "copy"
    f.mkdir()
    for name in ("field.csv", "field.bin", "manifest.json"):
        (f / name).write_bytes((tmp / "run" / name).read_bytes())
    ver = ini(tmp_path, "x.ini", "[meta]\nschema = {schema}\n[verify]\nsuite = cross\ncross_t = 2\n"
              f"field = {tmp / 'run' / 'field'}\nother_field = {f / 'field'}\n")
    assert main(["verify", "--config", ver, "--out-dir", str(tmp_path / "v")]) == EXIT_OK
    rep = json.loads((tmp_path / "v" / "report.json").read_text())
    assert rep["reports"][0]["empirical"] == 0.0
    # a changed input makes the recorded run irreproducible
    (f / "field.bin").write_bytes(b"x")
    assert main(["replay", str(tmp_path / "v" / "manifest.json"), "--out-dir", str(tmp_path / "v2")]) \
        == EXIT_INTEGRITY
    assert "changed" in capsys.readouterr().err


def test_bad_scheme_writes_nothing(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["solve", "--config", solve_cfg(tmp_path, scheme="spectral"), "--out-dir", str(out)]) \
        == EXIT_INTEGRITY
    assert "scheme" in capsys.readouterr().err
    assert listing(out) == []


def test_solver_error_writes_nothing(tmp_path):
    out = tmp_path / "out"
    # the window is too narrow for t_max = 20
    assert main(["solve", "--config", solve_cfg(tmp_path, t_max=20.0), "--out-dir", str(out)]) \
        == EXIT_INTEGRITY
    assert listing(out) == []


def test_config_for_other_command(tmp_path):
    assert main(["simulate", "--config", solve_cfg(tmp_path), "--out-dir", str(tmp_path / "o")]) \
        == EXIT_INTEGRITY


SIM = """[meta]
schema = {schema}
[simulate]
horizon = {horizon}
n = {n}
{extra}
"""


def test_simulate_seed_required(tmp_path, capsys):
    cfg = ini(tmp_path, "sim.ini", SIM, horizon=1.0, n=100, extra="")
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == EXIT_INTEGRITY
    assert "seed" in capsys.readouterr().err
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path / "o"), "--seed", "5"]) == EXIT_OK
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["seeds"] == [5]
    assert main(["replay", str(tmp_path / "o" / "manifest.json"), "--out-dir", str(tmp_path / "r")]) == EXIT_OK
    assert (tmp_path / "o" / "batch.csv").read_bytes() == (tmp_path / "r" / "batch.csv").read_bytes()


def test_simulate_thresholds_and_cap(tmp_path):
    cfg = ini(tmp_path, "sim.ini", SIM, horizon=1.0, n=2000, extra="seed = 3\nthresholds = 0, 1")
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    p0, p1 = (p["estimate"] for p in s["probabilities"])
    assert 0 < p0 < p1 < 1 and not s["partial"]
    capped = ini(tmp_path, "cap.ini", SIM, horizon=6.0, n=500, extra="seed = 3\npopulation_cap = 50")
    assert main(["simulate", "--config", capped, "--out-dir", str(tmp_path / "c")]) == EXIT_PARTIAL
    s = json.loads((tmp_path / "c" / "summary.json").read_text())
    assert s["partial"] and s["count"] < 500


def test_wave_missing_artifact(tmp_path, capsys):
    cfg = ini(tmp_path, "wave.ini", "[meta]\nschema = {schema}\n[wave]\nt = 2\noffset = 0\n"
              f"field = {tmp_path / 'nothing'}\n")
    assert main(["wave", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == EXIT_INTEGRITY
    assert "missing artifact" in capsys.readouterr().err


def test_constants_dependency(tmp_path, capsys):
    cfg = ini(tmp_path, "c.ini", "[meta]\nschema = {schema}\n[constants]\nalphas = 0.5, -1\n")
    assert main(["constants", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == EXIT_INTEGRITY
    assert "wave" in capsys.readouterr().err
    cfg = ini(tmp_path, "c2.ini", "[meta]\nschema = {schema}\n[constants]\nalphas = 0.5, -0.2\n"
              "columns = psi, v_alpha, lambda_alpha\n")
    assert main(["constants", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    rows = json.loads((tmp_path / "o" / "constants.json").read_text())["rows"]
    assert [r["regime"] for r in rows] == ["High", "High"]


def test_verify_rate_suite(tmp_path):
    cfg = ini(tmp_path, "v.ini", "[meta]\nschema = {schema}\n[verify]\nsuite = rate\n")
    assert main(["verify", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["status"] == "pass" and rep["suites"] == ["rate"]
    assert main(["verify", "--config", cfg, "--out-dir", str(tmp_path / "o"), "--suite", "bogus"]) \
        == EXIT_INTEGRITY
    assert main(["verify", "--config", cfg, "--out-dir", str(tmp_path / "o"), "--suite", "bounds"]) \
        == EXIT_INTEGRITY


def test_condition_then_verify(tmp_path, capsys):
    solve = solve_cfg(tmp_path, t_max=3.0, store=0.02, dz=0.02, extra="ramp_stride = 10")
    assert main(["solve", "--config", solve, "--out-dir", str(tmp_path / "f")]) == EXIT_OK
    cond = ini(tmp_path, "cond.ini", "[meta]\nschema = {schema}\n[condition]\nhorizon = 3\nseed = 4\n"
               "alpha = 0\nmax_trials = 1000000\ntarget = 3000\n")
    assert main(["condition", "--config", cond, "--out-dir", str(tmp_path / "c")]) == EXIT_OK
    s = json.loads((tmp_path / "c" / "summary.json").read_text())
    assert s["accepted"] == 3000 and s["alpha"] == 0.0
    ver = ini(tmp_path, "ver.ini", "[meta]\nschema = {schema}\n[verify]\nsuite = conditional\n"
              f"field = {tmp_path / 'f' / 'field'}\nbatch = {tmp_path / 'c'}\n")
    code = main(["verify", "--config", ver, "--out-dir", str(tmp_path / "v")])
    rep = json.loads((tmp_path / "v" / "report.json").read_text())
    exact = [r for r in rep["reports"] if r["name"].startswith("exact.")]
    assert len(exact) == 4 and all(r["verdict"] == "pass" for r in exact)
    assert code == (EXIT_CHECK if rep["status"] == "fail" else EXIT_OK)
    man = json.loads((tmp_path / "v" / "manifest.json").read_text())
    assert {p["path"].rsplit("/", 1)[-1] for p in man["inputs"]} >= {"field.csv", "field.bin", "accepted.csv"}


def test_cross_suite(tmp_path):
    fd = solve_cfg(tmp_path, dz=0.02, name="fd.ini")
    du = solve_cfg(tmp_path, scheme="duhamel", dz=0.02, name="du.ini")
    assert main(["solve", "--config", fd, "--out-dir", str(tmp_path / "fd")]) == EXIT_OK
    assert main(["solve", "--config", du, "--out-dir", str(tmp_path / "du")]) == EXIT_OK
    ver = ini(tmp_path, "x.ini", "[meta]\nschema = {schema}\n[verify]\nsuite = cross\ncross_t = 2\n"
              f"field = {tmp_path / 'fd' / 'field'}\nother_field = {tmp_path / 'du' / 'field'}\n")
    assert main(["verify", "--config", ver, "--out-dir", str(tmp_path / "v")]) == EXIT_OK
    rep = json.loads((tmp_path / "v" / "report.json").read_text())
    assert rep["reports"][0]["empirical"] < 1e-3 and math.isfinite(rep["reports"][0]["empirical"])


def test_simulate_yule_mean(tmp_path):
    cfg = ini(tmp_path, "sim.ini", SIM, horizon=3.0, n=10**6, extra="seed = 31\nwrite_batch = false")
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["count"] == 10**6
    assert abs(s["mean_n_t"] - math.exp(3.0)) <= 3 * s["se_n_t"]


def test_condition_reports_wilson(tmp_path, capsys):
    cfg = ini(tmp_path, "cond.ini", "[meta]\nschema = {schema}\n[condition]\nhorizon = 4\nseed = 32\n"
              f"threshold = {-4 * math.sqrt(2)!r}\nmax_trials = 100000000\ntarget = 200\n")
    assert main(["condition", "--config", cfg, "--out-dir", str(tmp_path / "c")]) == EXIT_OK
    s = json.loads((tmp_path / "c" / "summary.json").read_text())
    lo, hi = s["wilson_95"]
    assert s["accepted"] == 200 and lo < s["acceptance_rate"] < hi
    assert "Wilson" in capsys.readouterr().out

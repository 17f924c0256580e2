import json
import math

import pytest
from filelock import FileLock

from nhtorus import __version__
from nhtorus.cli import main


def read_json(path):
    return json.loads(path.read_text())


def manifest(out):
    return read_json(out / "manifest.json")


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_h1_check(tmp_path):
    assert main(["h1-check", "--out", str(tmp_path)]) == 0
    report = read_json(tmp_path / "h1.json")
    m = manifest(tmp_path)
    assert m["status"] == "ok" and m["exit_code"] == 0 and m["reason"] is None
    assert {"inputs", "versions", "tolerances", "wall_time_s", "artifacts"} <= set(m)
    assert m["results"]["h1_max_violation"] < 1e-12
    assert report
    assert (tmp_path / "h1_violations.csv").read_text().splitlines()[0].count(",") >= 2
    assert (tmp_path / "run.log").exists()


def test_manifest_key_order(tmp_path):
    main(["h1-check", "--out", str(tmp_path)])
    text = (tmp_path / "manifest.json").read_text()
    keys = list(json.loads(text))
    assert keys == sorted(keys)


def test_h1_failure_exits_numeric(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text('[jerk]\nP = "xdd"\n')
    out = tmp_path / "out"
    assert main(["h1-check", "--config", str(cfg), "--out", str(out)]) == 3
    assert "H1" in manifest(out)["reason"]


def test_avg_default(tmp_path):
    assert main(["avg", "--out", str(tmp_path)]) == 0
    cert = read_json(tmp_path / "avg_certificate.json")
    assert manifest(tmp_path)["results"]["first_nonvanishing_order"] == 5
    assert cert
    header = (tmp_path / "avg_f.csv").read_text().splitlines()[0]
    assert header.startswith("x1,x2")


def test_avg_with_system_table(tmp_path):
    cfg = tmp_path / "sys.toml"
    cfg.write_text('[system]\nperiod = "2*pi"\norder = 2\nF1 = ["0", "0"]\nF2 = ["x1", "x2"]\n\n[avg]\ngrid_x1 = [-1, 1, 3]\ngrid_x2 = [-1, 1, 3]\n')
    out = tmp_path / "out"
    assert main(["avg", "--config", str(cfg), "--out", str(out)]) == 0
    assert manifest(out)["results"]["first_nonvanishing_order"] == 2


def test_cycle_default_and_rerun(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["cycle", "--out", str(a)]) == 0
    assert main(["cycle", "--out", str(b)]) == 0
    assert (a / "cycle.csv").read_bytes() == (b / "cycle.csv").read_bytes()
    cert = read_json(a / "cycle.json")
    assert cert == read_json(b / "cycle.json")
    assert abs(cert["multiplier_monodromy"] / math.exp(-2 * math.pi) - 1) < 1e-6
    assert cert["stable"] and cert["hyperbolic_attracting"]
    row = (a / "cycle.csv").read_text().splitlines()[2].split(",")
    assert all(v == format(float(v), ".17g") for v in row)
    assert float(row[0]) > 0


def test_missing_config(tmp_path):
    assert main(["avg", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 2
    m = manifest(tmp_path)
    assert m["status"] == "config_error" and "not found" in m["reason"]


@pytest.mark.parametrize(
    "text",
    [
        "[plot]\ncolour = 1\n",
        "[torus]\nwindow = 3\n",
        '[system]\nperiod = "2*pi"\norder = 1\nF1 = ["x1 +", "0"]\n',
        "not toml = = 1\n",
        "[torus]\nburn = -1\n",
    ],
)
def test_config_errors(tmp_path, text):
    cfg = tmp_path / "c.toml"
    cfg.write_text(text)
    command = "torus" if "torus" in text else "avg"
    assert main([command, "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_bad_seed_point(tmp_path):
    assert main(["torus", "--seed-point", "1,a,3", "--out", str(tmp_path)]) == 2


def test_lock_held(tmp_path):
    with FileLock(str(tmp_path / ".nhtorus.lock")):
        assert main(["h1-check", "--out", str(tmp_path)]) == 2


def test_torus_unperturbed(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["torus", "--eps", "0", "--burn", "5", "--keep", "50"]
    assert main(args + ["--out", str(a)]) == 3
    m = manifest(a)
    assert m["status"] == "numerical_failure"
    assert m["reason"] == "not normally hyperbolic: nu_hat ≈ 1"
    assert main(args + ["--out", str(b)]) == 3
    for name in ("torus_samples.csv", "torus_curve.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ja, jb = read_json(a / "torus.json"), read_json(b / "torus.json")
    assert list(ja) == list(jb) and ja == jb
    assert len((a / "torus_samples.csv").read_text().splitlines()) == 51


def test_torus_empty_sample(tmp_path):
    assert main(["torus", "--eps", "0", "--burn", "1", "--keep", "0", "--out", str(tmp_path)]) == 3
    assert (tmp_path / "torus_samples.csv").read_text() == "k,return_time,u1,u2,x,xd,xdd\n"


@pytest.mark.slow
def test_jerk_demo(tmp_path):
    assert main(["jerk-demo", "--out", str(tmp_path)]) == 0
    m = manifest(tmp_path)
    assert m["status"] == "ok"
    assert m["results"]["nu_hat"] < 1
    summary = read_json(tmp_path / "summary.json")
    assert summary["first_nonvanishing_order"] == 5
    assert summary["nu_hat"] < 1 - 1e-3
    for name in ("h1.json", "avg_certificate.json", "cycle.csv", "torus.json", "torus_curve.csv"):
        assert (tmp_path / name).exists()

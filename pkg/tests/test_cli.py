import json
import subprocess
import sys

import numpy as np

from wendy.cli import main, read_csv, write_csv
from wendy.models import truth


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_models_list_json(capsys):
    code, out, _ = run(capsys, "models", "list", "--json")
    doc = json.loads(out)
    assert code == 0
    names = [m["name"] for m in doc["models"]]
    assert names == ["logistic", "lotka_volterra", "fitzhugh_nagumo", "hindmarsh_rose", "ptb"]
    ptb = doc["models"][-1]
    assert len(ptb["w_star"]) == ptb["n_params"] == 11


def test_simulate_noiseless_matches_truth(tmp_path, capsys):
    out = tmp_path / "lg.csv"
    assert run(capsys, "simulate", "logistic", "--M", 512, "--out", out)[0] == 0
    assert out.read_text() == (tmp_path / "lg.truth.csv").read_text()


def test_simulate_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        run(capsys, "simulate", "lv", "--M", 256, "--noise", 0.2, "--seed", 1, "--out", p)
    assert a.read_bytes() == b.read_bytes()


def test_simulate_ptb_header(tmp_path, capsys):
    out = tmp_path / "ptb.csv"
    run(capsys, "simulate", "ptb", "--M", 64, "--out", out)
    assert out.read_text().splitlines()[0] == "t,u1,u2,u3,u4,u5"


def test_csv_round_trip_bit_identical(tmp_path):
    ds = truth("fhn", 256)
    p = tmp_path / "x.csv"
    write_csv(p, ds)
    back = read_csv(p)
    np.testing.assert_array_equal(back.U, ds.U)
    np.testing.assert_array_equal(back.t, ds.t)
    assert back.grid == ds.grid


def test_estimate_noiseless_logistic(tmp_path, capsys):
    data = tmp_path / "lg.csv"
    write_csv(data, truth("logistic", 512))
    code, out, _ = run(capsys, "estimate", data, "--model", "logistic")
    doc = json.loads(out)
    assert code == 0
    np.testing.assert_allclose(doc["w_hat"], [1, -1], atol=1e-3)
    assert doc["parameters"] == ["eq1:u1", "eq1:u1^2"]
    assert all(lo <= w <= hi for lo, w, hi in zip(doc["ci_lower"], doc["w_hat"], doc["ci_upper"]))


def test_estimate_library_text(tmp_path, capsys):
    data = tmp_path / "lv.csv"
    write_csv(data, truth("lv", 256))
    code, out, _ = run(capsys, "estimate", data, "--library", "u1,u1*u2; u2,u1*u2")
    assert code == 0
    np.testing.assert_allclose(json.loads(out)["w_hat"], [3, -1, -6, 1], rtol=1e-3)


def test_estimate_alpha_one_equals_ols(tmp_path, capsys):
    from wendy.models import add_noise

    data = tmp_path / "lv.csv"
    write_csv(data, add_noise(truth("lv", 256), 0.1, 3))
    _, a, _ = run(capsys, "estimate", data, "--model", "lv", "--alpha", 1.0)
    _, b, _ = run(capsys, "estimate", data, "--model", "lv", "--estimator", "ols")
    assert json.loads(a)["w_hat"] == json.loads(b)["w_hat"]


def test_estimate_non_uniform_grid(tmp_path, capsys):
    t = [0.0, 0.1, 0.2, 0.35, 0.4, 0.5]
    p = tmp_path / "bad.csv"
    p.write_text("t,u1\n" + "".join(f"{x!r},{float(np.exp(x))!r}\n" for x in t))
    code, _, err = run(capsys, "estimate", p, "--library", "u1")
    assert code == 2
    assert json.loads(err)["error"] == "non_uniform_grid"


def test_estimate_bad_inputs(tmp_path, capsys):
    p = tmp_path / "x.csv"
    p.write_text("time,u1\n0,1\n1,2\n2,3\n")
    assert run(capsys, "estimate", p, "--library", "u1")[0] == 2
    p.write_text("t,u1\n0,1\n1,abc\n2,3\n")
    code, _, err = run(capsys, "estimate", p, "--library", "u1")
    assert code == 2 and "line 3" in err
    write_csv(p, truth("lv", 64))
    assert run(capsys, "estimate", p, "--model", "logistic")[0] == 2
    assert run(capsys, "estimate", p, "--model", "nope")[0] == 2
    code, _, err = run(capsys, "estimate", tmp_path / "missing.csv", "--library", "u1")
    assert code == 1


def test_estimate_writes_out_file(tmp_path, capsys):
    data = tmp_path / "lg.csv"
    write_csv(data, truth("logistic", 256))
    out = tmp_path / "fit.json"
    run(capsys, "estimate", data, "--model", "logistic", "--out", out)
    assert json.loads(out.read_text())["model"] == "logistic"


def _config(tmp_path, **kw):
    cfg = {"model": "logistic", "noise_ratios": [0.1], "subsample_factors": [4], "n_trials": 1}
    cfg.update(kw)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg, indent=2))
    return p


def test_benchmark_outputs_and_rerun(tmp_path, capsys):
    cfg = _config(tmp_path)
    for d in ("r1", "r2"):
        code, out, _ = run(capsys, "benchmark", cfg, "--out-dir", tmp_path / d, "--jobs", 1)
        assert code == 0 and "drop=" in out
    for f in ("trials.csv", "summary.json", "long.csv"):
        assert (tmp_path / "r1" / f).stat().st_size > 0
    assert (tmp_path / "r1" / "summary.json").read_text() == \
        (tmp_path / "r2" / "summary.json").read_text()
    cells = json.loads((tmp_path / "r1" / "summary.json").read_text())["cells"]
    assert "pct_drop_E2" in next(c for c in cells if c["estimator"] == "wendy")


def test_benchmark_unknown_key_reports_line(tmp_path, capsys):
    p = tmp_path / "cfg.json"
    p.write_text('{\n  "model": "lv",\n  "n_trails": 3\n}\n')
    code, _, err = run(capsys, "benchmark", p, "--out-dir", tmp_path / "o")
    msg = json.loads(err)
    assert code == 2 and msg["error"] == "config_error"
    assert "line 3" in msg["message"] and "n_trails" in msg["message"]


def test_benchmark_nested_unknown_key(tmp_path, capsys):
    p = tmp_path / "cfg.json"
    p.write_text('{\n  "irls": {\n    "alpha": 0.1,\n    "beta": 2\n  }\n}\n')
    code, _, err = run(capsys, "benchmark", p, "--out-dir", tmp_path / "o")
    assert code == 2 and "irls.beta" in err and "line 4" in err


def test_print_config(tmp_path, capsys):
    cfg = _config(tmp_path, irls={"alpha": 0.5})
    code, out, _ = run(capsys, "benchmark", cfg, "--out-dir", tmp_path / "o", "--print-config",
                       "--trials", 7)
    doc = json.loads(out)
    assert code == 0
    assert doc["irls"]["alpha"] == 0.5 and doc["irls"]["max_its"] == 100
    assert doc["n_trials"] == 7 and doc["testfn"]["eta"] == 9.0
    assert not (tmp_path / "o").exists()
    code, out, _ = run(capsys, "estimate", "unused.csv", "--print-config", "--eta", 5, "--n0", 3)
    doc = json.loads(out)
    assert doc["testfn"]["eta"] == 5 and doc["irls"]["n0"] == 3


def test_bad_config_value(tmp_path, capsys):
    cfg = _config(tmp_path, testfn={"s": 5.0})
    assert run(capsys, "benchmark", cfg, "--out-dir", tmp_path / "o")[0] == 2
    p = tmp_path / "broken.json"
    p.write_text('{"model": "lv",\n')
    code, _, err = run(capsys, "benchmark", p, "--out-dir", tmp_path / "o")
    assert code == 2 and "line" in err


def test_compare(tmp_path, capsys):
    data = tmp_path / "lv.csv"
    run(capsys, "simulate", "lv", "--M", 256, "--noise", 0.1, "--seed", 2, "--out", data)
    code, out, _ = run(capsys, "compare", data, "--model", "lv", "--estimators", "ols,wendy",
                       "--truth", tmp_path / "lv.truth.csv")
    doc = json.loads(out)
    assert code == 0
    assert [r["estimator"] for r in doc["results"]] == ["ols", "wendy"]
    assert all(r["E2"] < 0.2 and r["EFS"] < 0.5 for r in doc["results"])


def test_compare_unknown_estimator(tmp_path, capsys):
    data = tmp_path / "lg.csv"
    write_csv(data, truth("logistic", 128))
    assert run(capsys, "compare", data, "--model", "lg", "--estimators", "lasso")[0] == 2


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "wendy.cli", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and res.stdout.startswith("wendy ")


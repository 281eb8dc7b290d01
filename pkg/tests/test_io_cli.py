import json

import numpy as np
import pytest

from misspec_subsampling.cli import main
from misspec_subsampling.io import (ConfigError, RunConfig, load_csv,
                                    read_csv_rows, write_json, write_outputs)


def write(path, text):
    path.write_text(text)
    return path


def skin_csv(path, n=3000, seed=0):
    rng = np.random.default_rng(seed)
    B, G, R = rng.integers(0, 256, size=(3, n))
    eta = -1 + 0.02 * (R - 128) - 0.01 * (B - 128) + 5e-5 * (R - 128) ** 2
    cls = np.where(rng.random(n) < 1 / (1 + np.exp(-eta)), 1, 2)
    lines = ["B,G,R,class"] + [f"{a},{b},{c},{d}" for a, b, c, d in zip(B, G, R, cls)]
    return write(path, "\n".join(lines) + "\n")


def test_load_csv_shape(tmp_path):
    p = write(tmp_path / "d.csv", "y,a,b\n1,2,3\n0,4,5\n1,6,8\n")
    ds = load_csv(p, "y", ["a", "b"])
    assert ds.d == 3 and ds.N == 3
    assert ds.columns == ["intercept", "a", "b"]
    assert load_csv(p, "y", ["a"], intercept=False).d == 1


def test_load_csv_standardize(tmp_path):
    p = write(tmp_path / "d.csv", "y,a,b\n1,2,3\n0,4,5\n1,6,8\n")
    ds = load_csv(p, "y", ["a", "b"], standardize=[True, False])
    assert abs(ds.X[:, 1].mean()) < 1e-10
    np.testing.assert_array_equal(ds.X[:, 2], [3, 5, 8])


def test_load_csv_errors(tmp_path):
    p = write(tmp_path / "d.csv", "y,a\n1,2\n0,x\n")
    with pytest.raises(ValueError, match="line 3"):
        load_csv(p, "y", ["a"])
    with pytest.raises(ValueError, match="missing column.*zz"):
        load_csv(write(tmp_path / "e.csv", "y,a\n1,2\n"), "y", ["zz"])
    with pytest.raises(ValueError, match="empty"):
        load_csv(write(tmp_path / "f.csv", ""), "y", ["a"])
    with pytest.raises(ValueError, match="no data"):
        load_csv(write(tmp_path / "g.csv", "y,a\n"), "y", ["a"])


def test_bernoulli_domain(tmp_path):
    p = write(tmp_path / "d.csv", "y,a\n0,1\n1,2\n1,3\n")
    load_csv(p, "y", ["a"]).validate_for("bernoulli")
    q = write(tmp_path / "e.csv", "y,a\n0,1\n2,2\n1,3\n")
    with pytest.raises(ValueError):
        load_csv(q, "y", ["a"]).validate_for("bernoulli")
    recoded = load_csv(q, "y", ["a"], positive_class=2)
    np.testing.assert_array_equal(recoded.y, [0, 1, 0])


def test_json_roundtrip_exact(tmp_path):
    beta = np.random.default_rng(0).normal(size=5)
    write_json(tmp_path / "e.json", {"beta": beta, "nan": float("nan")})
    back = json.loads((tmp_path / "e.json").read_text())
    assert np.array_equal(np.array(back["beta"]), beta)
    assert back["nan"] is None


def test_write_outputs_creates_dir_and_quotes(tmp_path):
    out = tmp_path / "a" / "b"
    rows = [{"name": 'x,"y"', "v": 0.1}]
    paths = write_outputs(out, tables={"t.csv": (rows, ["name", "v"])})
    assert paths[0].exists()
    assert paths[0].read_bytes() == b'name,v\r\n"x,""y""",0.1\r\n'
    assert read_csv_rows(paths[0]) == [{"name": 'x,"y"', "v": "0.1"}]
    assert not list(out.glob(".*tmp"))


def test_run_config_rules(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="schema_version"):
        RunConfig.from_dict({"schema_version": 99})
    cfg = RunConfig.from_dict({"input_csv": "x.csv", "misspec": "T2a",
                               "response_column": "y", "covariate_columns": ["a"]})
    with pytest.raises(ConfigError, match="misspec"):
        cfg.check_source(needs_csv=True)
    with pytest.raises(ConfigError):
        cfg.check_source(needs_csv=False)
    assert "threads" not in RunConfig().echo()


def test_cli_simulate_happy_path(tmp_path):
    cfg = write(tmp_path / "c.json", json.dumps({"N": 500, "r0": 60, "r_grid": [80],
                                                 "M": 3, "seed": 2}))
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(out)]) == 0
    rows = read_csv_rows(out / "sml.csv")
    assert len(rows) == 7
    assert list(rows[0]) == ["family", "model_id", "misspec", "method", "alpha", "sml",
                             "n_failures"]
    echo = json.loads((out / "run.json").read_text())
    assert echo["schema_version"] == 1 and echo["config"]["M"] == 3


def test_cli_same_seed_byte_identical(tmp_path):
    args = ["estimate-misspec", "--family", "poisson", "--r0", "200", "--M", "3"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b"), "--threads", "2"]) == 0
    for name in ("amsme.csv", "amsme_replicates.csv", "run.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_usage_errors(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 1
    assert "missing.json" in capsys.readouterr().err
    bad = write(tmp_path / "bad.json", "{not json")
    assert main(["simulate", "--config", str(bad)]) == 1
    assert "malformed" in capsys.readouterr().err
    assert main(["simulate", "--bogus"]) == 1
    assert main([]) == 1
    assert main(["simulate", "--family", "gamma"]) == 1
    assert main(["subsample"]) == 1


def test_cli_runtime_failure(tmp_path, capsys):
    data = write(tmp_path / "d.csv", "y,a\n1,2\n0,3\n1,5\n")
    cfg = write(tmp_path / "c.json", json.dumps({
        "input_csv": str(data), "response_column": "y", "covariate_columns": ["nope"]}))
    assert main(["subsample", "--config", str(cfg), "--r", "2",
                 "--method", "random", "--out-dir", str(tmp_path / "o")]) == 2
    assert "nope" in capsys.readouterr().err


def test_cli_subsample_skin(tmp_path):
    data = skin_csv(tmp_path / "skin.csv")
    cfg = write(tmp_path / "c.json", json.dumps({
        "family": "bernoulli", "input_csv": str(data), "response_column": "class",
        "covariate_columns": ["B", "G", "R"], "standardize": True,
        "positive_class": 1}))
    out = tmp_path / "o"
    rc = main(["subsample", "--config", str(cfg), "--method", "rlmamse-pow",
               "--alpha", "5", "--r0", "800", "--r", "1200", "--out-dir", str(out)])
    assert rc == 0
    rows = read_csv_rows(out / "subsample.csv")
    assert len(rows) == 2000
    assert sum(r["stage"] == "stage1" for r in rows) == 800
    probs = read_csv_rows(out / "probs.csv")
    assert len(probs) == 3000 and list(probs[0]) == ["row_index", "phi"]
    est = json.loads((out / "estimates.json").read_text())
    assert est["converged"] and len(est["beta"]) == 4
    assert set(est["loss"]) == {"variance_term", "bias_sq_term", "total", "n_rows"}


def test_cli_evaluate(tmp_path):
    data = skin_csv(tmp_path / "skin.csv", n=1500)
    cfg = write(tmp_path / "c.json", json.dumps({
        "input_csv": str(data), "response_column": "class",
        "covariate_columns": ["B", "G", "R"], "standardize": True,
        "positive_class": 1, "r0": 200, "r_grid": [200, 300], "M": 3,
        "methods": ["random", "rlmamse-pow"]}))
    out = tmp_path / "o"
    assert main(["evaluate", "--config", str(cfg), "--out-dir", str(out)]) == 0
    rows = read_csv_rows(out / "al.csv")
    assert [(r["method"], r["r"]) for r in rows] == [
        ("random", "200"), ("random", "300"), ("rlmamse-pow", "200"), ("rlmamse-pow", "300")]

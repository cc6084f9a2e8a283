import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sketchreg import __version__
from sketchreg.cli import ColumnMapping, config_hash, ingest_csv, main, resolve, write_bundle
from sketchreg.errors import ConfigError, MissingColumn, NonNumericCell, ParseError
from sketchreg.estimators import DataBundle


def write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def data_csv(tmp_path):
    r = np.random.default_rng(0)
    n = 400
    z1, z2 = r.standard_normal(n), r.standard_normal(n)
    x1 = z1 + z2 + r.standard_normal(n)
    y = 1 + 2 * x1 + r.standard_normal(n)
    rows = ["y,x1,z1,z2"] + [",".join(repr(float(v)) for v in t) for t in zip(y, x1, z1, z2)]
    return write(tmp_path / "d.csv", "\n".join(rows) + "\n")


# ingestion -------------------------------------------------------------------------

def test_ingest_small(tmp_path):
    p = write(tmp_path / "a.csv", "y,x1\n1,2\n3,4\n5,6.5e0\n")
    d = ingest_csv(p, ColumnMapping("y", ("x1",)))
    assert (d.n, d.p) == (3, 1)
    d = ingest_csv(p, ColumnMapping("y", ("x1",), intercept=True))
    assert d.p == 2 and np.all(d.X[:, 0] == 1.0)


def test_ingest_blank_cell(tmp_path):
    p = write(tmp_path / "a.csv", "y,x1\n1,2\n3,\n")
    with pytest.raises(ParseError) as exc:
        ingest_csv(p, ColumnMapping("y", ("x1",)))
    assert (exc.value.row, exc.value.col) == (2, "x1")


def test_ingest_non_numeric_and_missing(tmp_path):
    p = write(tmp_path / "a.csv", "y,x1\n1,2\n3,abc\n")
    with pytest.raises(NonNumericCell):
        ingest_csv(p, ColumnMapping("y", ("x1",)))
    with pytest.raises(MissingColumn):
        ingest_csv(p, ColumnMapping("y", ("x9",)))
    q = write(tmp_path / "b.csv", "y,x1\n1,2,3\n")
    with pytest.raises(ParseError):
        ingest_csv(q, ColumnMapping("y", ("x1",)))


def test_ingest_wide_iv_schema(tmp_path):
    # education, 9 birth-year dummies; 30 quarter-by-year interactions + the 9 dummies
    n = 50
    r = np.random.default_rng(1)
    yob = r.integers(0, 10, n)
    qob = r.integers(0, 4, n)
    cols = {"wage": r.standard_normal(n), "edu": r.integers(8, 18, n).astype(float)}
    for k in range(1, 10):
        cols[f"yob{k}"] = (yob == k).astype(float)
    for q in range(1, 4):
        for k in range(10):
            cols[f"q{q}y{k}"] = ((qob == q) & (yob == k)).astype(float)
    names = list(cols)
    lines = [",".join(names)] + [",".join(repr(float(cols[c][i])) for c in names) for i in range(n)]
    p = write(tmp_path / "ak.csv", "\n".join(lines) + "\n")
    dummies = tuple(f"yob{k}" for k in range(1, 10))
    inter = tuple(f"q{q}y{k}" for q in range(1, 4) for k in range(10))
    d = ingest_csv(p, ColumnMapping("wage", dummies + ("edu",), dummies + inter, intercept=True))
    assert (d.p, d.q) == (11, 40)


@given(st.lists(st.tuples(*[st.floats(-1e200, 1e200, allow_nan=False, allow_infinity=False)] * 4),
                min_size=1, max_size=20))
def test_round_trip(tmp_path_factory, rows):
    arr = np.array(rows)
    d = DataBundle(arr[:, 0], arr[:, 1:3], arr[:, 3:])
    path = tmp_path_factory.mktemp("rt") / "b.csv"
    mapping = write_bundle(path, d)
    back = ingest_csv(path, mapping)
    for a, b in ((d.y, back.y), (d.X, back.X), (d.Z, back.Z)):
        assert np.array_equal(a, b)


# configuration ----------------------------------------------------------------------

def test_config_precedence(tmp_path):
    cfg = write(tmp_path / "c.cfg", "# comment\nrule = m3\nn = 1000\ntau = 4  # trailing\n")
    eff = resolve("size", {"n": 247199, "tau": None}, cfg)
    assert eff["n"] == 247199 and eff["tau"] == 4.0 and eff["rule"] == "m3"
    assert eff["alpha"] == 0.05


def test_config_unknown_key(tmp_path):
    cfg = write(tmp_path / "c.cfg", "bogus = 1\n")
    with pytest.raises(ConfigError) as exc:
        resolve("size", {}, cfg)
    assert exc.value.key == "bogus"
    cfg2 = write(tmp_path / "d.cfg", "n = many\n")
    with pytest.raises(ConfigError):
        resolve("size", {}, cfg2)


def test_config_hash_stable():
    a = config_hash("size", {"n": 1, "tau": 2.0})
    assert a == config_hash("size", {"tau": 2.0, "n": 1}) and len(a) == 16
    assert a != config_hash("size", {"n": 2, "tau": 2.0})


# commands -------------------------------------------------------------------------

def test_size_m3(capsys):
    assert main(["size", "--rule", "m3", "--n", "247199", "--alpha", "0.05", "--gamma", "0.8", "--tau", "10"]) == 0
    assert capsys.readouterr().out.strip() == "15283"


def test_size_other_rules(capsys):
    assert main(["size", "--rule", "cs-bound", "--p", "11", "--q", "40"]) == 0
    assert main(["size", "--rule", "m1", "--q", "40"]) == 0
    assert main(["size", "--rule", "m2", "--m1", "500", "--se", "0.1", "--effect", "0.1"]) == 0
    assert capsys.readouterr().out.split() == ["295200", "148", "3092"]


def test_exit_codes(tmp_path, capsys):
    assert main(["size", "--rule", "m3"]) == 1                 # missing required value
    assert main(["size", "--rule", "m1", "--q", "1"]) == 1     # out of domain
    assert main(["fit", "--data", str(tmp_path / "none.csv"), "--response", "y", "--regressors", "x"]) == 2
    p = write(tmp_path / "a.csv", "y,x1,x2\n1,1,2\n2,2,4\n3,3,6\n")
    assert main(["fit", "--data", p, "--response", "y", "--regressors", "x1,x2"]) == 3  # rank deficient
    with pytest.raises(SystemExit) as exc:
        main(["size", "--no-such-flag"])
    assert exc.value.code == 1
    capsys.readouterr()


def test_verify_exit_codes(capsys):
    assert main(["verify", "--scheme", "countsketch", "--what", "rp-conditions", "--n", "32", "--m", "8",
                 "--reps", "500"]) == 0
    # SRFT rows are probes and do not fail the command
    assert main(["verify", "--scheme", "srft", "--what", "rp-conditions", "--n", "32", "--m", "8",
                 "--reps", "500"]) == 0
    # a standardized mean of a non-null quantity must fail: 4 rows of Bernoulli MSE
    # with a limit of 3 evaluated at a ratio that strongly biases it
    assert main(["verify", "--what", "mse", "--scheme", "bernoulli", "--uv", "gaussian_equal",
                 "--n", "1000", "--m", "100", "--reps", "4000"]) == 4
    capsys.readouterr()


def test_fit_outputs_and_equivalences(data_csv, tmp_path, capsys):
    base = ["fit", "--data", data_csv, "--response", "y", "--regressors", "x1", "--intercept"]
    assert main(base + ["--out", str(tmp_path / "full.json")]) == 0
    assert main(base + ["--scheme", "bernoulli", "--m", "400", "--out", str(tmp_path / "b.json")]) == 0
    full = json.loads((tmp_path / "full.json").read_text())
    bern = json.loads((tmp_path / "b.json").read_text())
    assert full["beta"] == bern["beta"] and full["se0"] == bern["se0"] and full["se1"] == bern["se1"]
    assert full["version"] == __version__ and full["seed"] == 1 and len(full["config_hash"]) == 16
    for i in range(2):
        assert main(base + ["--scheme", "countsketch", "--m", "60", "--seed", "5",
                            "--out", str(tmp_path / f"cs{i}.json")]) == 0
    assert (tmp_path / "cs0.json").read_text() == (tmp_path / "cs1.json").read_text()
    out = capsys.readouterr().out
    assert "s.e.0" in out and "s.e.1" in out and "(intercept)" in out


def test_fit_exact_fixture_has_zero_se(tmp_path, capsys):
    p = write(tmp_path / "e.csv", "y,x1\n1,0\n3,1\n5,2\n7,3\n")
    out = tmp_path / "e.json"
    assert main(["fit", "--data", p, "--response", "y", "--regressors", "x1", "--intercept", "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    np.testing.assert_allclose(res["beta"], [1, 2], atol=1e-12)
    np.testing.assert_allclose(res["se0"] + res["se1"], 0, atol=1e-7)
    capsys.readouterr()


def test_fit_tsls_default_with_instruments(data_csv, tmp_path, capsys):
    out = tmp_path / "iv.json"
    assert main(["fit", "--data", data_csv, "--response", "y", "--regressors", "x1", "--instruments", "z1,z2",
                 "--intercept", "--cov", "robust", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["estimator"] == "tsls"
    assert "s.e.0" not in capsys.readouterr().out


def test_sketch_command(data_csv, tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sketch", "--data", data_csv, "--m", "25", "--seed", "3", "--out", str(a)]) == 0
    assert main(["sketch", "--data", data_csv, "--m", "25", "--seed", "3", "--stream", "--out", str(b)]) == 0
    assert a.read_text() == b.read_text()
    assert len(a.read_text().splitlines()) == 26
    assert main(["sketch", "--data", data_csv, "--m", "25", "--scheme", "srht", "--stream", "--out", str(b)]) == 1
    capsys.readouterr()


def test_simulate_smoke(tmp_path, capsys):
    out = tmp_path / "sim.csv"
    cfg = write(tmp_path / "sim.cfg", "reps = 10\nn = 2000\nm = 100\nthreads = 1\n")
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    text = out.read_text()
    assert "seed=1" in text and "config_hash=" in text
    assert ",10,0" in text  # reps column of each cell
    assert "replications: 10" in capsys.readouterr().out


def test_audit_command(tmp_path, capsys):
    out = tmp_path / "audit.csv"
    assert main(["audit", "--schemes", "countsketch", "--plans", "5", "--n", "1024", "--m", "512",
                 "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("scheme,plan_index,seed,eps1,eps2,eps3")
    assert len(lines) == 6
    capsys.readouterr()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "sketchreg", "size", "--rule", "s"], capture_output=True, text=True)
    assert r.returncode == 0 and "S^2 = 6.18" in r.stdout

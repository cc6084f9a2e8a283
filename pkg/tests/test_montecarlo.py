import math

import numpy as np
import pytest

from sketchreg.errors import OutOfDomain, UnsupportedScheme
from sketchreg.estimators import DataBundle, EstimatorKind, fit_ols, fit_tsls
from sketchreg.linalg import RngStream
from sketchreg.montecarlo import (
    Design,
    DgpSpec,
    FirstStageF,
    SimCell,
    TTest,
    ar1_cov,
    gen_endogenous,
    gen_exogenous,
    run_size_power,
    theoretical_covariances,
)


def test_spec_defaults():
    s = DgpSpec()
    np.testing.assert_array_equal(s.beta, [0, 1, 1, 1, 1, 1])
    e = DgpSpec(Design.ENDOGENOUS, zeta_excluded=0.5)
    assert e.zeta.shape == (21,) and e.zeta[0] == 0.0 and np.all(e.zeta[1:5] == 0.1)
    assert np.all(e.zeta[5:] == 0.5)
    np.testing.assert_array_equal(e.excluded, np.arange(5, 21))
    with pytest.raises(OutOfDomain):
        DgpSpec(Design.ENDOGENOUS, p=6, q=4)


def test_exogenous_homoskedastic_noise():
    spec = DgpSpec(n=100_000)
    d = gen_exogenous(spec, RngStream(1))
    e = d.y - d.X @ spec.beta
    assert e.var() == pytest.approx(1.0, abs=0.02)
    assert np.all(d.X[:, 0] == 1.0)
    np.testing.assert_allclose(np.cov(d.X[:, 1:].T), ar1_cov(5, 0.5), atol=0.02)


def test_exogenous_heteroskedastic_noise_tracks_last_regressor():
    spec = DgpSpec(hetero=True, n=100_000)
    d = gen_exogenous(spec, RngStream(2))
    e = d.y - d.X @ spec.beta
    assert np.corrcoef(e**2, d.X[:, -1] ** 2)[0, 1] > 0


def test_exogenous_ols_is_consistent():
    spec = DgpSpec(n=100_000)
    f = fit_ols(gen_exogenous(spec, RngStream(3)))
    assert np.all(np.abs(f.beta - spec.beta) <= 3 * f.se_homo)


def test_endogenous_structure():
    spec = DgpSpec(Design.ENDOGENOUS, n=50_000, zeta_excluded=0.0)
    d = gen_endogenous(spec, RngStream(4))
    np.testing.assert_array_equal(d.X[:, :5], d.Z[:, :5])
    # under the null design the excluded instruments carry no first-stage signal
    first = fit_ols(DataBundle(d.X[:, -1], d.Z))
    assert np.all(np.abs(first.beta[spec.excluded]) <= 4 * first.se_homo[spec.excluded])


def test_endogenous_ols_biased_tsls_consistent():
    spec = DgpSpec(Design.ENDOGENOUS, n=100_000, zeta_excluded=0.5)
    d = gen_endogenous(spec, RngStream(5))
    ols = fit_ols(d)
    iv = fit_tsls(d)
    assert abs(ols.beta[-1] - 1.0) > 10 * ols.se_homo[-1]
    assert abs(iv.beta[-1] - 1.0) <= 3 * iv.se_homo[-1]


def test_generators_check_design():
    with pytest.raises(OutOfDomain):
        gen_endogenous(DgpSpec(), RngStream(0))
    with pytest.raises(OutOfDomain):
        gen_exogenous(DgpSpec(Design.ENDOGENOUS), RngStream(0))


def test_theoretical_covariances_homoskedastic():
    spec = DgpSpec()
    cov = theoretical_covariances(spec)
    Sigma = np.eye(6)
    Sigma[1:, 1:] = ar1_cov(5, 0.5)
    np.testing.assert_allclose(cov["V0"], np.linalg.inv(Sigma), atol=1e-12)
    np.testing.assert_allclose(cov["V1"], cov["V0"], atol=1e-12)


def test_theoretical_covariances_match_sample_sandwich():
    spec = DgpSpec(hetero=True, n=200_000)
    cov = theoretical_covariances(spec)
    f = fit_ols(gen_exogenous(spec, RngStream(6)))
    assert f.cov_robust[-1, -1] * spec.n == pytest.approx(cov["V1"][-1, -1], rel=0.1)
    assert f.cov_homo[-1, -1] * spec.n == pytest.approx(cov["V0"][-1, -1], rel=0.1)


def test_simcell_rates():
    c = SimCell("x", "size", "se0", 5, 100, 0)
    assert c.rate == 0.05
    assert c.mc_se == pytest.approx(math.sqrt(0.05 * 0.95 / 100))


def test_smoke_table_and_determinism(tmp_path):
    spec = DgpSpec(n=2000)
    args = (spec, ["bernoulli", "leverage", "countsketch"], 100, 10, TTest(1.0, 1.1), RngStream(7))
    a = run_size_power(*args, workers=1)
    b = run_size_power(*args, workers=2)
    assert a.replications == 10
    assert [c.__dict__ for c in a.cells] == [c.__dict__ for c in b.cells]
    for c in a.cells:
        assert 0.0 <= c.rate <= 1.0 and c.reps + c.failures == 10
    a.write_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().count("\n") == 1 + len(a.cells)
    assert "countsketch" in a.format()


def test_power_exceeds_size():
    spec = DgpSpec(n=5000)
    reps = 300
    tab = run_size_power(spec, ["uniform", "countsketch", "srht"], 300, reps, TTest(1.0, 1.2), RngStream(8))
    for s in tab.schemes:
        for cov in ("se0", "se1"):
            size, power = tab.cell(s, "size", cov), tab.cell(s, "power", cov)
            assert power.rate + 2 * math.hypot(size.mc_se, power.mc_se) >= size.rate


def test_failures_counted_not_dropped():
    # Bernoulli with m close to p sometimes keeps fewer than p rows
    spec = DgpSpec(n=200)
    tab = run_size_power(spec, ["bernoulli"], 6, 200, TTest(), RngStream(9))
    cell = tab.cell("bernoulli", "size", "se0")
    assert cell.failures > 0 and cell.reps + cell.failures == 200


def test_ftest_and_tsls_smoke():
    spec = DgpSpec(Design.ENDOGENOUS, n=3000)
    f = run_size_power(spec, ["countsketch", "uniform"], 200, 5, FirstStageF(), RngStream(10))
    assert f.metadata["test"] == "FirstStageF"
    iv = DgpSpec(Design.ENDOGENOUS, n=3000, zeta_excluded=0.5)
    t = run_size_power(iv, ["srft"], 200, 5, TTest(1.0, 1.05, estimator=EstimatorKind.TSLS), RngStream(11))
    assert t.replications == 5


def test_run_size_power_guards():
    with pytest.raises(UnsupportedScheme):
        run_size_power(DgpSpec(Design.ENDOGENOUS), ["leverage"], 100, 1, TTest(), RngStream(0))
    with pytest.raises(OutOfDomain):
        run_size_power(DgpSpec(), ["uniform"], 100, 1, FirstStageF(), RngStream(0))
    with pytest.raises(OutOfDomain):
        run_size_power(DgpSpec(Design.ENDOGENOUS), ["uniform"], 10, 1, FirstStageF(), RngStream(0))

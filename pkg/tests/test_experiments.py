import math

import numpy as np
import pytest

from neuropdmp import (ModelParams, StudyConfig, linear_rate, run_study)
from neuropdmp.experiments import (StudyError, clt_study, ergodic_study,
                                   exchange_study, invariant_density_study,
                                   jump_chain_study, likelihood_study,
                                   rate_study, scv_study)


@pytest.fixture(scope="module")
def base(params5, rate_id):
    def make(**kw):
        kw.setdefault("params", params5)
        kw.setdefault("rate", rate_id)
        return StudyConfig(**kw)
    return make


class TestStudyConfig:
    def test_validation(self, base):
        with pytest.raises(StudyError):
            base(kind="nope")
        with pytest.raises(StudyError):
            base(kind="rate", replications=0, points=(0.25,))
        with pytest.raises(StudyError):
            base(kind="rate", points=())
        with pytest.raises(StudyError):
            base(kind="rate", points=(1.0,))  # excluded around m
        with pytest.raises(StudyError):
            base(kind="clt", horizons=(-1.0,), points=(0.25,))

    def test_kernel_default(self, base):
        cfg = base(kind="exchange")
        assert cfg.kernel.family == "epanechnikov"


class TestRateStudy:
    def test_flat_rate_unbiased(self):
        """N=1 with a table rate flat around the evaluation point: the
        error is pure MC noise (no smoothing bias), so the mean estimate
        matches the flat level within 3 standard errors."""
        params = ModelParams(n_neurons=1, lam=1.0, m=4.0, k_max=8.0)
        from neuropdmp import table_rate
        from neuropdmp.experiments import _rate_rep
        f = table_rate([0.0, 0.2, 7.6, 8.0], [0.0, 0.5, 0.5, 0.6], beta=0.5)
        cfg = StudyConfig(kind="rate", params=params, rate=f,
                          horizons=(500.0, 2000.0), replications=50,
                          points=(1.0,), d=2.5, seed=1)
        res = rate_study(cfg)
        for row in res.rows:
            assert row["kept"] == 50 and row["discarded"] == 0
            assert math.isfinite(row["rmse"]) and row["rmse"] < 0.6
        t, h = 2000.0, res.rows[-1]["h"]
        vals = np.array([_rate_rep((cfg, t, h, 1.0, 1000 + r))[0]
                         for r in range(50)])
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - 0.5) <= 3.0 * se

    def test_single_horizon_no_slope(self, base):
        cfg = base(kind="rate", horizons=(30.0,), replications=5,
                   points=(0.25,), seed=1)
        res = rate_study(cfg)
        assert res.summary["slope"] is None

    def test_reproducible(self, base):
        cfg = base(kind="rate", horizons=(20.0, 40.0), replications=6,
                   points=(0.25,), seed=9)
        assert rate_study(cfg).rows == rate_study(cfg).rows


class TestCltStudy:
    def test_undersmoothing_enforced(self, base):
        cfg = base(kind="clt", horizons=(50.0,), replications=10,
                   points=(0.25,), bandwidth_exponent=0.2)
        with pytest.raises(StudyError):
            clt_study(cfg)

    def test_outputs(self, base):
        cfg = base(kind="clt", horizons=(80.0,), replications=60,
                   points=(0.25,), seed=2)
        res = clt_study(cfg)
        assert 0.0 <= res.summary["ks_pvalue"] <= 1.0
        assert res.summary["dropped"] + len(res.rows) == 60
        assert abs(res.summary["mean"]) < 1.0


class TestErgodicStudy:
    def test_decays(self, base):
        cfg = base(kind="ergodic", replications=600, seed=3,
                   times=(0.5, 3.0, 6.0, 12.0))
        res = ergodic_study(cfg)
        tvs = [r["tv"] for r in res.rows]
        assert tvs[0] > 0.5           # extreme starts disagree early
        assert tvs[-1] < tvs[0] / 2   # and mix later

    def test_degenerate_single_bin(self, base):
        cfg = base(kind="ergodic", replications=20, bins=1, seed=3,
                   times=(1.0, 2.0, 3.0))
        res = ergodic_study(cfg)
        assert res.summary["degenerate"]
        assert all(r["tv"] == 0.0 for r in res.rows)


class TestExchangeStudy:
    def test_uniform_counts(self, base):
        cfg = base(kind="exchange", horizons=(150.0,), replications=4, seed=4)
        res = exchange_study(cfg)
        assert res.summary["pvalue"] > 1e-4
        assert sum(r["count"] for r in res.rows) == res.summary["total"]


class TestJumpChainStudy:
    def test_identity_within_se(self, base):
        cfg = base(kind="jumpchain", horizons=(200.0,), seed=5,
                   test_powers=(0, 1, 2))
        res = jump_chain_study(cfg)
        const = res.rows[0]
        assert const["gap"] == 0.0 and const["se"] == 0.0  # g == 1 exact
        for row in res.rows[1:]:
            assert row["within_3se"]

    def test_short_run_rejected(self, base):
        cfg = base(kind="jumpchain", horizons=(1.0,), seed=5)
        with pytest.raises(StudyError):
            jump_chain_study(cfg)


class TestInvariantDensityStudy:
    def test_mass_and_positivity(self, base):
        cfg = base(kind="density", horizons=(400.0,), seed=6, grid_size=161)
        res = invariant_density_study(cfg)
        assert res.summary["mass_ok"], res.summary["mass"]
        assert res.summary["region_positive"]
        assert res.summary["region_points"] > 0


class TestLikelihoodStudy:
    def test_martingale_and_boundedness(self, params10, rate_id):
        cfg = StudyConfig(kind="likelihood", params=params10, rate=rate_id,
                          horizons=(8.0, 16.0), replications=150,
                          points=(1.5,), seed=7)
        res = likelihood_study(cfg)
        assert res.summary["martingale_ok"]
        assert all(math.isfinite(r["mean_abs_llr"]) for r in res.rows)


class TestScvStudy:
    def test_outputs(self, base):
        cfg = base(kind="scv", horizons=(300.0,), replications=4,
                   points=(0.25,), seed=8)
        res = scv_study(cfg)
        s = res.summary
        assert s["grid_lo"] <= s["h_hat_median"] <= s["grid_hi"]
        assert s["rmse_ratio"] > 0
        assert len(res.rows) == 4


class TestPlumbing:
    def test_csv_and_json_write(self, base, tmp_path):
        cfg = base(kind="exchange", horizons=(50.0,), replications=2, seed=1)
        res = run_study(cfg)
        res.write(tmp_path / "out")
        lines = (tmp_path / "out.csv").read_text().splitlines()
        assert lines[0] == "neuron,count"
        assert len(lines) == 6
        import json
        summary = json.loads((tmp_path / "out.json").read_text())
        assert summary["kind"] == "exchange"

    def test_threads_match_serial(self, base):
        kw = dict(kind="rate", horizons=(15.0, 30.0), replications=4,
                  points=(0.25,), seed=11)
        serial = run_study(base(**kw, threads=1))
        parallel = run_study(base(**kw, threads=2))
        assert serial.rows == parallel.rows

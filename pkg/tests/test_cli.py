import json

import numpy as np
import pytest

from neuropdmp.cli import ConfigError, load_config, main


def _config(**over):
    cfg = {
        "schema-version": 1,
        "model": {"n_neurons": 5, "lam": 1.0, "m": 1.0, "k_max": 2.0},
        "rate": {"family": "linear", "scale": 1.0, "beta": 1.0},
        "kernel": {"family": "epanechnikov", "order": 1},
        "sim": {"horizon": 30.0, "seed": 7},
        "study": {},
        "seed": 7,
    }
    cfg.update(over)
    return cfg


@pytest.fixture
def cfg_path(tmp_path):
    def write(name="cfg.json", **over):
        p = tmp_path / name
        p.write_text(json.dumps(_config(**over)))
        return str(p)
    return write


class TestLoadConfig:
    def test_valid(self, cfg_path):
        cfg = load_config(cfg_path())
        assert cfg.params.n_neurons == 5
        assert cfg.rate(1.0) == pytest.approx(1.0)
        assert cfg.kernel.family == "epanechnikov"
        assert cfg.seed == 7

    def test_schema_version_enforced(self, cfg_path):
        with pytest.raises(ConfigError):
            load_config(cfg_path(**{"schema-version": 2}))
        with pytest.raises(ConfigError):
            load_config(cfg_path(**{"schema-version": None}))

    def test_missing_file_and_bad_json(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_invalid_model_block(self, cfg_path):
        with pytest.raises(ConfigError):
            load_config(cfg_path(model={"n_neurons": 0, "lam": 1.0,
                                        "m": 1.0, "k_max": 2.0}))
        with pytest.raises(ConfigError):
            load_config(cfg_path(model={"lam": 1.0}))

    def test_unknown_rate_family(self, cfg_path):
        with pytest.raises(ConfigError):
            load_config(cfg_path(rate={"family": "cubic"}))

    def test_table_rate(self, cfg_path):
        cfg = load_config(cfg_path(rate={"family": "table",
                                         "x": [0.0, 1.0, 2.0],
                                         "y": [0.0, 0.5, 1.0]}))
        assert cfg.rate(1.0) == pytest.approx(0.5)

    def test_kernel_order_must_match_smoothness(self, cfg_path):
        # beta = 2.5 needs vanishing moments up to order 2
        path = cfg_path(rate={"family": "linear", "beta": 2.5},
                        kernel={"family": "epanechnikov", "order": 1})
        with pytest.raises(ConfigError):
            load_config(path)
        ok = cfg_path(name="ok.json",
                      rate={"family": "linear", "beta": 2.5},
                      kernel={"family": "highorder", "order": 2})
        assert load_config(ok).kernel.order == 2

    def test_study_points_region_checked(self, cfg_path):
        with pytest.raises(ConfigError):
            load_config(cfg_path(study={"points": [1.0]}))  # at m
        cfg = load_config(cfg_path(study={"points": [0.25]}))
        assert cfg.study["points"] == [0.25]

    def test_nonpositive_horizon(self, cfg_path):
        with pytest.raises(ConfigError):
            load_config(cfg_path(sim={"horizon": 0.0}))


class TestSimulateCommand:
    def test_writes_log_and_reruns_identically(self, cfg_path, tmp_path,
                                               capsys):
        cfg = cfg_path()
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["simulate", "--config", cfg, "--out", str(out1)]) == 0
        assert main(["simulate", "--config", cfg, "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        assert "jumps=" in capsys.readouterr().out

    def test_seed_override_changes_output(self, cfg_path, tmp_path):
        cfg = cfg_path()
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["simulate", "--config", cfg, "--out", str(out1)])
        main(["simulate", "--config", cfg, "--out", str(out2),
              "--seed", "99"])
        assert out1.read_bytes() != out2.read_bytes()

    def test_no_clobber(self, cfg_path, tmp_path, capsys):
        cfg = cfg_path()
        out = tmp_path / "a.csv"
        assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
        code = main(["simulate", "--config", cfg, "--out", str(out),
                     "--no-clobber"])
        assert code == 2
        assert "refusing to overwrite" in capsys.readouterr().err

    def test_missing_horizon(self, cfg_path, capsys):
        cfg = cfg_path(sim={})
        assert main(["simulate", "--config", cfg]) == 2
        assert "horizon" in capsys.readouterr().err


@pytest.fixture
def sim_log(cfg_path, tmp_path):
    cfg = cfg_path()
    out = tmp_path / "run.csv"
    main(["simulate", "--config", cfg, "--out", str(out)])
    return cfg, str(out)


class TestEstimateCommand:
    def test_fixed_bandwidth(self, sim_log, capsys):
        cfg, log = sim_log
        assert main(["estimate", "--config", cfg, "--log", log,
                     "--a", "0.25", "--h", "0.2"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("a,h,t,")
        row = out[1].split(",")
        assert float(row[0]) == 0.25 and float(row[1]) == 0.2
        assert float(row[5]) >= 0.0  # f_hat

    def test_region_refusal_and_force(self, sim_log, capsys):
        cfg, log = sim_log
        assert main(["estimate", "--config", cfg, "--log", log,
                     "--a", "1.0", "--h", "0.2"]) == 2
        assert "admissible" in capsys.readouterr().err
        assert main(["estimate", "--config", cfg, "--log", log,
                     "--a", "1.0", "--h", "0.2", "--force"]) == 0

    def test_auto_bandwidth(self, sim_log, capsys):
        cfg, log = sim_log
        assert main(["estimate", "--config", cfg, "--log", log,
                     "--a", "0.25", "--h", "auto"]) == 0
        row = capsys.readouterr().out.splitlines()[1].split(",")
        assert float(row[1]) > 0.0

    def test_writes_out_file(self, sim_log, tmp_path):
        cfg, log = sim_log
        dest = tmp_path / "est.csv"
        main(["estimate", "--config", cfg, "--log", log,
              "--a", "0.25", "--h", "0.2", "--out", str(dest)])
        lines = dest.read_text().splitlines()
        assert len(lines) == 2

    def test_missing_args(self, sim_log):
        cfg, _ = sim_log
        assert main(["estimate", "--config", cfg, "--a", "0.5"]) == 2


class TestScvCommand:
    def test_curve_output(self, sim_log, tmp_path, capsys):
        cfg, log = sim_log
        dest = tmp_path / "curve.csv"
        assert main(["scv", "--config", cfg, "--log", log,
                     "--out", str(dest)]) == 0
        assert "h_hat=" in capsys.readouterr().out
        lines = dest.read_text().splitlines()
        assert lines[0] == "h,scv_score"
        assert len(lines) == 33
        h, s = lines[1].split(",")
        assert float(h) > 0 and np.isfinite(float(s))


class TestStudyCommand:
    def test_exchange_study_writes_tables(self, cfg_path, tmp_path, capsys):
        cfg = cfg_path(study={"horizons": [40.0], "replications": 2})
        base = tmp_path / "res" / "exchange"
        assert main(["study", "exchange", "--config", cfg,
                     "--out", str(base)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["kind"] == "exchange"
        assert (tmp_path / "res" / "exchange.csv").exists()
        assert json.loads((tmp_path / "res" / "exchange.json").read_text())[
            "kind"] == "exchange"

    def test_unknown_kind_rejected_by_parser(self, cfg_path):
        with pytest.raises(SystemExit):
            main(["study", "nope", "--config", cfg_path()])

    def test_no_clobber(self, cfg_path, tmp_path):
        cfg = cfg_path(study={"horizons": [40.0], "replications": 2})
        base = tmp_path / "exchange"
        assert main(["study", "exchange", "--config", cfg,
                     "--out", str(base)]) == 0
        assert main(["study", "exchange", "--config", cfg,
                     "--out", str(base), "--no-clobber"]) == 2

    def test_study_options_forwarded(self, cfg_path, tmp_path, capsys):
        cfg = cfg_path(study={"horizons": [40.0], "replications": 30,
                              "times": [1.0, 4.0], "bins": 16})
        assert main(["study", "ergodic", "--config", cfg,
                     "--out", str(tmp_path / "erg")]) == 0
        lines = (tmp_path / "erg.csv").read_text().splitlines()
        assert len(lines) == 3  # header + one row per comparison time

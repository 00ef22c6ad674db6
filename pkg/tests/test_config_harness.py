import math

import numpy as np
import pytest

from dopplersync import cli, harness
from dopplersync.config import DEFAULTS, ConfigError, SimConfig, format_value, parse_config

SMALL = {"sim.seed": 11, "sim.n_bursts": 6, "sim.n_frames": 6}


class TestConfig:
    def test_defaults(self):
        c = SimConfig()
        assert c.pf_config().n_particles == 400
        assert c.rw_config().n_q == 100
        assert c.prior().omega_max == 0.01

    def test_parse(self):
        c = parse_config("# comment\n\nsim.snr_db = 2, 4.5\npf.fine_tune = off  # trailing\nsim.seed = 0x10\n")
        assert c["sim.snr_db"] == (2.0, 4.5)
        assert c["pf.fine_tune"] is False
        assert c["sim.seed"] == 16

    @pytest.mark.parametrize("text,line", [
        ("sim.seed = 1\nbogus.key = 3\n", 2),
        ("sim.seed = 1\nsim.seed = 2\n", 2),
        ("just words\n", 1),
        ("sim.seed = abc\n", 1),
        ("pf.fine_tune = maybe\n", 1),
    ])
    def test_errors_have_line_numbers(self, text, line):
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert exc.value.line == line

    def test_validation(self):
        with pytest.raises(ConfigError):
            SimConfig({"fg.estimator": "kalman"})
        with pytest.raises(ConfigError):
            SimConfig({"pf.zeta": -1.0})
        with pytest.raises(ConfigError):
            SimConfig({"channel.n_nodes": 0})

    def test_text_round_trip(self):
        c = SimConfig({"sim.snr_db": (1.0, 2.5), "pf.alpha": 0.25})
        assert parse_config(c.to_text()).values == c.values

    def test_fingerprint_tracks_every_key(self):
        base = SimConfig()
        seen = {base.fingerprint()}
        for key, val in DEFAULTS.items():
            if key == "sim.workers":
                continue
            if isinstance(val, bool):
                new = not val
            elif isinstance(val, float):
                new = val * 0.5
            elif isinstance(val, int):
                new = val * 2
            elif isinstance(val, tuple):
                new = val + (9.0,)
            elif key == "fg.estimator":
                new = "pf"
            elif key == "fg.feedback":
                new = "posterior"
            elif key == "rw.sigma_w_mode":
                new = "uniform_var"
            elif key == "rw.mean_mode":
                new = "linear"
            else:
                new = "x.alist"
            fp = SimConfig({key: new}).fingerprint()
            assert fp not in seen, key
            seen.add(fp)
        assert SimConfig({"sim.workers": 3}).fingerprint() == base.fingerprint()

    def test_format_value(self):
        assert format_value(True) == "true"
        assert format_value((1.0, 2.0)) == "1.0,2.0"


class TestHarness:
    def test_crossing_snr(self):
        assert harness.crossing_snr([0, 1, 2], [1e-1, 1e-2, 1e-3], 1e-2) == pytest.approx(1.0)
        assert harness.crossing_snr([0, 1], [1e-1, 1e-3], 1e-2) == pytest.approx(0.5)
        assert math.isnan(harness.crossing_snr([0, 1], [1e-1, 5e-2], 1e-3))

    def test_mean_and_se(self):
        m, se = harness.mean_and_se([1.0, 2.0, 3.0, 4.0])
        assert m == 2.5 and se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)

    def test_se_shrinks_with_bursts(self):
        c = SimConfig(SMALL)
        se = []
        for n in (8, 16, 32):
            rows = harness.run_mse(c, [2.0], n)
            se.append(next(r.std_error for r in rows if r.metric == "mse_omega"))
        assert se[2] < se[0]

    def test_mse_rows(self):
        rows = harness.run_mse(SimConfig(SMALL), [4.0, 6.0])
        metrics = {(r.snr_db, r.metric) for r in rows}
        for snr in (4.0, 6.0):
            for m in ("mse_theta", "mse_omega", "mse_epsilon", "failures", "jcrb_theta", "wbcrb_epsilon"):
                assert (snr, m) in metrics
        assert all(math.isfinite(r.value) for r in rows)

    def test_ber_genie_dominance_and_iteration_rows(self):
        c = SimConfig(dict(SMALL, **{"fg.global_iters": 2}))
        rows = harness.run_ber(c, [0.0, 1.0], 8)
        for snr in (0.0, 1.0):
            est = next(r.value for r in rows if r.snr_db == snr and r.metric == "ber" and r.index == 1)
            gen = next(r.value for r in rows if r.snr_db == snr and r.metric == "ber_genie" and r.index == 1)
            assert est >= gen
        assert {r.index for r in rows} == {1, 2}

    def test_iteration_row_equals_shorter_run(self):
        c4 = SimConfig(dict(SMALL, **{"fg.global_iters": 3}))
        c1 = SimConfig(dict(SMALL, **{"fg.global_iters": 1}))
        r4 = [r for r in harness.run_ber(c4, [1.0], 6, genie=False) if r.metric == "ber" and r.index == 1]
        r1 = [r for r in harness.run_ber(c1, [1.0], 6, genie=False) if r.metric == "ber" and r.index == 1]
        assert r4[0].value == r1[0].value

    def test_workers_do_not_change_results(self, tmp_path):
        c1 = SimConfig(SMALL)
        c2 = SimConfig(dict(SMALL, **{"sim.workers": 2}))
        a = harness.csv_text(harness.run_mse(c1, [3.0], 5), c1)
        b = harness.csv_text(harness.run_mse(c2, [3.0], 5), c2)
        assert a == b

    def test_rerun_byte_identical(self, tmp_path):
        c = SimConfig(SMALL)
        p1 = harness.emit_csv(harness.run_ber(c, [2.0], 4), tmp_path / "a.csv", c)
        p2 = harness.emit_csv(harness.run_ber(c, [2.0], 4), tmp_path / "b.csv", c)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_csv_header_and_read_back(self, tmp_path):
        c = SimConfig(SMALL)
        rows = harness.bound_rows(c, [0.0, 3.0], 534)
        path = harness.emit_csv(rows, tmp_path / "b.csv", c)
        lines = open(path).read().splitlines()
        assert lines[0] == f"# schema: {harness.SCHEMA}"
        assert any("Es/N0" in ln for ln in lines if ln.startswith("#"))
        assert any(ln == "# code_substituted=1" for ln in lines)
        assert harness.csv_text(harness.read_csv(path), c) == open(path).read()

    def test_empty_rows_header_only(self, tmp_path):
        path = harness.emit_csv([], tmp_path / "e.csv")
        body = [ln for ln in open(path).read().splitlines() if not ln.startswith("#")]
        assert body == [",".join(harness.COLUMNS)]

    def test_plotscript_references_csv(self, tmp_path):
        path = harness.emit_csv([], tmp_path / "e.csv")
        script = harness.emit_plotscript([], path)
        text = open(script).read()
        assert "'e.csv'" in text
        compile(text, script, "exec")

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            harness.emit_csv([], tmp_path / "missing" / "x.csv")

    def test_sweeps(self):
        c = SimConfig(SMALL)
        rows = harness.sweep(c, "iters", [1, 2], [1.0], 3)
        assert {r.index for r in rows} == {1, 2}
        rows = harness.sweep(c, "nodes", [1, 2], [1.0], 3)
        assert {r.variant for r in rows} == {"n_nodes=1", "n_nodes=2"}
        rows = harness.sweep(c, "particles", [20], [1.0], 2)
        assert rows[0].variant == "n_particles=20"
        with pytest.raises(ValueError):
            harness.sweep(c, "bogus", [1])

    def test_convergence_rows(self):
        c = SimConfig(dict(SMALL, **{"pf.n_particles": 50}))
        rows = harness.run_convergence(c, 8.0, 2)
        assert {r.variant for r in rows} == {"ft", "no_ft"}
        k0 = [r for r in rows if r.index == 0 and r.metric == "mae_omega"]
        # at symbol 0 the cloud is the prior, so the estimate sits near the prior mean 0
        assert all(abs(r.value - 0.011) < 0.005 for r in k0)

    def test_failures_counted(self, monkeypatch):
        calls = {"n": 0}
        real = harness.make_estimator

        def flaky(cfg, L, estimator=None):
            inner = real(cfg, L, estimator)

            def est(obs, down, rng):
                calls["n"] += 1
                if calls["n"] % 2:
                    raise FloatingPointError("nope")
                return inner(obs, down, rng)
            return est

        monkeypatch.setattr(harness, "make_estimator", flaky)
        rows = harness.run_mse(SimConfig(SMALL), [3.0], 4)
        assert next(r.value for r in rows if r.metric == "failures") == 2
        assert next(r.n_trials for r in rows if r.metric == "mse_theta") == 2


class TestCli:
    def test_bounds(self, tmp_path, capsys):
        rc = cli.main(["bounds", "--snr-list", "0,10", "--frame-len", "100", "--omega-max", "0.02",
                       "--eps-max", "2e-5", "--h", "1.5", "--out", str(tmp_path)])
        assert rc == 0
        rows = harness.read_csv(tmp_path / "bounds.csv")
        assert len(rows) == 12 and {r.snr_db for r in rows} == {0.0, 10.0}
        assert (tmp_path / "bounds_plot.py").exists()

    def test_config_file_and_overrides(self, tmp_path):
        cfgp = tmp_path / "run.cfg"
        cfgp.write_text("sim.n_bursts = 3\nsim.snr_db = 5\n")
        assert cli.main(["mse", "--config", str(cfgp), "--seed", "4", "--out", str(tmp_path)]) == 0
        rows = harness.read_csv(tmp_path / "mse.csv")
        assert {r.seed for r in rows} == {4}
        assert next(r.n_trials for r in rows if r.metric == "mse_theta") == 3

    def test_ber_and_sweep(self, tmp_path):
        cfgp = tmp_path / "run.cfg"
        cfgp.write_text("sim.n_frames = 2\n")
        assert cli.main(["ber", "--config", str(cfgp), "--snr", "2", "--out", str(tmp_path)]) == 0
        assert cli.main(["sweep", "--kind", "iters", "--values", "1,2", "--config", str(cfgp),
                         "--snr", "2", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "sweep_iters.csv").exists()

    def test_bad_config_reports(self, tmp_path, capsys):
        cfgp = tmp_path / "bad.cfg"
        cfgp.write_text("nope = 1\n")
        assert cli.main(["bounds", "--config", str(cfgp), "--out", str(tmp_path)]) == 2
        assert "line 1" in capsys.readouterr().err

    def test_full_flag(self):
        args = cli.build_parser().parse_args(["mse", "--full"])
        assert cli.resolve_config(args)["sim.n_bursts"] == cli.FULL_BURSTS

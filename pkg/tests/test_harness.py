import json
import math

import numpy as np
import pytest
from sklearn.base import clone

from ssmbayes.cli import main
from ssmbayes.estimators import (
    BayesOraclePredictor,
    KalmanPredictor,
    LinearAttentionPredictor,
    NonSelectiveSSMPredictor,
    PooledERMPredictor,
    SelectiveSSMPredictor,
    check_sequences,
)
from ssmbayes.harness.config import Config, ConfigError, parse_config_text
from ssmbayes.harness.curves import FitError, RiskCurve, fit_loglog, mean_se, read_fits, write_fits
from ssmbayes.harness.experiments import Pairing, derive_seed, run_experiment
from ssmbayes.harness.svg import PlotStyle, emit_svg, render_svg
from ssmbayes.lgssm import augment_ar1
from ssmbayes.numerics import make_rng
from ssmbayes.oracle import hmm_filter_batch
from ssmbayes.tasks import CorrNoiseConfig, LgssmPriorConfig, corr_noise_sampler, simulate_corr_noise

K_GRID = (8, 16, 32, 64, 128, 256, 512)


def curve_from(fn, name="p", rho=None):
    c = RiskCurve()
    for k in K_GRID:
        c.add(name, rho, k, fn(k), 0.0, 10)
    return c


class TestFits:
    def test_exact_power_law(self):
        f = fit_loglog(curve_from(lambda k: 4 / k))
        assert f.slope == pytest.approx(-1, abs=1e-12)
        assert f.intercept == pytest.approx(math.log(4), abs=1e-12)
        assert f.r_squared == pytest.approx(1, abs=1e-12)

    def test_constant(self):
        assert fit_loglog(curve_from(lambda k: 0.3)).slope == pytest.approx(0, abs=1e-12)

    def test_floor_flattens_slope(self):
        f = fit_loglog(curve_from(lambda k: 2 / k + 0.5))
        assert -1 < f.slope < 0

    def test_only_large_k_used(self):
        c = curve_from(lambda k: 1e6 if k < 32 else 1 / k)
        assert fit_loglog(c, k_min=32).slope == pytest.approx(-1, abs=1e-12)

    def test_too_few_rows(self):
        c = curve_from(lambda k: 0.0 if k > 64 else 1 / k)
        with pytest.raises(FitError):
            fit_loglog(c)

    def test_single_group_required(self):
        c = curve_from(lambda k: 1 / k)
        c.rows += curve_from(lambda k: 1 / k, name="q").rows
        with pytest.raises(FitError):
            fit_loglog(c)

    def test_fits_csv_roundtrip(self, tmp_path):
        f = fit_loglog(curve_from(lambda k: 4 / k, rho=0.95))
        write_fits(tmp_path / "fits.csv", [f])
        text = (tmp_path / "fits.csv").read_text()
        assert text.splitlines()[0] == "predictor,rho,slope,intercept,r_squared,k_min"
        assert read_fits(tmp_path / "fits.csv") == [f]


class TestRiskCurve:
    def test_k_must_increase(self):
        c = RiskCurve()
        c.add("a", 0.9, 16, 1.0, 0.1, 5)
        c.add("a", 0.95, 8, 1.0, 0.1, 5)
        with pytest.raises(ValueError):
            c.add("a", 0.9, 16, 1.0, 0.1, 5)
        with pytest.raises(ValueError):
            c.add("b", None, 8, 1.0, 0.1, 0)

    def test_csv_roundtrip_is_exact(self, tmp_path):
        c = RiskCurve()
        c.add("oracle", None, 8, 1 / 3, 0.01, 100)
        c.add("erm", 0.95, 8, 2 / 3, float("nan"), 100)
        c.to_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "predictor,rho,k,metric,std_err,n_eval"
        back = RiskCurve.from_csv(tmp_path / "r.csv")
        assert back.rows[0][3] == 1 / 3
        assert back.value("erm", 0.95, 8)[0] == 2 / 3
        assert math.isnan(back.rows[0][1])

    def test_mean_se(self):
        m, se = mean_se([1.0, 2.0, 3.0, 4.0])
        assert m == 2.5
        assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)


class TestSvg:
    def test_deterministic(self, tmp_path):
        c = curve_from(lambda k: 1 / k)
        a = emit_svg(c, tmp_path / "a.svg", PlotStyle(title="t"))
        b = emit_svg(c, tmp_path / "b.svg", PlotStyle(title="t"))
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
        assert a == b

    def test_single_point(self):
        c = RiskCurve()
        c.add("only", None, 8, 0.5, 0.0, 1)
        svg = render_svg(c)
        assert "<polyline" not in svg
        assert svg.count("<circle") == 1

    def test_ticks_follow_k_grid(self):
        svg = render_svg(curve_from(lambda k: 1 / k))
        for k in K_GRID:
            assert f">{k}</text>" in svg

    def test_one_polyline_per_predictor(self):
        c = curve_from(lambda k: 1 / k, name="a")
        c.rows += curve_from(lambda k: 2 / k, name="b").rows
        svg = render_svg(c)
        assert svg.count("<polyline") == 2
        assert ">a</text>" in svg and ">b</text>" in svg

    def test_empty(self):
        with pytest.raises(ValueError):
            render_svg(RiskCurve())


class TestConfig:
    def test_parse(self):
        vals = parse_config_text("# comment\nexp2.rho_grid = 0.9,0.95  # trailing\n\nseed=3\n")
        assert vals == {"exp2.rho_grid": "0.9,0.95", "seed": "3"}
        with pytest.raises(ConfigError):
            parse_config_text("novalue\n")

    def test_types_and_precedence(self):
        cfg = Config.build({"seed": "3", "exp2.rho_grid": "0.9,0.99"}, {"seed": "5"})
        assert cfg["seed"] == 5
        assert cfg["exp2.rho_grid"] == (0.9, 0.99)
        assert cfg.section("exp2")["rho_grid"] == (0.9, 0.99)

    def test_paper_scale_and_override(self):
        cfg = Config.build(paper_scale=True)
        assert cfg["exp1.d"] == 4 and cfg["exp3.n_states"] == 50
        assert Config.build({}, {"exp1.d": "3"}, paper_scale=True)["exp1.d"] == 3

    def test_empty_list(self):
        assert Config.build({}, {"exp2.models": ""})["exp2.models"] == ()

    def test_errors(self):
        with pytest.raises(ConfigError):
            Config.build({"exp9.x": "1"})
        with pytest.raises(ConfigError):
            Config.build({"seed": "abc"})

    def test_dump_reparses(self):
        cfg = Config.build({}, {"exp2.k_grid": "8,16,32"})
        vals = parse_config_text(cfg.dump())
        vals.pop("paper_scale")
        assert Config.build(vals).values == cfg.values


class TestSeedsAndPairing:
    def test_derive_seed(self):
        assert derive_seed(0, 1) == derive_seed(0, 1)
        assert derive_seed(0, 1) != derive_seed(0, 2) != derive_seed(1, 1)
        assert 0 <= derive_seed(7, 3, 2) < 2 ** 63

    def test_pairing(self):
        p = Pairing()
        x = np.arange(6.0)
        p.record("a", x)
        p.record("b", x.copy())
        p.assert_paired("a", "b")
        p.record("c", x + 1)
        with pytest.raises(RuntimeError):
            p.assert_paired("a", "c")


def test_deterministic_hmm_oracle_is_perfect_after_one_step():
    V = 4
    trans = np.roll(np.eye(V), 1, axis=1)[None]
    emit = np.eye(V)[None]
    init = np.full((1, V), 1 / V)
    chars = np.array([[2, 3, 0, 1, 2, 3]])
    dists, _ = hmm_filter_batch(trans, emit, init, chars)
    pred = dists[0].argmax(-1)
    np.testing.assert_array_equal(pred[:-1], chars[0, 1:])


class TestEstimators:
    def test_check_sequences(self):
        x, single = check_sequences(np.zeros((5, 2)))
        assert x.shape == (1, 5, 2) and single
        with pytest.raises(ValueError):
            check_sequences(np.zeros(5))
        with pytest.raises(ValueError):
            check_sequences(np.full((1, 3, 1), np.nan))
        with pytest.raises(ValueError):
            check_sequences(np.zeros((1, 3, 2)), n_features=1)

    def test_erm(self):
        est = PooledERMPredictor(lam=1.0).fit(np.zeros((1, 3, 1)))
        np.testing.assert_allclose(est.predict(np.array([[1.0], [2.0], [3.0]])), [1.5])
        with pytest.raises(ValueError):
            PooledERMPredictor(lam=-1).fit()

    def test_kalman(self):
        p = augment_ar1(0.9, 1.0, 0.95)
        x = simulate_corr_noise(0.9, 1.0, 0.95, 20, make_rng(0), n=3)[0][..., None]
        est = KalmanPredictor(p).fit()
        assert est.predict(x).shape == (3, 1)
        assert est.score(x[:, :-1], x[:, -1]) <= 0
        with pytest.raises(ValueError):
            KalmanPredictor().fit()

    def test_oracle(self):
        est = BayesOraclePredictor(LgssmPriorConfig(d=1, m=1), n_samples=50).fit()
        assert est.predict(np.zeros((4, 1))).shape == (1,)

    @pytest.mark.parametrize("cls", (SelectiveSSMPredictor, NonSelectiveSSMPredictor, LinearAttentionPredictor))
    def test_trainable(self, cls):
        est = cls(steps=3, batch_tasks=4, seq_len=8, random_state=1)
        assert clone(est).get_params() == est.get_params()
        with pytest.raises(Exception):
            est.predict(np.zeros((4, 1)))
        est.fit(sampler=corr_noise_sampler(CorrNoiseConfig()))
        assert est.predict(np.zeros((4, 1))).shape == (1,)
        assert len(est.train_log_.rows) == 1
        corpus = make_rng(0).standard_normal((5, 20, 1))
        again = clone(est).fit(corpus)
        assert again.n_features_in_ == 1
        with pytest.raises(ValueError):
            est.fit(corpus, sampler=corr_noise_sampler(CorrNoiseConfig()))


class TestCli:
    def test_oracle_command(self, tmp_path, capsys):
        ctx = tmp_path / "ctx.txt"
        ctx.write_text("0.1\n0.5  # comment\n-0.3\n")
        assert main(["oracle", str(ctx), "--family", "corr", "--rho", "0.9"]) == 0
        out = float(capsys.readouterr().out.strip())
        from ssmbayes.oracle import bayes_oracle_corr

        assert out == float(bayes_oracle_corr(np.array([0.1, 0.5, -0.3]), 0.9))

    def test_check_command(self, capsys):
        assert main(["check"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 5 and all(line.startswith("PASS") for line in lines)

    def test_bad_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("exp2.nope=1\n")
        assert main(["--config", str(cfg), "check"]) == 2

    def test_flags_after_subcommand(self, tmp_path):
        out = tmp_path / "o"
        argv = ["exp2", "--out", str(out), "--seed", "4", "--set", "exp2.steps=2", "--set", "exp2.models=ssm",
                "--set", "exp2.n_eval=20", "--set", "exp2.k_grid=8,16,32,64", "--set", "exp2.marginal_grid=0"]
        assert main(argv) == 0
        assert (out / "exp2" / "risk_curve.csv").exists()
        manifest = json.loads((out / "exp2" / "run.json").read_text())
        assert "seed=4" in manifest["config"] and "exp2.steps=2" in manifest["config"]


def tiny(name, **extra):
    over = {"seed": "1"}
    if name == "exp1":
        over.update({"exp1.budgets": "2,4,8", "exp1.n_eval": "20", "exp1.n_probe": "5",
                     "exp1.oracle_samples": "50", "exp1.batch_tasks": "4"})
    elif name == "exp2":
        over.update({"exp2.steps": "2", "exp2.n_eval": "30", "exp2.k_grid": "8,16,32,64", "exp2.marginal_grid": "5"})
    else:
        over.update({"exp3.steps": "2", "exp3.n_eval": "10", "exp3.n_probe": "4", "exp3.seq_len": "32",
                     "exp3.k_grid": "8,16", "exp3.embed": "8", "exp3.ffn": "8"})
    over.update(extra)
    return Config.build({}, over)


@pytest.mark.parametrize("name", ("exp1", "exp2", "exp3"))
def test_experiment_outputs(name, tmp_path):
    res = run_experiment(name, tiny(name), tmp_path)
    header = (tmp_path / "risk_curve.csv").read_text().splitlines()[0]
    assert header == "predictor,rho,k,metric,std_err,n_eval"
    for log in tmp_path.glob("train_log*.csv"):
        assert log.read_text().splitlines()[0] == "step,train_loss,eval_excess_risk,lr,wall_time_s"
    assert list(tmp_path.glob("*.svg"))
    assert (tmp_path / "run.json").exists()
    curve = res["curve"]
    if name == "exp1":
        assert (tmp_path / "error_hist.csv").read_text().startswith("predictor,bin_lo,bin_hi,count")
        assert all(r[3] == 0.0 for r in curve.select("oracle").rows)
    if name == "exp2":
        assert (tmp_path / "fits.csv").read_text().startswith("predictor,rho,slope,intercept,r_squared,k_min")
        assert {"oracle", "erm"} <= {g[0] for g in curve.groups()}
    if name == "exp3":
        acc = curve.column("metric")
        assert np.all((acc >= 0) & (acc <= 1))


def test_oracle_mse_not_above_erm_at_rho_zero():
    rng = make_rng(3)
    x, _, _ = simulate_corr_noise(0.9, 1.0, 0.0, 65, rng, n=2000)
    p = augment_ar1(0.9, 1.0, 0.0)
    est_o = KalmanPredictor(p).fit()
    est_e = PooledERMPredictor().fit()
    ctx, y = x[:, :64, None], x[:, 64, None]
    assert -est_o.score(ctx, y) <= -est_e.score(ctx, y)

"""The three experiments, end to end: train, evaluate against oracles, write CSV and SVG.

Every evaluation feeds one shared set of sequences to all predictors, so
excess risks are paired differences; a checksum of that set is recorded per
predictor and checked before any difference is taken.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .. import __version__
from ..lgssm import augment_ar1, batch_filter, prediction_covs, simulate_batch, steady_state
from ..models import forward, n_params
from ..models.checkpoint import save_checkpoint
from ..numerics import make_rng
from ..oracle import OracleConfig, bayes_oracle_lgssm, corr_filter, hmm_filter_batch
from ..tasks import (
    CorrNoiseConfig,
    LgssmPriorConfig,
    corr_noise_sampler,
    hmm_sampler,
    lgssm_sampler,
    sample_hmm_batch,
    sample_lgssm_batch,
    simulate_corr_noise,
    simulate_hmm_batch,
)
from ..training import TrainConfig, TrainingAborted, meta_train
from .config import Config
from .curves import FitError, FitResult, RiskCurve, fit_loglog, mean_se, write_fits
from .svg import PlotStyle, emit_svg

log = logging.getLogger(__name__)

EVAL_CHUNK = 250


def derive_seed(seed: int, *tags: int) -> int:
    """A 63-bit seed for an independent purpose-specific stream."""
    return int(np.random.SeedSequence([int(seed), *tags]).generate_state(2, np.uint64)[0] >> np.uint64(1))


def checksum(arr) -> str:
    a = np.ascontiguousarray(arr)
    return hashlib.sha256(a.dtype.str.encode() + str(a.shape).encode() + a.tobytes()).hexdigest()[:16]


class Pairing:
    """Tracks which evaluation set each predictor saw."""

    def __init__(self):
        self.seen: dict[str, str] = {}

    def record(self, tag: str, data) -> None:
        self.seen[tag] = checksum(data)

    def assert_paired(self, *tags: str) -> None:
        sums = {self.seen[t] for t in tags}
        if len(sums) != 1:
            raise RuntimeError(f"predictors {tags} were not evaluated on the same sequences")


def _map(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
        return list(ex.map(fn, jobs))


def model_outputs(kind: str, params: dict, x, heads: int = 4) -> np.ndarray:
    """Forward pass over an evaluation set in fixed-size chunks."""
    outs = [forward(kind, params, x[i:i + EVAL_CHUNK], heads)[0] for i in range(0, len(x), EVAL_CHUNK)]
    return np.concatenate(outs, axis=0)


def _train(job: dict):
    """Worker entry point; ``job`` holds picklable settings only."""
    kind, cfg, dims = job["kind"], job["train"], job["dims"]
    sampler = job["sampler_factory"](*job["sampler_args"])
    eval_fn = job["eval_factory"](*job["eval_args"]) if job.get("eval_factory") else None
    t0 = time.perf_counter()
    params, tlog = meta_train(kind, sampler, cfg, dims, eval_fn)
    return params, tlog, time.perf_counter() - t0


def _write_manifest(out: Path, name: str, cfg: Config, extra: dict) -> None:
    doc = {"experiment": name, "version": __version__, "config": cfg.dump().splitlines(), **extra}
    with open(out / "run.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _finish_train(out: Path, tag: str, kind: str, dims: dict, seed: int, params, tlog) -> None:
    tlog.to_csv(out / f"train_log_{tag}.csv")
    save_checkpoint(out / f"ckpt_{tag}.bin", kind, dims, seed, params)


# --- Exp I ----------------------------------------------------------------


def _exp1_probe_eval(prior, probe_seed, n_probe, k, kind, heads):
    rng = make_rng(probe_seed)
    A, C, Q, R = sample_lgssm_batch(prior, rng, n_probe)
    x = simulate_batch(A, C, Q, R, k + 1, rng)[1]
    kal = batch_filter(A, C, Q, R, x[:, :k])["next"]
    kal_err = np.sum((kal - x[:, k]) ** 2, -1)

    def eval_fn(params):
        pred = forward(kind, params, x[:, :k], heads)[0][:, -1]
        return float(np.mean(np.sum((pred - x[:, k]) ** 2, -1) - kal_err))

    return eval_fn


def run_exp1(cfg: Config, out_dir) -> dict:
    """Excess risk over the Bayes oracle versus the number of meta-training tasks."""
    s, seed = cfg.section("exp1"), cfg["seed"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prior = LgssmPriorConfig(d=s["d"], m=s["m"], a_mode=s["a_mode"])
    k, n_eval = s["context_k"], s["n_eval"]
    t_start = time.perf_counter()

    rng = make_rng(derive_seed(seed, 1, 0))
    A, C, Q, R = sample_lgssm_batch(prior, rng, n_eval)
    x = simulate_batch(A, C, Q, R, k + 1, rng)[1]
    ctx, target = x[:, :k], x[:, k]
    pairing = Pairing()

    ocfg = OracleConfig(n_samples=s["oracle_samples"], seed=derive_seed(seed, 1, 1))
    oracle_pred, ess = bayes_oracle_lgssm(ctx, prior, ocfg, return_ess=True)
    pairing.record("oracle", ctx)
    err = {"oracle": np.sum((oracle_pred - target) ** 2, -1)}
    kal = batch_filter(A, C, Q, R, ctx)["next"]
    pairing.record("kalman", ctx)
    err["kalman"] = np.sum((kal - target) ** 2, -1)
    t_oracle = time.perf_counter() - t_start
    log.info("exp1 oracle done in %.1fs (median ESS %.1f)", t_oracle, float(np.median(ess)))

    dims_for = {"ssm": {"m": s["m"], "n": s["n_hidden"], "selector_hidden": s["selector_hidden"]},
                "linear_attn": {"m": s["m"], "e": s["embed"]},
                "nonselective": {"m": s["m"], "n": s["n_hidden"]}}
    jobs = []
    for kind in s["models"]:
        for budget in s["budgets"]:
            jobs.append({
                "kind": kind, "budget": budget, "dims": dims_for[kind],
                "train": TrainConfig(batch_tasks=s["batch_tasks"], seq_len=s["seq_len"], context_k=k,
                                     lr=s["lr"], steps=budget, seed=derive_seed(seed, 1, 2),
                                     eval_every=s["eval_every"]),
                "sampler_factory": lgssm_sampler, "sampler_args": (prior,),
                "eval_factory": _exp1_probe_eval,
                "eval_args": (prior, derive_seed(seed, 1, 3), s["n_probe"], k, kind, 4),
            })
    results = _map(_train, jobs, cfg["workers"])

    curve = RiskCurve()
    final_err = {}
    budget_err = {}
    train_time = {}
    for tag in ("oracle", "kalman"):
        pairing.assert_paired("oracle", tag)
    for budget in s["budgets"]:
        tasks = budget * s["batch_tasks"]
        for tag in ("oracle", "kalman"):
            mu, se = mean_se(err[tag] - err["oracle"])
            curve.add(tag, None, tasks, mu, 0.0 if tag == "oracle" else se, n_eval)
    for job, (params, tlog, secs) in zip(jobs, results):
        kind, budget = job["kind"], job["budget"]
        tag = f"{kind}_b{budget}"
        _finish_train(out, tag, kind, job["dims"], job["train"].seed, params, tlog)
        pred = model_outputs(kind, params, ctx)[:, -1]
        pairing.record(tag, ctx)
        pairing.assert_paired("oracle", tag)
        e = np.sum((pred - target) ** 2, -1)
        mu, se = mean_se(e - err["oracle"])
        curve.add(kind, None, budget * s["batch_tasks"], mu, se, n_eval)
        final_err[kind] = e
        budget_err[(kind, budget)] = e
        train_time[tag] = round(secs, 1)
        log.info("exp1 %s budget %d: excess %.4f +- %.4f (%.0fs)", kind, budget, mu, se, secs)
    curve.rows.sort(key=lambda r: (r[0], r[2]))
    curve.to_csv(out / "risk_curve.csv")

    err_all = {"oracle": err["oracle"], "kalman": err["kalman"], **final_err}
    _write_histogram(out / "error_hist.csv", err_all, s["hist_bins"])
    emit_svg(curve.select(None), out / "exp1.svg",
             PlotStyle(title="Excess risk vs meta-training tasks", xlabel="meta-training tasks",
                       ylabel="excess MSE over Bayes oracle"))
    _write_manifest(out, "exp1", cfg, {
        "eval_checksums": pairing.seen,
        "oracle_ess_median": float(np.median(ess)),
        "oracle_ess_below_threshold": int(np.sum(ess < 0.5 * s["oracle_samples"])),
        "train_seconds": train_time,
        "param_counts": {j["kind"]: n_params(r[0]) for j, r in zip(jobs, results)},
        "wall_seconds": round(time.perf_counter() - t_start, 1),
    })
    return {"curve": curve, "errors": err_all, "budget_errors": budget_err, "ess": ess, "out": out}


def _write_histogram(path, errs: dict, bins: int) -> None:
    hi = max(float(np.quantile(e, 0.99)) for e in errs.values())
    edges = np.linspace(0.0, hi, bins + 1)
    with open(path, "w") as fh:
        fh.write("predictor,bin_lo,bin_hi,count\n")
        for tag, e in errs.items():
            counts, _ = np.histogram(np.minimum(e, hi), edges)
            for lo, up, c in zip(edges[:-1], edges[1:], counts):
                fh.write(f"{tag},{lo!r},{up!r},{int(c)}\n")


# --- Exp II ---------------------------------------------------------------


def _marginal_preds(x, cn: CorrNoiseConfig, n_grid: int):
    """Rho-marginalized forecasts of every ``x_t`` from ``x_1..x_{t-1}``; shape (n, T)."""
    nodes, weights = np.polynomial.legendre.leggauss(n_grid)
    rhos = 0.5 * (cn.rho_hi - cn.rho_lo) * nodes + 0.5 * (cn.rho_hi + cn.rho_lo)
    sys_ = [augment_ar1(cn.a, cn.q, r) for r in rhos]
    A, C, Q, R = (np.stack([getattr(p, f) for p in sys_])[:, None] for f in "ACQR")
    out = []
    for i in range(0, len(x), EVAL_CHUNK):
        o = batch_filter(A, C, Q, R, x[None, i:i + EVAL_CHUNK, :, None])
        preds = o["preds"][..., 0]
        # the forecast of x_t is weighted by the likelihood of x_1..x_{t-1}
        cum = o["cumloglik"]
        lw = np.concatenate([np.zeros_like(cum[..., :1]), cum[..., :-1]], axis=-1)
        lw = lw + np.log(weights)[:, None, None]
        w = np.exp(lw - lw.max(0, keepdims=True))
        out.append((w * preds).sum(0) / w.sum(0))
    return np.concatenate(out, axis=0)


def run_exp2(cfg: Config, out_dir) -> dict:
    """Risk curves over context length for the AR(1)-noise family."""
    s, seed = cfg.section("exp2"), cfg["seed"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cn = CorrNoiseConfig(a=s["a"], q=s["q"], rho_lo=s["rho_lo"], rho_hi=s["rho_hi"])
    t_start = time.perf_counter()

    jobs = [{
        "kind": kind, "dims": {"m": 1, "n": s["n_hidden"]},
        "train": TrainConfig(batch_tasks=s["batch_tasks"], seq_len=s["seq_len"], lr=s["lr"],
                             steps=s["steps"], seed=derive_seed(seed, 2, 0), eval_every=s["eval_every"]),
        "sampler_factory": corr_noise_sampler, "sampler_args": (cn,),
        "eval_factory": _exp2_probe_eval, "eval_args": (cn, derive_seed(seed, 2, 1), kind),
    } for kind in s["models"]]
    trained = _map(_train, jobs, cfg["workers"])
    models = {}
    for job, (params, tlog, secs) in zip(jobs, trained):
        _finish_train(out, job["kind"], job["kind"], job["dims"], job["train"].seed, params, tlog)
        models[job["kind"]] = params
        log.info("exp2 trained %s in %.0fs", job["kind"], secs)

    k_grid = sorted(s["k_grid"])
    T = k_grid[-1] + 1
    n = s["n_eval"]
    curve, mse_curve = RiskCurve(), RiskCurve()
    separation, ratios, floors = [], [], []
    pairing = Pairing()
    for ri, rho in enumerate(s["rho_grid"]):
        x = simulate_corr_noise(cn.a, cn.q, rho, T, make_rng(derive_seed(seed, 2, 2), ri), n)[0]
        params = augment_ar1(cn.a, cn.q, rho)
        S = prediction_covs(params, T)[:, 0, 0]
        S_inf = float(steady_state(params)[2][0, 0])
        floors.append((rho, S_inf))
        preds_all = batch_filter(params.A, params.C, params.Q, params.R, x[..., None])["preds"][..., 0]
        pairing.record(f"oracle@{rho}", x)
        preds = {}
        cums = np.cumsum(x, axis=1)
        for lam in s["lambdas"]:
            preds[f"erm_lam{lam:g}"] = {k: cums[:, k - 1] / (k + lam) for k in k_grid}
        pairing.record(f"erm@{rho}", x)
        for kind, p in models.items():
            out_seq = model_outputs(kind, p, x[:, :k_grid[-1], None])[..., 0]
            preds[kind] = {k: out_seq[:, k - 1] for k in k_grid}
            pairing.record(f"{kind}@{rho}", x)
        if s["marginal_grid"] > 0:
            marg = _marginal_preds(x, cn, s["marginal_grid"])
            preds["bayes_marginal"] = {k: marg[:, k] for k in k_grid}
            pairing.record(f"bayes_marginal@{rho}", x)
        pairing.assert_paired(*(t for t in pairing.seen if t.endswith(f"@{rho}")))

        excess: dict[str, dict[int, tuple[float, float]]] = {}
        sq: dict[str, dict[int, np.ndarray]] = {}
        for tag, by_k in preds.items():
            excess[tag], sq[tag] = {}, {}
            for k in k_grid:
                gap = (by_k[k] - preds_all[:, k]) ** 2
                mu, se = mean_se(gap)
                excess[tag][k] = (float(S[k] - S_inf) + mu, se)
                sq[tag][k] = (by_k[k] - x[:, k]) ** 2
        sq["oracle"] = {k: (preds_all[:, k] - x[:, k]) ** 2 for k in k_grid}
        # best ridge member per context length
        lam_tags = [f"erm_lam{lam:g}" for lam in s["lambdas"]]
        best = {k: min(lam_tags, key=lambda t: excess[t][k][0]) for k in k_grid}
        excess["erm"] = {k: excess[best[k]][k] for k in k_grid}
        sq["erm"] = {k: sq[best[k]][k] for k in k_grid}
        excess["oracle"] = {k: (float(S[k] - S_inf), 0.0) for k in k_grid}

        for tag in ["oracle", "erm", *models, *(["bayes_marginal"] if "bayes_marginal" in preds else [])]:
            for k in k_grid:
                curve.add(tag, rho, k, excess[tag][k][0], excess[tag][k][1], n)
                mu, se = mean_se(sq[tag][k])
                mse_curve.add(tag, rho, k, mu, se, n)
        for k in k_grid:
            mu, se = mean_se(sq["erm"][k] - sq["oracle"][k])
            separation.append((rho, k, best[k], mu, se, n))
            eo = excess["oracle"][k][0]
            ee = float(excess["erm"][k][0])
            ratios.append((rho, k, ee, float(eo), ee / eo if eo > 0 else math.inf))
        log.info("exp2 rho=%g evaluated", rho)

    fits = []
    for tag, rho in curve.groups():
        S_inf = dict(floors)[rho]
        try:
            fits.append(fit_loglog(curve.select(tag, rho), s["k_min"], zero_tol=1e-12 * S_inf))
        except FitError as exc:
            log.warning("no fit for %s rho=%g: %s", tag, rho, exc)
            fits.append(FitResult(tag, rho, math.nan, math.nan, math.nan, s["k_min"]))
    curve.to_csv(out / "risk_curve.csv")
    mse_curve.to_csv(out / "mse_curve.csv")
    write_fits(out / "fits.csv", fits)
    with open(out / "separation.csv", "w") as fh:
        fh.write("rho,k,erm_member,erm_minus_oracle_mse,std_err,n_eval\n")
        for rho, k, member, mu, se, nn in separation:
            fh.write(f"{rho!r},{k},{member},{mu!r},{se!r},{nn}\n")
    with open(out / "ratios.csv", "w") as fh:
        fh.write("rho,k,erm_excess,oracle_excess,ratio\n")
        for rho, k, ee, eo, ra in ratios:
            fh.write(f"{rho!r},{k},{ee!r},{eo!r},{ra!r}\n")
    for rho in s["rho_grid"]:
        emit_svg(curve.select(None, rho), out / f"exp2_rho{rho:g}.svg",
                 PlotStyle(title=f"Excess risk vs context length (rho={rho:g})", ylabel="excess MSE"))
    _write_manifest(out, "exp2", cfg, {
        "eval_checksums": pairing.seen,
        "steady_state_variance": {f"{r:g}": v for r, v in floors},
        "param_counts": {k: n_params(p) for k, p in models.items()},
        "wall_seconds": round(time.perf_counter() - t_start, 1),
    })
    return {"curve": curve, "mse_curve": mse_curve, "fits": fits, "separation": separation,
            "ratios": ratios, "floors": dict(floors), "out": out}


def _exp2_probe_eval(cn: CorrNoiseConfig, probe_seed: int, kind: str, n_probe: int = 200, k: int = 64):
    rng = make_rng(probe_seed)
    rho = np.full(n_probe, cn.eval_rho)
    x = simulate_corr_noise(cn.a, cn.q, rho, k + 1, rng, n_probe)[0]
    oracle = corr_filter(x[:, :k], cn.eval_rho, cn.a, cn.q)[0]
    oracle_err = (oracle - x[:, k]) ** 2

    def eval_fn(params):
        pred = forward(kind, params, x[:, :k, None])[0][:, -1, 0]
        return float(np.mean((pred - x[:, k]) ** 2 - oracle_err))

    return eval_fn


# --- Exp III --------------------------------------------------------------


def _exp3_probe_eval(n_states, vocab, alphas, probe_seed, n_probe, T, kind, heads):
    rng = make_rng(probe_seed)
    trans, emit, init = sample_hmm_batch(n_states, vocab, rng, n_probe, *alphas)
    ch = simulate_hmm_batch(trans, emit, init, T, rng)[1]
    dists, _ = hmm_filter_batch(trans, emit, init, ch)
    tgt = ch[:, 1:]
    oracle_ce = -np.mean(np.log(np.take_along_axis(dists[:, :-1], tgt[..., None], -1)))

    def eval_fn(params):
        logits = forward(kind, params, ch, heads)[0][:, :-1]
        z = logits - logits.max(-1, keepdims=True)
        lp = z - np.log(np.exp(z).sum(-1, keepdims=True))
        return float(-np.mean(np.take_along_axis(lp, tgt[..., None], -1)) - oracle_ce)

    return eval_fn


def run_exp3(cfg: Config, out_dir) -> dict:
    """Next-character accuracy versus context length on random HMMs."""
    s, seed = cfg.section("exp3"), cfg["seed"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    alphas = (s["alpha_trans"], s["alpha_emit"])
    k_grid = sorted(s["k_grid"])
    dims_for = {
        "discrete_ssm": {"vocab": s["vocab"], "e": s["embed"], "n": s["n_hidden"]},
        "discrete_attn": {"vocab": s["vocab"], "e": s["embed"], "heads": s["heads"], "ffn": s["ffn"],
                          "max_len": max(s["seq_len"], k_grid[-1] + 1)},
    }
    jobs = [{
        "kind": kind, "dims": dims_for[kind],
        "train": TrainConfig(batch_tasks=s["batch_tasks"], seq_len=s["seq_len"], lr=s["lr"],
                             steps=s["steps"], seed=derive_seed(seed, 3, 0), eval_every=s["eval_every"],
                             heads=s["heads"]),
        "sampler_factory": hmm_sampler, "sampler_args": (s["n_states"], s["vocab"], *alphas),
        "eval_factory": _exp3_probe_eval,
        "eval_args": (s["n_states"], s["vocab"], alphas, derive_seed(seed, 3, 1), s["n_probe"],
                      min(s["seq_len"], 256), kind, s["heads"]),
    } for kind in s["models"]]
    trained = _map(_train, jobs, cfg["workers"])

    rng = make_rng(derive_seed(seed, 3, 2))
    n = s["n_eval"]
    trans, emit, init = sample_hmm_batch(s["n_states"], s["vocab"], rng, n, *alphas)
    ch = simulate_hmm_batch(trans, emit, init, k_grid[-1] + 1, rng)[1]
    pairing = Pairing()
    dists, _ = hmm_filter_batch(trans, emit, init, ch)
    pairing.record("oracle", ch)
    correct = {"oracle": {k: (dists[:, k - 1].argmax(-1) == ch[:, k]).astype(float) for k in k_grid}}
    models = {}
    for job, (params, tlog, secs) in zip(jobs, trained):
        kind = job["kind"]
        _finish_train(out, kind, kind, job["dims"], job["train"].seed, params, tlog)
        logits = model_outputs(kind, params, ch[:, :k_grid[-1]], s["heads"])
        pairing.record(kind, ch)
        pairing.assert_paired("oracle", kind)
        correct[kind] = {k: (logits[:, k - 1].argmax(-1) == ch[:, k]).astype(float) for k in k_grid}
        models[kind] = params
        log.info("exp3 trained %s in %.0fs", kind, secs)

    curve = RiskCurve()
    gaps = []
    for tag, by_k in correct.items():
        for k in k_grid:
            mu, se = mean_se(by_k[k])
            curve.add(tag, None, k, mu, se, n)
            if tag != "oracle":
                gmu, gse = mean_se(by_k[k] - correct["oracle"][k])
                gaps.append((tag, k, gmu, gse, n))
    curve.to_csv(out / "risk_curve.csv")
    with open(out / "ceiling.csv", "w") as fh:
        fh.write("predictor,k,model_minus_oracle_accuracy,std_err,n_eval\n")
        for tag, k, mu, se, nn in gaps:
            fh.write(f"{tag},{k},{mu!r},{se!r},{nn}\n")
    emit_svg(curve, out / "exp3.svg", PlotStyle(title="Next-character accuracy", ylabel="top-1 accuracy",
                                                log_y=False))
    _write_manifest(out, "exp3", cfg, {
        "eval_checksums": pairing.seen,
        "param_counts": {k: n_params(p) for k, p in models.items()},
        "wall_seconds": round(time.perf_counter() - t_start, 1),
    })
    return {"curve": curve, "correct": correct, "gaps": gaps, "out": out}


def run_experiment(name: str, cfg: Config, out_dir=None) -> dict:
    out = Path(out_dir if out_dir is not None else os.path.join(cfg["out"], name))
    runner = {"exp1": run_exp1, "exp2": run_exp2, "exp3": run_exp3}[name]
    try:
        return runner(cfg, out)
    except TrainingAborted:
        log.error("%s aborted during training; partial outputs are in %s", name, out)
        raise

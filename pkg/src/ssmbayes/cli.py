"""Command-line entry point: ``ssmbayes {exp1,exp2,exp3,check,oracle}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .harness.config import Config, ConfigError, load_config


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=d, help="base seed (u64)")
    parser.add_argument("--config", default=d, help="key=value config file")
    parser.add_argument("--out", default=d, help="output directory root")
    parser.add_argument("--paper-scale", action="store_true", default=d if suppress else False,
                        help="use full-scale settings")
    parser.add_argument("--workers", type=int, default=d, help="parallel training processes")
    parser.add_argument("--set", dest="overrides", action="append", default=d, metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true", default=d if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssmbayes", description=__doc__)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("exp1", "excess risk vs meta-training budget"),
                       ("exp2", "risk separation under AR(1) observation noise"),
                       ("exp3", "next-character accuracy on random HMMs"),
                       ("check", "run the oracle and gradient self-tests")):
        p = sub.add_parser(name, help=text)
        _global_flags(p, suppress=True)
    p = sub.add_parser("oracle", help="one-off oracle forecast for a context file")
    _global_flags(p, suppress=True)
    p.add_argument("context", help="text file, one time step per line, features separated by spaces or commas")
    p.add_argument("--family", choices=("lgssm", "corr", "corr-marginal"), default="lgssm")
    p.add_argument("--rho", type=float, default=0.95, help="noise correlation for --family corr")
    p.add_argument("--samples", type=int, default=1000, help="importance samples for --family lgssm")
    p.add_argument("--d", type=int, default=4, help="latent dimension of the LG-SSM prior")
    return parser


def make_config(args) -> Config:
    file_values = load_config(args.config) if args.config else {}
    overrides = {}
    for item in args.overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for key in ("seed", "out", "workers"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = str(val)
    return Config.build(file_values, overrides, paper_scale=bool(args.paper_scale))


def _read_context(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].replace(",", " ").strip()
        if line:
            rows.append([float(v) for v in line.split()])
    if not rows:
        raise ValueError(f"{path}: no observations")
    if len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: rows have different widths")
    return np.array(rows)


def cmd_oracle(args, cfg: Config) -> int:
    from .oracle import OracleConfig, bayes_oracle_corr, bayes_oracle_corr_marginal, bayes_oracle_lgssm
    from .tasks import CorrNoiseConfig, LgssmPriorConfig

    x = _read_context(args.context)
    if args.family == "lgssm":
        prior = LgssmPriorConfig(d=args.d, m=x.shape[1])
        pred, e = bayes_oracle_lgssm(x, prior, OracleConfig(n_samples=args.samples, seed=cfg["seed"]),
                                     return_ess=True)
        print(" ".join(repr(float(v)) for v in pred))
        print(f"# effective sample size {float(e):.1f} of {args.samples}", file=sys.stderr)
        return 0
    if x.shape[1] != 1:
        raise ValueError("the correlated-noise oracles take a scalar context")
    s = cfg.section("exp2")
    if args.family == "corr":
        print(repr(float(bayes_oracle_corr(x[:, 0], args.rho, s["a"], s["q"]))))
    else:
        cn = CorrNoiseConfig(a=s["a"], q=s["q"], rho_lo=s["rho_lo"], rho_hi=s["rho_hi"])
        print(repr(float(bayes_oracle_corr_marginal(x[:, 0], cn, s["marginal_grid"]))))
    return 0


def cmd_check(cfg: Config) -> int:
    from .harness.selfcheck import run_all

    failed = 0
    for name, ok, err, tol in run_all(cfg["seed"]):
        print(f"{'PASS' if ok else 'FAIL'}  {name}: max error {err:.3e} (tolerance {tol:g})")
        failed += not ok
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = make_config(args)
    except (ConfigError, OSError) as exc:
        print(f"ssmbayes: {exc}", file=sys.stderr)
        return 2
    if args.command == "check":
        return cmd_check(cfg)
    if args.command == "oracle":
        return cmd_oracle(args, cfg)
    from .harness.experiments import run_experiment

    out = Path(cfg["out"]) / args.command
    run_experiment(args.command, cfg, out)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

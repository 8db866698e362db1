"""Experiment driver: configuration, risk curves, fits, plots and the CLI."""
from .config import Config, ConfigError, load_config, parse_config_text
from .curves import FitError, FitResult, RiskCurve, fit_loglog, mean_se
from .experiments import run_exp1, run_exp2, run_exp3, run_experiment
from .svg import PlotStyle, emit_svg, render_svg

__all__ = [
    "Config", "ConfigError", "load_config", "parse_config_text",
    "RiskCurve", "FitResult", "FitError", "fit_loglog", "mean_se",
    "run_exp1", "run_exp2", "run_exp3", "run_experiment",
    "PlotStyle", "emit_svg", "render_svg",
]

"""Line-oriented ``key=value`` configuration with namespaced keys.

Example file::

    # desk run
    seed=3
    exp2.rho_grid=0.9,0.95,0.99
    exp2.k_grid=8,16,32,64,128,256,512

Values are kept as strings and converted on access, with the type taken
from the built-in default for that key.  Precedence, lowest first:
desk defaults, paper-scale defaults (``--paper-scale``), config file,
command-line overrides.
"""
from __future__ import annotations

from dataclasses import dataclass, field

DESK_DEFAULTS: dict[str, object] = {
    "seed": 0,
    "workers": 1,
    "out": "runs",
    # Exp I: generic LG-SSM prior, excess risk vs training budget at k = 32
    "exp1.d": 2,
    "exp1.m": 2,
    "exp1.a_mode": "symmetric",
    "exp1.n_hidden": 16,
    "exp1.selector_hidden": 0,
    "exp1.embed": 16,
    "exp1.budgets": (250, 1000, 4000),
    "exp1.batch_tasks": 128,
    "exp1.seq_len": 64,
    "exp1.lr": 3e-3,
    "exp1.context_k": 32,
    "exp1.n_eval": 1000,
    "exp1.n_probe": 200,
    "exp1.oracle_samples": 1000,
    "exp1.eval_every": 0,
    "exp1.models": ("ssm", "linear_attn"),
    "exp1.hist_bins": 40,
    # Exp II: scalar signal under AR(1) noise
    "exp2.a": 0.9,
    "exp2.q": 1.0,
    "exp2.rho_lo": 0.9,
    "exp2.rho_hi": 0.99,
    "exp2.rho_grid": (0.9, 0.95, 0.99),
    "exp2.k_grid": (8, 16, 32, 64, 128, 256, 512),
    "exp2.lambdas": (0.0, 1.0, 10.0),
    "exp2.n_eval": 1000,
    "exp2.k_min": 32,
    "exp2.n_hidden": 16,
    "exp2.steps": 2000,
    "exp2.batch_tasks": 128,
    "exp2.seq_len": 128,
    "exp2.lr": 3e-3,
    "exp2.eval_every": 0,
    "exp2.models": ("ssm", "nonselective"),
    "exp2.marginal_grid": 33,
    # Exp III: character prediction on random HMMs
    "exp3.n_states": 10,
    "exp3.vocab": 20,
    "exp3.alpha_trans": 0.1,
    "exp3.alpha_emit": 0.05,
    "exp3.embed": 64,
    "exp3.n_hidden": 16,
    "exp3.heads": 4,
    "exp3.ffn": 128,
    "exp3.steps": 400,
    "exp3.batch_tasks": 32,
    "exp3.seq_len": 256,
    "exp3.lr": 1e-3,
    "exp3.k_grid": (8, 16, 32, 64, 128),
    "exp3.n_eval": 1000,
    "exp3.n_probe": 100,
    "exp3.eval_every": 0,
    "exp3.models": ("discrete_ssm", "discrete_attn"),
}

PAPER_OVERRIDES: dict[str, object] = {
    "exp1.d": 4,
    "exp1.budgets": (1000, 5000, 20000, 50000),
    "exp1.seq_len": 128,
    "exp1.lr": 3e-4,
    "exp1.n_eval": 1000,
    "exp2.steps": 50000,
    "exp2.lr": 3e-4,
    "exp3.n_states": 50,
    "exp3.vocab": 100,
    "exp3.steps": 782,  # one pass over 50,000 sequences at batch 64
    "exp3.batch_tasks": 64,
    "exp3.seq_len": 512,
    "exp3.k_grid": (8, 16, 32, 64, 128, 256, 511),
}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    with open(path) as fh:
        return parse_config_text(fh.read(), str(path))


def _convert(key: str, raw, default):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return low in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(s) for s in items)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


@dataclass
class Config:
    values: dict = field(default_factory=dict)

    @classmethod
    def build(cls, file_values: dict | None = None, overrides: dict | None = None,
              paper_scale: bool = False) -> "Config":
        vals = dict(DESK_DEFAULTS)
        if paper_scale:
            vals.update(PAPER_OVERRIDES)
        for src in (file_values or {}, overrides or {}):
            for key, raw in src.items():
                if key not in DESK_DEFAULTS:
                    raise ConfigError(f"unknown config key {key!r}")
                vals[key] = _convert(key, raw, DESK_DEFAULTS[key])
        vals["paper_scale"] = paper_scale
        return cls(vals)

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def dump(self) -> str:
        lines = []
        for k in sorted(self.values):
            v = self.values[k]
            lines.append(f"{k}={','.join(map(str, v)) if isinstance(v, tuple) else v}")
        return "\n".join(lines) + "\n"

"""Meta-training: fresh tasks every step, next-token loss, AdamW + cosine decay."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .models import backward, cross_entropy, forward, full_dims, init_params
from .models.checkpoint import save_checkpoint
from .numerics import make_rng

log = logging.getLogger(__name__)

DISCRETE_KINDS = ("discrete_ssm", "discrete_attn")
TRAIN_LOG_HEADER = ["step", "train_loss", "eval_excess_risk", "lr", "wall_time_s"]


class TrainingAborted(RuntimeError):
    pass


@dataclass
class OptimState:
    first_moment: dict
    second_moment: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    base_lr: float = 3e-4
    total_steps: int = 1

    @classmethod
    def fresh(cls, params: dict, **kw) -> "OptimState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, **kw)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if step >= total_steps:
        return 0.0
    if step < 0:
        raise ValueError("step must be non-negative")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def adamw_step(params: dict, grads: dict, opt: OptimState):
    """Decoupled weight decay followed by a bias-corrected Adam update.

    Returns new ``(params, opt)``; the inputs are left untouched.
    """
    if params.keys() != grads.keys():
        raise ValueError("gradient fields do not match parameter fields")
    lr = cosine_lr(opt.step, opt.total_steps, opt.base_lr)
    t = opt.step + 1
    bc1 = 1.0 - opt.beta1 ** t
    bc2 = 1.0 - opt.beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, expected {p.shape}")
        m = opt.beta1 * opt.first_moment[k] + (1 - opt.beta1) * g
        v = opt.beta2 * opt.second_moment[k] + (1 - opt.beta2) * g * g
        p = p - lr * opt.weight_decay * p
        new_p[k] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        new_m[k], new_v[k] = m, v
    return new_p, replace(opt, first_moment=new_m, second_moment=new_v, step=t)


def clip_by_global_norm(grads: dict, max_norm: float):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


@dataclass
class TrainConfig:
    batch_tasks: int = 128
    seq_len: int = 128
    context_k: int = 32
    lr: float = 3e-4
    steps: int = 20_000
    seed: int = 0
    eval_every: int = 0
    checkpoint_path: str | None = None
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    heads: int = 4

    def __post_init__(self):
        if min(self.batch_tasks, self.seq_len, self.steps) < 1:
            raise ValueError("batch_tasks, seq_len and steps must be positive")
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2 for next-token training")


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def append(self, step, train_loss, eval_excess_risk, lr, wall_time_s):
        if self.rows and step <= self.rows[-1][0]:
            raise ValueError("train log steps must increase")
        self.rows.append((int(step), float(train_loss), float(eval_excess_risk), float(lr), float(wall_time_s)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRAIN_LOG_HEADER)
            for row in self.rows:
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]), f"{row[4]:.3f}"])


def batch_loss(kind: str, params: dict, batch, heads: int = 4):
    """Mean next-token loss over the batch and its gradients."""
    out, cache = forward(kind, params, batch, heads)
    if kind in DISCRETE_KINDS:
        loss, dout = cross_entropy(out, batch)
    else:
        x = np.asarray(batch, dtype=float)
        err = out[:, :-1] - x[:, 1:]
        count = err.shape[0] * err.shape[1]
        loss = float(np.sum(err * err)) / count
        dout = np.zeros_like(out)
        dout[:, :-1] = 2.0 * err / count
    return loss, backward(kind, params, cache, dout)


def meta_train(kind: str, sampler: Callable, cfg: TrainConfig, dims: dict | None = None,
               eval_fn: Callable | None = None, params: dict | None = None):
    """Train ``kind`` on fresh tasks from ``sampler(rng, n_tasks, seq_len)``.

    ``eval_fn(params) -> excess risk`` is called every ``cfg.eval_every``
    steps and after the last one; rows without an evaluation log NaN.
    Returns ``(params, TrainLog)``.
    """
    dims = full_dims(kind, dims)
    if params is None:
        params = init_params(kind, dims, make_rng(cfg.seed, 0))
    opt = OptimState.fresh(params, weight_decay=cfg.weight_decay, base_lr=cfg.lr, total_steps=cfg.steps)
    tlog = TrainLog()
    t0 = time.perf_counter()
    for step in range(cfg.steps):
        batch = sampler(make_rng(cfg.seed, 1, step), cfg.batch_tasks, cfg.seq_len)
        loss, grads = batch_loss(kind, params, batch, cfg.heads)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            if cfg.checkpoint_path:
                save_checkpoint(cfg.checkpoint_path, kind, dims, cfg.seed, params)
            raise TrainingAborted(f"non-finite loss at step {step}")
        grads, _ = clip_by_global_norm(grads, cfg.clip_norm)
        lr = cosine_lr(opt.step, opt.total_steps, opt.base_lr)
        params, opt = adamw_step(params, grads, opt)
        last = step == cfg.steps - 1
        if (cfg.eval_every and (step + 1) % cfg.eval_every == 0) or last:
            excess = eval_fn(params) if eval_fn is not None else float("nan")
            tlog.append(step + 1, loss, excess, lr, time.perf_counter() - t0)
            log.info("%s step %d loss %.5f excess %.5f", kind, step + 1, loss, excess)
    if cfg.checkpoint_path:
        save_checkpoint(cfg.checkpoint_path, kind, dims, cfg.seed, params)
    return params, tlog

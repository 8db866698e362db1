"""Brute-force reference computations shared by the unit and acceptance tests."""
import itertools
import math

import numpy as np

from ssmbayes.lgssm import LgssmParams
from ssmbayes.models import init_params
from ssmbayes.tasks import HmmParams
from ssmbayes.training import batch_loss


def random_system(rng, d, m):
    A = rng.standard_normal((d, d))
    A *= rng.uniform(0.3, 0.95) / np.max(np.abs(np.linalg.eigvals(A)))
    Wq = rng.standard_normal((d, d))
    Wr = rng.standard_normal((m, m))
    return LgssmParams(A, rng.standard_normal((m, d)), Wq @ Wq.T + 0.2 * np.eye(d), Wr @ Wr.T + 0.2 * np.eye(m))


def joint_gaussian(p, P0, T):
    """Linear maps from independent noise sources to ``z_1..z_T`` and stacked ``x_1..x_T``."""
    d, m = p.d, p.m
    n_src = d * (T + 1) + m * T
    cov_src = np.zeros((n_src, n_src))
    cov_src[:d, :d] = P0
    for t in range(T):
        cov_src[d * (t + 1):d * (t + 2), d * (t + 1):d * (t + 2)] = p.Q
        o = d * (T + 1) + m * t
        cov_src[o:o + m, o:o + m] = p.R
    Lz = np.zeros((T, d, n_src))
    prev = np.zeros((d, n_src))
    prev[:, :d] = np.eye(d)
    for t in range(T):
        cur = p.A @ prev
        cur[:, d * (t + 1):d * (t + 2)] += np.eye(d)
        Lz[t] = cur
        prev = cur
    Lx = np.einsum("ij,tjs->tis", p.C, Lz)
    for t in range(T):
        o = d * (T + 1) + m * t
        Lx[t, :, o:o + m] += np.eye(m)
    return Lz, Lx.reshape(T * m, n_src), cov_src


def condition_last_state(p, P0, x):
    """Mean and covariance of ``z_T`` given ``x_1..x_T``, plus the marginal covariance of ``x``."""
    Lz, Lx, cov = joint_gaussian(p, P0, len(x))
    Sxx = Lx @ cov @ Lx.T
    Szx = Lz[-1] @ cov @ Lx.T
    G = np.linalg.solve(Sxx, Szx.T).T
    return G @ x.reshape(-1), Lz[-1] @ cov @ Lz[-1].T - G @ Szx.T, Sxx


def scalar_riccati_gain(a, q, r):
    """Positive root of the scalar predicted-variance fixed point, returned as the gain."""
    b = r - a * a * r - q
    P = (-b + math.sqrt(b * b + 4 * q * r)) / 2
    return P / (P + r)


def random_hmm(rng, S, V):
    return HmmParams(rng.dirichlet(np.ones(S), size=S), rng.dirichlet(np.ones(V), size=S),
                     rng.dirichlet(np.ones(S)))


def enumerate_paths(hp, chars):
    """Filtered posterior of the last state and the log-likelihood by summing over all paths."""
    final = np.zeros(hp.n_states)
    total = 0.0
    for path in itertools.product(range(hp.n_states), repeat=len(chars)):
        pr = hp.init[path[0]] * hp.emit[path[0], chars[0]]
        for t in range(1, len(chars)):
            pr *= hp.trans[path[t - 1], path[t]] * hp.emit[path[t], chars[t]]
        final[path[-1]] += pr
        total += pr
    return final / total, math.log(total)


def fd_errors(kind, dims, x, rng, eps=1e-5, per_field=4):
    """Largest relative gap between analytic and central-difference gradients."""
    heads = dims.get("heads", 4)
    p = init_params(kind, dims, rng)
    for v in p.values():
        v += 0.1 * rng.standard_normal(v.shape)
    _, g = batch_loss(kind, p, x, heads=heads)
    errs = []
    for name, arr in p.items():
        flat = arr.reshape(-1)
        for j in rng.choice(flat.size, size=min(per_field, flat.size), replace=False):
            old = flat[j]
            flat[j] = old + eps
            lp, _ = batch_loss(kind, p, x, heads=heads)
            flat[j] = old - eps
            lm, _ = batch_loss(kind, p, x, heads=heads)
            flat[j] = old
            num = (lp - lm) / (2 * eps)
            ana = g[name].reshape(-1)[j]
            errs.append(abs(num - ana) / max(1e-6, abs(num) + abs(ana)))
    return max(errs)

"""Independent reference computations used by the tests.

Everything here is written with plain loops or brute force so it shares no
code path with the package it checks.
"""
import itertools
import math

import numpy as np
import torch

from advdrive.nets import ParameterSet


def fd_gradient(params: ParameterSet, loss_fn, eps: float = 1e-4) -> dict:
    """Central finite differences of a scalar ``loss_fn(params)`` in float64."""
    base = params.cast(torch.float64)
    out = {}
    for name, arr in base.items():
        g = np.zeros(arr.shape)
        for idx in itertools.product(*(range(n) for n in arr.shape)):
            hi, lo = base.clone(), base.clone()
            hi.arrays[name][idx] += eps
            lo.arrays[name][idx] -= eps
            g[idx] = (float(loss_fn(hi)) - float(loss_fn(lo))) / (2 * eps)
        out[name] = g
    return out


def max_relative_error(analytic: dict, numeric: dict, floor: float = 1e-6) -> float:
    worst = 0.0
    for k in numeric:
        a = analytic[k].detach().double().numpy()
        n = numeric[k]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max(initial=0.0)))
    return worst


def _act(x, kind):
    if kind == "relu":
        return max(x, 0.0)
    if kind == "tanh":
        return math.tanh(x)
    return x if x > 0 else math.expm1(x)


def loop_forward(params: ParameterSet, obs: np.ndarray, action=None) -> dict:
    """Single-sample forward pass with explicit loops (H, W, C input)."""
    spec = params.spec
    p = {k: v.detach().double().numpy() for k, v in params.items()}
    x = np.asarray(obs, dtype=np.float64)
    if spec.convs:
        fmap = np.transpose(x, (2, 0, 1))  # C, H, W
        for i, (filters, k, s) in enumerate(spec.convs):
            w, b = p[f"conv{i}.w"], p[f"conv{i}.b"]
            c_in, h, wd = fmap.shape
            ho, wo = (h - k) // s + 1, (wd - k) // s + 1
            nxt = np.zeros((filters, ho, wo))
            for f in range(filters):
                for r in range(ho):
                    for c in range(wo):
                        acc = b[f]
                        for ci in range(c_in):
                            for kr in range(k):
                                for kc in range(k):
                                    acc += w[f, ci, kr, kc] * fmap[ci, r * s + kr, c * s + kc]
                        nxt[f, r, c] = _act(acc, spec.activation)
            fmap = nxt
        feats = list(fmap.reshape(-1))
    else:
        feats = list(x.reshape(-1))
    if action is not None:
        feats += list(np.asarray(action, dtype=np.float64).reshape(-1))
    for i in range(len(spec.hidden)):
        w, b = p[f"dense{i}.w"], p[f"dense{i}.b"]
        feats = [_act(b[u] + sum(w[u, j] * feats[j] for j in range(len(feats))), spec.activation) for u in range(len(b))]
    out = {}
    for h in spec.heads:
        w, b = p[f"head.{h}.w"], p[f"head.{h}.b"]
        y = [b[u] + sum(w[u, j] * feats[j] for j in range(len(feats))) for u in range(len(b))]
        if h == "mean":
            y = [math.tanh(v) for v in y]
        out[h] = np.array(y[0] if h in ("value", "critic") else y)
    return out


def brute_vtrace(behaviour_lp, target_lp, rewards, values, bootstrap, gamma, rho_bar, c_bar):
    """Direct double-sum V-trace targets for one uninterrupted trajectory.

    v_s = V(x_s) + sum_{t>=s} gamma^{t-s} (prod_{i=s}^{t-1} c_i) rho_t delta_t
    """
    n = len(rewards)
    ratio = np.exp(np.asarray(target_lp) - np.asarray(behaviour_lp))
    rho = np.minimum(rho_bar, ratio)
    c = np.minimum(c_bar, ratio)
    v_next = list(values[1:]) + [bootstrap]
    delta = [rho[t] * (rewards[t] + gamma * v_next[t] - values[t]) for t in range(n)]
    vs = np.zeros(n)
    for s in range(n):
        total = values[s]
        for t in range(s, n):
            prod = 1.0
            for i in range(s, t):
                prod *= c[i]
            total += gamma ** (t - s) * prod * delta[t]
        vs[s] = total
    return vs


def brute_gae(rewards, values, bootstrap, gamma, lam):
    """Advantages as the explicit lambda-weighted sum of TD errors."""
    n = len(rewards)
    v_next = list(values[1:]) + [bootstrap]
    delta = [rewards[t] + gamma * v_next[t] - values[t] for t in range(n)]
    return np.array([sum((gamma * lam) ** (t - s) * delta[t] for t in range(s, n)) for s in range(n)])


def value_iteration(P, R, gamma, tol=1e-12):
    """Optimal Q for a tabular MDP; P[s, a, s'] transition probs, R[s, a] rewards."""
    n_s, n_a = R.shape
    q = np.zeros((n_s, n_a))
    while True:
        v = q.max(axis=1)
        nq = R + gamma * np.einsum("sat,t->sa", P, v)
        if np.abs(nq - q).max() < tol:
            return nq
        q = nq

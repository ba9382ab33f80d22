"""Small hand-differentiated network substrate in float64 numpy.

Everything is batched along the leading axis. LSTM gate blocks are stacked
in the fixed order (input, forget, cell, output) inside ``Wx`` (4H x in),
``Wh`` (4H x H) and ``b`` (4H,).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CacheError, NumericError, ShapeError

DEBUG_FINITE = False


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _finite(*arrays):
    if DEBUG_FINITE:
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise NumericError("non-finite value in network computation")


# ---------------------------------------------------------------- LSTM


def lstm_step(p, x, h, c):
    """One LSTM cell step for a batch. ``p`` holds Wx, Wh, b."""
    H = p["Wh"].shape[1]
    if x.shape[-1] != p["Wx"].shape[1] or h.shape[-1] != H or c.shape[-1] != H:
        raise ShapeError(f"lstm_step shapes x{x.shape} h{h.shape} c{c.shape} vs Wx{p['Wx'].shape}")
    z = x @ p["Wx"].T + h @ p["Wh"].T + p["b"]
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    g = np.tanh(z[..., 2 * H : 3 * H])
    o = sigmoid(z[..., 3 * H :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    _finite(h_new, c_new)
    return h_new, c_new, (x, h, c, i, f, g, o, tc)


def lstm_step_backward(p, cache, dh, dc):
    """Returns (grads dict, dx, dh_prev, dc_prev)."""
    x, h, c, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c
    dg = dc * i
    dc_prev = dc * f
    dz = np.concatenate(
        [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=-1
    )
    grads = {"Wx": dz.T @ x, "Wh": dz.T @ h, "b": dz.sum(axis=0)}
    return grads, dz @ p["Wx"], dz @ p["Wh"], dc_prev


@dataclass
class LSTMCache:
    layers: list
    steps: list  # steps[layer][t] -> step cache
    shape: tuple


def lstm_forward(layers, xs, init=None):
    """Run a stack of LSTM layers over ``xs`` of shape (B, T, in).

    ``init`` is a list of (h0, c0) per layer, default zeros. Returns the
    top layer's outputs (B, T, H), the final (h, c) per layer, and a cache.
    """
    if xs.ndim != 3 or xs.shape[1] < 1:
        raise ShapeError(f"expected (B, T>=1, in) sequence, got {xs.shape}")
    B, T, _ = xs.shape
    seq = xs
    finals, steps = [], []
    for li, p in enumerate(layers):
        H = p["Wh"].shape[1]
        if init is None or init[li] is None:
            h = np.zeros((B, H))
            c = np.zeros((B, H))
        else:
            h, c = init[li]
        outs, caches = [], []
        for t in range(T):
            h, c, sc = lstm_step(p, seq[:, t, :], h, c)
            outs.append(h)
            caches.append(sc)
        seq = np.stack(outs, axis=1)
        finals.append((h, c))
        steps.append(caches)
    return seq, finals, LSTMCache(layers, steps, (B, T, xs.shape[2]))


def lstm_backward(layers, cache: LSTMCache, d_out, d_final=None):
    """Backpropagation through time.

    ``d_out`` (B, T, H) is the gradient w.r.t. the top layer's outputs;
    ``d_final`` optionally adds gradients w.r.t. each layer's final (h, c).
    Returns (per-layer grad dicts, per-layer (dh0, dc0), d_inputs).
    """
    if cache.layers is not layers or len(cache.steps) != len(layers):
        raise CacheError("cache does not belong to these layers")
    B, T, _ = cache.shape
    if d_out.shape[:2] != (B, T):
        raise CacheError(f"d_out shape {d_out.shape} does not match cached forward {cache.shape}")
    grads = [None] * len(layers)
    d_init = [None] * len(layers)
    d_seq = d_out
    for li in range(len(layers) - 1, -1, -1):
        p = layers[li]
        H = p["Wh"].shape[1]
        g = {k: np.zeros_like(v) for k, v in p.items()}
        if d_final is not None and d_final[li] is not None:
            dh, dc = (np.array(a, dtype=float) for a in d_final[li])
        else:
            dh = np.zeros((B, H))
            dc = np.zeros((B, H))
        d_in = [None] * T
        for t in range(T - 1, -1, -1):
            sg, dx, dh, dc = lstm_step_backward(p, cache.steps[li][t], dh + d_seq[:, t, :], dc)
            for k in g:
                g[k] += sg[k]
            d_in[t] = dx
        grads[li] = g
        d_init[li] = (dh, dc)
        d_seq = np.stack(d_in, axis=1)
    return grads, d_init, d_seq


# ---------------------------------------------------------------- dense


def fc_forward(p, x, activation="identity"):
    if x.shape[-1] != p["W"].shape[1]:
        raise ShapeError(f"fc input {x.shape} vs W {p['W'].shape}")
    z = x @ p["W"].T + p["b"]
    if activation == "relu":
        y = np.maximum(z, 0.0)
    elif activation == "sigmoid":
        y = sigmoid(z)
    elif activation == "tanh":
        y = np.tanh(z)
    elif activation == "identity":
        y = z
    else:
        raise ShapeError(f"unknown activation {activation!r}")
    return y, (x, z, y, activation)


def fc_backward(p, cache, dy):
    x, z, y, act = cache
    if act == "relu":
        dz = dy * (z > 0)  # subgradient 0 at the kink
    elif act == "sigmoid":
        dz = dy * y * (1 - y)
    elif act == "tanh":
        dz = dy * (1 - y * y)
    else:
        dz = dy
    return {"W": dz.T @ x, "b": dz.sum(axis=0)}, dz @ p["W"]


def mse(pred, target):
    """Batch mean of the squared Euclidean error; returns (loss, dpred)."""
    diff = pred - target
    n = pred.shape[0]
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


# ---------------------------------------------------------------- init / optim


def xavier(rng, shape):
    fan_out, fan_in = shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_lstm(rng, n_in, hidden, forget_bias=1.0):
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = forget_bias
    return {"Wx": xavier(rng, (4 * hidden, n_in)), "Wh": xavier(rng, (4 * hidden, hidden)), "b": b}


def init_fc(rng, n_in, n_out):
    return {"W": xavier(rng, (n_out, n_in)), "b": np.zeros(n_out)}


def init_params(seed, topology):
    """Deterministic parameters for a topology given as a list of
    ``(name, kind, n_in, n_out)`` with kind ``lstm`` or ``fc``.

    Returns a flat ``{"<name>.<param>": array}`` dict.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for name, kind, n_in, n_out in topology:
        if kind == "lstm":
            block = init_lstm(rng, n_in, n_out)
        elif kind == "fc":
            block = init_fc(rng, n_in, n_out)
        else:
            raise ShapeError(f"unknown layer kind {kind!r}")
        for k, v in block.items():
            out[f"{name}.{k}"] = v
    return out


def group(params, name):
    """View of the ``name.*`` entries without the prefix (arrays are shared)."""
    pre = name + "."
    return {k[len(pre) :]: v for k, v in params.items() if k.startswith(pre)}


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params, grads):
        """In-place bias-corrected Adam step over every key of ``grads``."""
        for k, g in grads.items():
            if g.shape != params[k].shape:
                raise ShapeError(f"gradient {k} shape {g.shape} != param {params[k].shape}")
        self.step += 1
        bc1 = 1.0 - self.beta1**self.step
        bc2 = 1.0 - self.beta2**self.step
        for k in sorted(grads):
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------- checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance

    @property
    def worst(self):
        return max(self.per_param, key=self.per_param.get)


def rel_error(a, b):
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if den == 0 else float(num / den)


def numeric_grad(loss_fn, x, h=1e-5):
    """Central differences of a scalar ``loss_fn()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for j in range(flat.size):
        old = flat[j]
        flat[j] = old + h
        lp = loss_fn()
        flat[j] = old - h
        lm = loss_fn()
        flat[j] = old
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise NumericError("non-finite loss during finite differencing")
        gflat[j] = (lp - lm) / (2 * h)
    return g


def grad_check(loss_fn, params, analytic, tolerance=1e-4, h=1e-5, keys=None):
    """Compare ``analytic`` gradients against central differences.

    ``loss_fn()`` evaluates the scalar loss at the current contents of
    ``params``; relative error is measured per parameter array as
    ||a - n|| / max(||a||, ||n||).
    """
    base = loss_fn()
    if not np.isfinite(base):
        raise NumericError("loss is not finite")
    per = {}
    for k in keys or sorted(analytic):
        per[k] = rel_error(analytic[k], numeric_grad(loss_fn, params[k], h))
    return GradCheckReport(max(per.values()) if per else 0.0, per, tolerance)

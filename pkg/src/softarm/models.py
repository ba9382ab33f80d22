"""Forward and inverse kinematics networks, the consistency rollout, the
three inverse-training loss variants, and the training loops."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from . import nncore as nn
from .datagen import (
    MINMAX_HI,
    MINMAX_LO,
    ForwardWindows,
    InverseWindows,
    NormStats,
    RawDataset,
    apply_norm,
    compute_norm_stats,
    inverse_features,
    make_forward_windows,
    make_inverse_windows,
)
from .errors import CompatibilityError, ConfigError, DependencyError
from .plant import P_MAX, P_MIN, arm_reset, arm_step

log = logging.getLogger(__name__)

HIDDEN = 32
FC_HIDDEN = 16
FORWARD_IN = 12
INVERSE_IN = 15

FORWARD_TOPOLOGY = [
    ("l1", "lstm", FORWARD_IN, HIDDEN),
    ("l2", "lstm", HIDDEN, HIDDEN),
    ("fc1", "fc", HIDDEN, FC_HIDDEN),
    ("head", "fc", FC_HIDDEN, 3),
]
INVERSE_TOPOLOGY = [
    ("l1", "lstm", INVERSE_IN, HIDDEN),
    ("l2", "lstm", HIDDEN, HIDDEN),
    ("fc1", "fc", HIDDEN, FC_HIDDEN),
    ("head", "fc", FC_HIDDEN, 6),
    ("init_h1", "fc", 3, HIDDEN),
    ("init_c1", "fc", 3, HIDDEN),
    ("init_h2", "fc", 3, HIDDEN),
    ("init_c2", "fc", 3, HIDDEN),
]

VARIANTS = ("f+i", "f+i+c", "f+c")
VARIANT_ALIASES = {"i": "f+i", "ic": "f+i+c", "c": "f+c", "f+i": "f+i", "f+i+c": "f+i+c", "f+c": "f+c"}


def canonical_variant(name):
    try:
        return VARIANT_ALIASES[name]
    except KeyError:
        raise ConfigError(f"unknown loss variant {name!r}; expected one of i, ic, c") from None


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "f+c"
    lam: float = 1.0
    batch_size: int = 32
    epochs_forward: int = 40
    epochs_inverse: int = 60
    lr: float = 1e-3
    seed: int = 0
    rollout_depth: int = 1

    def __post_init__(self):
        object.__setattr__(self, "variant", canonical_variant(self.variant))
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.rollout_depth < 1:
            raise ConfigError("rollout depth must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")

    def to_dict(self):
        return {f"train.{f.name}": str(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        casts = {"variant": str, "lam": float, "lr": float}
        kw = {}
        for f in fields(cls):
            key = f"train.{f.name}"
            if key in d:
                kw[f.name] = casts.get(f.name, int)(d[key])
        return cls(**kw)


def _minmax_affine(stats):
    a = (stats.p_max - stats.p_min) / (MINMAX_HI - MINMAX_LO)
    return a, stats.p_min - MINMAX_LO * a


class _Model:
    kind = ""
    topology: list = []

    def __init__(self, stats: NormStats, params=None, seed=0):
        self.stats = stats
        self.params = params if params is not None else nn.init_params(seed, self.topology)

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}

    def zero_head(self):
        self.params["head.W"][:] = 0.0
        self.params["head.b"][:] = 0.0
        return self

    def _layers(self):
        return [nn.group(self.params, "l1"), nn.group(self.params, "l2")]

    def _check_stats(self, stats):
        if stats is not None and not self.stats.equals(stats):
            raise CompatibilityError(f"{self.kind} model was trained with different normalization stats")


class ForwardModel(_Model):
    """Two LSTM layers, FC-ReLU, FC-sigmoid. Output in min-max position space."""

    kind = "forward"
    topology = FORWARD_TOPOLOGY

    def forward(self, x):
        layers = self._layers()
        hs, _, lc = nn.lstm_forward(layers, x)
        a1, c1 = nn.fc_forward(nn.group(self.params, "fc1"), hs[:, -1, :], "relu")
        y, c2 = nn.fc_forward(nn.group(self.params, "head"), a1, "sigmoid")
        return y, (layers, lc, c1, c2, hs.shape)

    def backward(self, cache, dy):
        """Gradients for all parameters and for the input windows."""
        layers, lc, c1, c2, hshape = cache
        g2, da1 = nn.fc_backward(nn.group(self.params, "head"), c2, dy)
        g1, dh = nn.fc_backward(nn.group(self.params, "fc1"), c1, da1)
        d_out = np.zeros(hshape)
        d_out[:, -1, :] = dh
        lg, _, dx = nn.lstm_backward(layers, lc, d_out)
        grads = {}
        for name, g in (("l1", lg[0]), ("l2", lg[1]), ("fc1", g1), ("head", g2)):
            for k, v in g.items():
                grads[f"{name}.{k}"] = v
        return grads, dx

    def predict(self, x, stats=None):
        """Returns (sigmoid-space output, denormalized mm)."""
        self._check_stats(stats)
        y, _ = self.forward(x)
        return y, apply_norm(self.stats, y, "p", mode="minmax", direction="inverse")

    def loss(self, w: ForwardWindows):
        y, cache = self.forward(w.x)
        loss, dy = nn.mse(y, w.y)
        grads, _ = self.backward(cache, dy)
        return loss, grads


class InverseModel(_Model):
    """Two LSTM layers with task-prior initial states, FC-ReLU, linear head.

    Initial states per layer: (h0, c0) = tanh(W * target_xyz + b) with the
    target z-scored. Output: six z-scored pressures.
    """

    kind = "inverse"
    topology = INVERSE_TOPOLOGY

    def init_state(self, target_z):
        out, caches = [], []
        for li in (1, 2):
            h, ch = nn.fc_forward(nn.group(self.params, f"init_h{li}"), target_z, "tanh")
            c, cc = nn.fc_forward(nn.group(self.params, f"init_c{li}"), target_z, "tanh")
            out.append((h, c))
            caches.append((ch, cc))
        return out, caches

    def forward(self, x, target_z):
        init, icache = self.init_state(target_z)
        layers = self._layers()
        hs, _, lc = nn.lstm_forward(layers, x, init)
        a1, c1 = nn.fc_forward(nn.group(self.params, "fc1"), hs[:, -1, :], "relu")
        u, c2 = nn.fc_forward(nn.group(self.params, "head"), a1, "identity")
        return u, (layers, lc, c1, c2, icache, hs.shape)

    def backward(self, cache, du):
        layers, lc, c1, c2, icache, hshape = cache
        g2, da1 = nn.fc_backward(nn.group(self.params, "head"), c2, du)
        g1, dh = nn.fc_backward(nn.group(self.params, "fc1"), c1, da1)
        d_out = np.zeros(hshape)
        d_out[:, -1, :] = dh
        lg, d_init, _ = nn.lstm_backward(layers, lc, d_out)
        grads = {}
        for name, g in (("l1", lg[0]), ("l2", lg[1]), ("fc1", g1), ("head", g2)):
            for k, v in g.items():
                grads[f"{name}.{k}"] = v
        for li, ((dh0, dc0), (ch, cc)) in enumerate(zip(d_init, icache), start=1):
            gh, _ = nn.fc_backward(nn.group(self.params, f"init_h{li}"), ch, dh0)
            gc, _ = nn.fc_backward(nn.group(self.params, f"init_c{li}"), cc, dc0)
            for k, v in gh.items():
                grads[f"init_h{li}.{k}"] = v
            for k, v in gc.items():
                grads[f"init_c{li}.{k}"] = v
        return grads

    def predict(self, x, target_z, stats=None):
        """Returns (z-scored output, kPa clamped to the actuator range)."""
        self._check_stats(stats)
        u, _ = self.forward(x, target_z)
        kpa = apply_norm(self.stats, u, "u", direction="inverse")
        return u, np.clip(kpa, P_MIN, P_MAX)


# ---------------------------------------------------------------- rollout


def rollout_window(stats, fwd_hist, u_prev, u_z):
    """Forward-model window with ``u_z`` placed at the future control step."""
    u_raw = u_z * stats.u_std + stats.u_mean
    du_z = (u_raw - u_prev - stats.du_mean) / stats.du_std
    last = np.concatenate([u_z, du_z], axis=1)[:, None, :]
    return np.concatenate([fwd_hist, last], axis=1)


def consistency_rollout(fm: ForwardModel, fwd_hist, u_prev, u_z):
    """Single-step rollout through the frozen forward model.

    Returns the sigmoid-space prediction and a closure mapping its gradient
    to the gradient w.r.t. ``u_z``. Forward parameters receive nothing.
    """
    x = rollout_window(fm.stats, fwd_hist, u_prev, u_z)
    y, cache = fm.forward(x)
    s = fm.stats

    def back(dy):
        _, dx = fm.backward(cache, dy)
        return dx[:, -1, :6] + dx[:, -1, 6:] * (s.u_std / s.du_std)

    return y, back


def sigmoid_to_z(stats, y):
    """Affine map from the sigmoid head's space to z-scored position; returns (z, dz/dy)."""
    a, b = _minmax_affine(stats)
    scale = a / stats.p_std
    return y * scale + (b - stats.p_mean) / stats.p_std, scale


def _consistency_term(fm, im, w: InverseWindows, u_z, depth, future_mm=None, need_grad=True):
    """Mean over rollout steps of ||p_roll - p*||^2 in z-scored position space.

    Returns (loss, d loss / d u_z for the first step, extra inverse grads from
    later steps). Steps after the first see their history threaded with
    predicted positions and controls, treated as constants.
    """
    y, back = consistency_rollout(fm, w.fwd_hist, w.u_prev, u_z)
    pz, scale = sigmoid_to_z(fm.stats, y)
    loss, dpz = nn.mse(pz, w.target_z)
    loss /= depth
    du = back(dpz * scale / depth) if need_grad else None
    extra = {}
    if depth == 1:
        return loss, du, extra
    s = fm.stats
    u_hist = w.u_hist.copy()
    p_hist = w.p_hist.copy()
    fwd_hist = w.fwd_hist.copy()
    u_raw = u_z * s.u_std + s.u_mean
    p_pred = apply_norm(s, y, "p", mode="minmax", direction="inverse")
    last = rollout_window(s, fwd_hist, w.u_prev, u_z)[:, -1:, :]
    for j in range(1, depth):
        u_hist = np.concatenate([u_hist[:, 1:], u_raw[:, None]], axis=1)
        p_hist = np.concatenate([p_hist[:, 1:], p_pred[:, None]], axis=1)
        fwd_hist = np.concatenate([fwd_hist[:, 1:], last], axis=1)
        tgt_mm = future_mm[:, j - 1]
        tgt_z = apply_norm(s, tgt_mm, "p")
        x = inverse_features(u_hist, p_hist, tgt_mm - p_pred, s)
        u_z_j, icache = im.forward(x, tgt_z)
        y, back = consistency_rollout(fm, fwd_hist, u_raw, u_z_j)
        pz, _ = sigmoid_to_z(s, y)
        lj, dpz = nn.mse(pz, tgt_z)
        loss += lj / depth
        if need_grad:
            gj = im.backward(icache, back(dpz * scale / depth))
            for k, v in gj.items():
                extra[k] = extra.get(k, 0.0) + v
        last = rollout_window(s, fwd_hist, u_raw, u_z_j)[:, -1:, :]
        u_raw = u_z_j * s.u_std + s.u_mean
        p_pred = apply_norm(s, y, "p", mode="minmax", direction="inverse")
    return loss, du, extra


def compute_loss(variant, batch: InverseWindows, fm, im, lam=1.0, depth=1, future_mm=None, need_grad=True):
    """Inverse-phase objective for one batch.

    Returns (total, grads over inverse params, terms) where ``terms`` holds
    the individual ``inverse`` and ``consistency`` values that were used.
    """
    variant = canonical_variant(variant)
    use_i = variant in ("f+i", "f+i+c")
    use_c = variant in ("f+c", "f+i+c")
    if use_c and (fm is None or not getattr(fm, "trained", True)):
        raise DependencyError("consistency variants need a trained forward model")
    u_z, cache = im.forward(batch.x, batch.target_z)
    total = 0.0
    du = np.zeros_like(u_z)
    terms = {}
    extra = {}
    if use_i:
        li, dli = nn.mse(u_z, batch.label)
        terms["inverse"] = li
        total += li
        du += dli
    if use_c:
        lc, dlc, extra = _consistency_term(fm, im, batch, u_z, depth, future_mm, need_grad)
        terms["consistency"] = lc
        total += lam * lc
        if need_grad:
            du += lam * dlc
    if not need_grad:
        return total, None, terms
    grads = im.backward(cache, du)
    for k, v in extra.items():
        grads[k] = grads[k] + lam * v
    return total, grads, terms


# ---------------------------------------------------------------- training


@dataclass
class Checkpoint:
    kind: str
    params: dict
    stats: NormStats
    config: TrainConfig
    plant_fingerprint: str
    meta: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def model(self):
        cls = ForwardModel if self.kind == "forward" else InverseModel
        m = cls(self.stats, {k: v.copy() for k, v in self.params.items()})
        m.trained = True
        return m


def _batches(rng, n, size):
    order = rng.permutation(n)
    for s in range(0, n, size):
        yield order[s : s + size]


def _check_fingerprint(ds, fingerprint):
    if ds.plant.fingerprint() != fingerprint:
        raise CompatibilityError(
            f"plant fingerprint mismatch: dataset {ds.plant.fingerprint()} vs checkpoint {fingerprint}"
        )


def forward_split_windows(ds, stats):
    return make_forward_windows(ds.train_split(), stats), make_forward_windows(ds.val_split(), stats)


def train_forward(ds: RawDataset, cfg: TrainConfig | None = None, stats=None, epochs=None):
    cfg = cfg or TrainConfig()
    stats = stats or compute_norm_stats(ds)
    tr, va = forward_split_windows(ds, stats)
    fm = ForwardModel(stats, seed=cfg.seed)
    opt = nn.Adam(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 11])
    n_epochs = cfg.epochs_forward if epochs is None else epochs
    best = (np.inf, fm.copy_params(), -1)
    history = []
    val0 = _forward_mse(fm, va)
    history.append({"epoch": 0, "train_forward": _forward_mse(fm, tr), "val_forward": val0})
    if val0 < best[0]:
        best = (val0, fm.copy_params(), 0)
    for epoch in range(1, n_epochs + 1):
        tot, cnt = 0.0, 0
        for idx in _batches(rng, len(tr), cfg.batch_size):
            loss, grads = fm.loss(ForwardWindows(tr.x[idx], tr.y[idx], tr.t[idx]))
            opt.update(fm.params, grads)
            tot += loss * len(idx)
            cnt += len(idx)
        val = _forward_mse(fm, va)
        history.append({"epoch": epoch, "train_forward": tot / cnt, "val_forward": val})
        log.info("forward epoch %d train %.6g val %.6g", epoch, tot / cnt, val)
        if val < best[0]:
            best = (val, fm.copy_params(), epoch)
    ck = Checkpoint("forward", best[1], stats, cfg, ds.plant.fingerprint(), {"best_epoch": str(best[2])}, history)
    return ck


def _forward_mse(fm, w):
    y, _ = fm.forward(w.x)
    return nn.mse(y, w.y)[0]


def inverse_split_windows(ds, stats, depth=1):
    out = []
    for part in (ds.train_split(), ds.val_split()):
        w = make_inverse_windows(part, stats)
        future = None
        if depth > 1:
            keep = w.t + depth - 1 < len(part)
            w = w.subset(keep)
            future = np.stack([part.p[w.t + j] for j in range(1, depth)], axis=1)
        out.append((w, future))
    return out


def _inverse_objective(variant, w, future, fm, im, cfg):
    """Selection loss on a full split: the variant's own objective, or the
    consistency term alone for consistency variants."""
    total, _, terms = compute_loss(variant, w, fm, im, cfg.lam, cfg.rollout_depth, future, need_grad=False)
    sel = terms["consistency"] if "consistency" in terms else total
    return sel, total, terms


def train_inverse(ds: RawDataset, fwd: Checkpoint, cfg: TrainConfig | None = None, epochs=None):
    cfg = cfg or TrainConfig()
    if fwd is None or fwd.kind != "forward":
        raise DependencyError("inverse training needs a forward checkpoint")
    _check_fingerprint(ds, fwd.plant_fingerprint)
    stats = fwd.stats
    fm = fwd.model()
    frozen = fm.copy_params()
    (tr, tr_fut), (va, va_fut) = inverse_split_windows(ds, stats, cfg.rollout_depth)
    im = InverseModel(stats, seed=cfg.seed)
    opt = nn.Adam(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 23])
    n_epochs = cfg.epochs_inverse if epochs is None else epochs
    sel, total, terms = _inverse_objective(cfg.variant, va, va_fut, fm, im, cfg)
    best = (sel, im.copy_params(), 0)
    history = [{"epoch": 0, "val_total": total, **{f"val_{k}": v for k, v in terms.items()}}]
    for epoch in range(1, n_epochs + 1):
        tot, cnt = 0.0, 0
        for idx in _batches(rng, len(tr), cfg.batch_size):
            fut = tr_fut[idx] if tr_fut is not None else None
            loss, grads, _ = compute_loss(cfg.variant, tr.subset(idx), fm, im, cfg.lam, cfg.rollout_depth, fut)
            opt.update(im.params, grads)
            tot += loss * len(idx)
            cnt += len(idx)
        sel, total, terms = _inverse_objective(cfg.variant, va, va_fut, fm, im, cfg)
        history.append(
            {"epoch": epoch, "train_total": tot / cnt, "val_total": total, **{f"val_{k}": v for k, v in terms.items()}}
        )
        log.info("inverse[%s] epoch %d train %.6g val %.6g", cfg.variant, epoch, tot / cnt, total)
        if sel < best[0]:
            best = (sel, im.copy_params(), epoch)
    assert all(np.array_equal(frozen[k], fm.params[k]) for k in frozen), "forward model was modified"
    meta = {"best_epoch": str(best[2]), "forward_fingerprint": params_digest(fwd.params)}
    return Checkpoint("inverse", best[1], stats, cfg, fwd.plant_fingerprint, meta, history)


def params_digest(params):
    import hashlib

    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k], dtype="<f8").tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------- evaluation


@dataclass
class ForwardReport:
    rmse_axis: np.ndarray
    rmse: float
    n: int


def evaluate_forward(ck: Checkpoint, ds: RawDataset, split="val", predictions=None):
    """Position RMSE in mm. ``predictions`` (mm) bypasses the network."""
    if ck.plant_fingerprint != ds.plant.fingerprint():
        raise CompatibilityError("checkpoint and dataset come from different plants")
    part = {"train": ds.train_split, "val": ds.val_split, "all": lambda: ds}[split]()
    w = make_forward_windows(part, ck.stats)
    truth = part.p[w.t]
    if predictions is None:
        _, predictions = ck.model().predict(w.x)
    err = predictions - truth
    axis = np.sqrt(np.mean(err * err, axis=0))
    return ForwardReport(axis, float(np.sqrt(np.mean(np.sum(err * err, axis=1)))), len(w))


def evaluate_inverse_on_plant(ck: Checkpoint, ds: RawDataset, split="val"):
    """Replay the recorded controls on a noise-free plant, then apply the
    inverse model's command at each target step; returns per-sample
    distances (mm) between the reached tip and the recorded target."""
    stats = ck.stats
    im = ck.model()
    start = 0 if split == "train" else ds.n_train
    part = ds.slice(start) if split != "train" else ds.train_split()
    w = make_inverse_windows(part, stats)
    _, u_cmd = im.predict(w.x, w.target_z)
    state = arm_reset(ds.plant)
    states = []
    for ui in ds.u:
        _, state = arm_step(ds.plant, state, ui)
        states.append(state)
    err = np.empty(len(w))
    for n, (t, u) in enumerate(zip(w.t + start, u_cmd)):
        tip, _ = arm_step(ds.plant, states[t - 1], u)
        err[n] = np.linalg.norm(tip - ds.p[t])
    return err

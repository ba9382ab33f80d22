"""Randomized sequential data collection against the plant, plus
normalization and window assembly for the two networks."""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, DegenerateChannelError, ShapeError, SizeError
from .plant import P_MAX, P_MIN, Plant, PlantParams

FRAME_DT = 3.0
TRAIN_FRACTION = 0.8
SEQ_LEN = 3
MINMAX_LO, MINMAX_HI = 0.05, 0.95


@dataclass(frozen=True)
class DataGenConfig:
    total_frames: int = 13000
    frames_per_target: int = 10
    fixed_sum: float = 375.0
    noise_sigma_u: float = 5.0
    seed: int = 0
    sensor_noise: bool = True

    def __post_init__(self):
        if self.total_frames <= 0 or self.frames_per_target <= 0:
            raise ConfigError("total_frames and frames_per_target must be positive")
        if not 0 < self.fixed_sum <= 3 * P_MAX:
            raise ConfigError("fixed_sum must lie in (0, 750]")
        if self.noise_sigma_u < 0:
            raise ConfigError("noise_sigma_u must be non-negative")

    def to_dict(self):
        return {f"datagen.{f.name}": str(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for f in fields(cls):
            key = f"datagen.{f.name}"
            if key in d:
                raw = d[key]
                if f.type in ("bool", bool):
                    kw[f.name] = str(raw).lower() in ("1", "true", "yes")
                elif f.type in ("int", int):
                    kw[f.name] = int(raw)
                else:
                    kw[f.name] = float(raw)
        return cls(**kw)


@dataclass
class RawDataset:
    t: np.ndarray  # (N,)
    u: np.ndarray  # (N, 6) kPa
    p: np.ndarray  # (N, 3) mm
    plant: PlantParams = field(default_factory=PlantParams)
    config: DataGenConfig = field(default_factory=DataGenConfig)
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def n_train(self):
        return int(round(TRAIN_FRACTION * len(self)))

    def slice(self, start, stop=None):
        s = slice(start, stop)
        return RawDataset(self.t[s], self.u[s], self.p[s], self.plant, self.config, self.extra)

    def train_split(self):
        return self.slice(0, self.n_train)

    def val_split(self):
        return self.slice(self.n_train, None)

    def workspace_box(self):
        return self.p.min(axis=0), self.p.max(axis=0)


def sample_fixed_sum_triple(rng, S):
    """Uniform draw from {x in [0, 250]^3 : sum(x) = S}.

    Rejection from the scaled simplex; for S > 375 the reflected slice
    x -> 250 - x is sampled instead so the acceptance rate stays >= 2/3.
    """
    if not 0 < S <= 3 * P_MAX:
        raise ConfigError(f"fixed sum {S} outside (0, 750]")
    if S == 3 * P_MAX:
        return np.full(3, P_MAX)
    reflect = S > 1.5 * P_MAX
    s = 3 * P_MAX - S if reflect else S
    while True:
        x = rng.dirichlet(np.ones(3)) * s
        if np.all(x <= P_MAX):
            break
    if reflect:
        x = P_MAX - x
    # exact sum; the correction is at roundoff level
    x[2] = S - x[0] - x[1]
    return np.clip(x, P_MIN, P_MAX)


def control_targets(rng, cfg: DataGenConfig):
    n_targets = -(-cfg.total_frames // cfg.frames_per_target) + 1
    return np.array(
        [
            np.concatenate(
                [sample_fixed_sum_triple(rng, cfg.fixed_sum), sample_fixed_sum_triple(rng, cfg.fixed_sum)]
            )
            for _ in range(n_targets)
        ]
    )


def build_control_sequence(rng, cfg: DataGenConfig):
    """Targets every ``frames_per_target`` frames, linear ramps between them,
    then per-frame Gaussian noise and clamping to the pressure range."""
    targets = control_targets(rng, cfg)
    k = np.arange(cfg.total_frames)
    seg, frac = np.divmod(k, cfg.frames_per_target)
    a = (frac / cfg.frames_per_target)[:, None]
    u = (1 - a) * targets[seg] + a * targets[seg + 1]
    if cfg.noise_sigma_u > 0:
        u = u + rng.normal(0.0, cfg.noise_sigma_u, size=u.shape)
    return np.clip(u, P_MIN, P_MAX)


def generate_dataset(plant_params: PlantParams | None = None, cfg: DataGenConfig | None = None):
    plant_params = plant_params or PlantParams()
    cfg = cfg or DataGenConfig()
    rng = np.random.default_rng(cfg.seed)
    u = build_control_sequence(rng, cfg)
    noise_rng = np.random.default_rng([cfg.seed, 1]) if cfg.sensor_noise else None
    plant = Plant(plant_params, noise_rng)
    p = np.empty((len(u), 3))
    for i, ui in enumerate(u):
        p[i] = plant.step(ui)
    t = FRAME_DT * np.arange(len(u), dtype=float)
    return RawDataset(t, u, p, plant_params, cfg)


@dataclass
class NormStats:
    """z-score parameters per channel group, plus position min/max.

    Groups: ``u`` pressures, ``du`` one-step pressure differences,
    ``p`` positions, ``dp`` one-step position increments.
    """

    u_mean: np.ndarray
    u_std: np.ndarray
    du_mean: np.ndarray
    du_std: np.ndarray
    p_mean: np.ndarray
    p_std: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    dp_mean: np.ndarray
    dp_std: np.ndarray

    GROUPS = ("u", "du", "p", "dp")

    def to_dict(self):
        out = {}
        for f in fields(self):
            out[f"stats.{f.name}"] = " ".join(repr(float(v)) for v in getattr(self, f.name))
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(**{f.name: np.array([float(v) for v in d[f"stats.{f.name}"].split()]) for f in fields(cls)})

    def equals(self, other):
        return all(np.array_equal(getattr(self, f.name), getattr(other, f.name)) for f in fields(self))


def _zparams(x, names):
    m = x.mean(axis=0)
    s = x.std(axis=0)
    for j, sj in enumerate(s):
        if not sj > 0:
            raise DegenerateChannelError(names[j])
    return m, s


def compute_norm_stats(ds: RawDataset) -> NormStats:
    """Statistics over the chronological training split only."""
    if len(ds) < 2:
        raise SizeError("need at least 2 frames")
    tr = ds.train_split()
    if len(tr) < 2:
        tr = ds
    u_names = [f"u{i + 1}" for i in range(6)]
    p_names = ["x", "y", "z"]
    u_m, u_s = _zparams(tr.u, u_names)
    du_m, du_s = _zparams(np.diff(tr.u, axis=0), [f"du{i + 1}" for i in range(6)])
    p_m, p_s = _zparams(tr.p, p_names)
    dp_m, dp_s = _zparams(np.diff(tr.p, axis=0), ["dx", "dy", "dz"])
    return NormStats(u_m, u_s, du_m, du_s, p_m, p_s, tr.p.min(axis=0), tr.p.max(axis=0), dp_m, dp_s)


def apply_norm(stats: NormStats, values, group="u", mode="zscore", direction="forward"):
    """Affine normalization of ``values`` (last axis = channels of ``group``)."""
    if group not in NormStats.GROUPS:
        raise ShapeError(f"unknown channel group {group!r}")
    v = np.asarray(values, dtype=float)
    if mode == "zscore":
        a = getattr(stats, f"{group}_std")
        b = getattr(stats, f"{group}_mean")
    elif mode == "minmax":
        if group != "p":
            raise ShapeError("minmax mode is defined for positions only")
        a = (stats.p_max - stats.p_min) / (MINMAX_HI - MINMAX_LO)
        b = stats.p_min - MINMAX_LO * a
    else:
        raise ShapeError(f"unknown mode {mode!r}")
    if v.shape[-1] != a.shape[0]:
        raise ShapeError(f"expected {a.shape[0]} channels for {group!r}, got {v.shape[-1]}")
    if direction == "forward":
        return (v - b) / a
    if direction == "inverse":
        return v * a + b
    raise ShapeError(f"unknown direction {direction!r}")


@dataclass
class ForwardWindows:
    """Batched forward samples.

    x: (N, 3, 12) normalized (u, du) per step; y: (N, 3) minmax-space target
    position at the final step; t: (N,) target frame index.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray

    def __len__(self):
        return len(self.t)


@dataclass
class InverseWindows:
    """Batched inverse samples plus what the consistency rollout needs.

    x: (N, 3, 15) per step [goal increment, dp_k, u_k, p_k], all z-scored
    target_z: (N, 3) z-scored target position (hidden-state prior input)
    target_mm: (N, 3) raw target position
    label: (N, 6) z-scored recorded pressures at the target step
    fwd_hist: (N, 2, 12) normalized forward-model steps t-2, t-1
    u_prev: (N, 6) raw pressures at t-1 (for the rolled step's du)
    u_hist, p_hist: (N, 4, 6), (N, 4, 3) raw history at t-4..t-1
    """

    x: np.ndarray
    target_z: np.ndarray
    target_mm: np.ndarray
    label: np.ndarray
    fwd_hist: np.ndarray
    u_prev: np.ndarray
    u_hist: np.ndarray
    p_hist: np.ndarray
    t: np.ndarray

    def __len__(self):
        return len(self.t)

    def subset(self, idx):
        return InverseWindows(*(getattr(self, f.name)[idx] for f in fields(self)))


def _forward_steps(u, stats):
    """Normalized (u, du) features for frames 1..N-1 of ``u`` (du needs a predecessor)."""
    du = np.diff(u, axis=0)
    return np.concatenate([apply_norm(stats, u[1:], "u"), apply_norm(stats, du, "du")], axis=1)


def make_forward_windows(ds: RawDataset, stats: NormStats) -> ForwardWindows:
    n = len(ds)
    if n < 4:
        raise SizeError("forward windows need at least 4 frames")
    feat = _forward_steps(ds.u, stats)  # feat[k-1] is frame k
    t = np.arange(SEQ_LEN, n)
    idx = (t[:, None] - np.arange(SEQ_LEN - 1, -1, -1)[None, :]) - 1
    x = feat[idx]
    y = apply_norm(stats, ds.p[t], "p", mode="minmax")
    return ForwardWindows(x, y, t)


def inverse_features(u_hist, p_hist, goal, stats):
    """Assemble the inverse-model input from raw history.

    u_hist: (..., 4, 6) pressures at steps t-4..t-1 (first row only feeds dp)
    p_hist: (..., 4, 3) positions at steps t-4..t-1
    goal:   (..., 3) goal increment in mm
    Returns (..., 3, 15).
    """
    dp = np.diff(p_hist, axis=-2)
    g = apply_norm(stats, goal, "dp")
    g = np.broadcast_to(g[..., None, :], dp.shape)
    return np.concatenate(
        [g, apply_norm(stats, dp, "dp"), apply_norm(stats, u_hist[..., 1:, :], "u"), apply_norm(stats, p_hist[..., 1:, :], "p")],
        axis=-1,
    )


def make_inverse_windows(ds: RawDataset, stats: NormStats) -> InverseWindows:
    n = len(ds)
    if n < 5:
        raise SizeError("inverse windows need at least 5 frames")
    t = np.arange(SEQ_LEN + 1, n)
    hist = t[:, None] - np.arange(SEQ_LEN + 1, 0, -1)[None, :]  # t-4 .. t-1
    goal = ds.p[t] - ds.p[t - 1]
    x = inverse_features(ds.u[hist], ds.p[hist], goal, stats)
    feat = _forward_steps(ds.u, stats)
    fwd_idx = np.stack([t - 2, t - 1], axis=1) - 1
    return InverseWindows(
        x=x,
        target_z=apply_norm(stats, ds.p[t], "p"),
        target_mm=ds.p[t].copy(),
        label=apply_norm(stats, ds.u[t], "u"),
        fwd_hist=feat[fwd_idx],
        u_prev=ds.u[t - 1].copy(),
        u_hist=ds.u[hist],
        p_hist=ds.p[hist],
        t=t,
    )

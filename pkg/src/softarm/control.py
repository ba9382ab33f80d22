"""Planar trajectory generation, workspace mapping and inverse-model-driven
tracking on the plant."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import apply_norm, inverse_features
from .errors import CompatibilityError, ConfigError, NumericError, SizeError
from .plant import Plant, PlantParams

KINDS = ("circle", "ushape", "figure8", "star")

# Mean / std / max tracking error in mm reported for the physical arm.
HARDWARE_TRACKING_MM = {"mean": 31.43, "std": 13.85, "max": 65.86}


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str = "circle"
    n_waypoints: int = 60
    scale: float = 0.6
    plane_z: float | None = None  # None: median z of the dataset

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown trajectory kind {self.kind!r}; expected one of {KINDS}")
        if self.n_waypoints < 4:
            raise ConfigError("need at least 4 waypoints")
        if not 0 < self.scale <= 1:
            raise ConfigError("scale must be in (0, 1]")


@dataclass(frozen=True)
class WorkspaceBox:
    lo: np.ndarray
    hi: np.ndarray
    z_median: float

    def __post_init__(self):
        if not np.all(np.asarray(self.hi) > np.asarray(self.lo)):
            raise ConfigError("degenerate workspace box")

    @classmethod
    def from_positions(cls, p):
        return cls(p.min(axis=0), p.max(axis=0), float(np.median(p[:, 2])))

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.hi - self.lo))


def _polyline(vertices, n, closed):
    """``n`` points spaced uniformly in arc length along a polyline."""
    v = np.asarray(vertices, dtype=float)
    if closed:
        v = np.vstack([v, v[:1]])
    seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.linspace(0.0, cum[-1], n, endpoint=not closed)
    return np.column_stack([np.interp(s, cum, v[:, 0]), np.interp(s, cum, v[:, 1])])


def gen_planar_trajectory(spec: TrajectorySpec):
    """Unit-square (within [-1, 1]^2) waypoints for one of the four shapes."""
    n = spec.n_waypoints
    t = 2 * np.pi * np.arange(n) / n
    if spec.kind == "circle":
        pts = np.column_stack([np.cos(t), np.sin(t)])
    elif spec.kind == "figure8":
        # Gerono lemniscate, y stretched from [-1/2, 1/2] to [-1, 1]
        pts = np.column_stack([np.sin(t), 2 * np.sin(t) * np.cos(t)])
    elif spec.kind == "ushape":
        pts = _polyline([(-1, 1), (-1, -1), (1, -1), (1, 1)], n, closed=False)
    else:
        inner = math.sin(math.radians(18)) / math.sin(math.radians(126))
        ang = np.pi / 2 + np.arange(10) * np.pi / 5
        rad = np.where(np.arange(10) % 2 == 0, 1.0, inner)
        pts = _polyline(np.column_stack([rad * np.cos(ang), rad * np.sin(ang)]), n, closed=True)
    pts[np.abs(pts) < 1e-15] = 0.0
    return pts


def map_to_workspace(points, box: WorkspaceBox, spec: TrajectorySpec):
    """Centre the unit square in the box's x-y extent, scaled to
    ``spec.scale`` of the smaller extent, on a horizontal plane."""
    ext = box.hi - box.lo
    center = 0.5 * (box.hi + box.lo)
    half = 0.5 * spec.scale * min(ext[0], ext[1])
    z = box.z_median if spec.plane_z is None else spec.plane_z
    pts = np.asarray(points, dtype=float)
    return np.column_stack([center[0] + half * pts[:, 0], center[1] + half * pts[:, 1], np.full(len(pts), z)])


@dataclass
class TrackingReport:
    targets: np.ndarray
    achieved: np.ndarray
    errors: np.ndarray
    labels: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.errors)

    def summary(self):
        return report_metrics(self)


def report_metrics(report: TrackingReport):
    """(mean, population std, max) of the waypoint errors, in mm."""
    e = np.asarray(report.errors if isinstance(report, TrackingReport) else report, dtype=float)
    if e.size == 0:
        raise SizeError("empty tracking report")
    return float(e.mean()), float(e.std()), float(e.max())


class Tracker:
    """Feeds the inverse model from the plant's own recent history."""

    def __init__(self, ck, plant_params: PlantParams, rng=None):
        if ck.kind != "inverse":
            raise CompatibilityError(f"tracking needs an inverse checkpoint, got {ck.kind!r}")
        if ck.plant_fingerprint != plant_params.fingerprint():
            raise CompatibilityError("checkpoint was trained on a different plant")
        self.model = ck.model()
        self.stats = ck.stats
        self.plant = Plant(plant_params, rng)
        self.reset()

    def reset(self):
        tip = self.plant.reset()
        self.u_hist = np.zeros((4, 6))
        self.p_hist = np.tile(tip, (4, 1))

    @property
    def position(self):
        return self.p_hist[-1]

    def command(self, target):
        goal = target - self.p_hist[-1]
        x = inverse_features(self.u_hist[None], self.p_hist[None], goal[None], self.stats)
        tz = apply_norm(self.stats, target[None], "p")
        _, u = self.model.predict(x, tz)
        return u[0]

    def apply(self, u):
        tip = self.plant.step(u)
        self.u_hist = np.vstack([self.u_hist[1:], u])
        self.p_hist = np.vstack([self.p_hist[1:], tip])
        return tip


def track(plant_params: PlantParams, ck, waypoints, settle_frames=1, rng=None, labels=None):
    tr = Tracker(ck, plant_params, rng)
    targets = np.asarray(waypoints, dtype=float)
    achieved = np.empty_like(targets)
    for k, target in enumerate(targets):
        u = tr.command(target)
        if not np.all(np.isfinite(u)):
            raise NumericError(f"non-finite pressure command at waypoint {k}")
        for _ in range(settle_frames):
            tip = tr.apply(u)
        achieved[k] = tip
    errors = np.linalg.norm(achieved - targets, axis=1)
    return TrackingReport(targets, achieved, errors, dict(labels or {}))


def trajectory_waypoints(kind, box: WorkspaceBox, n_waypoints=60, scale=0.6):
    spec = TrajectorySpec(kind, n_waypoints, scale)
    planar = gen_planar_trajectory(spec)
    return planar, map_to_workspace(planar, box, spec)


# ---------------------------------------------------------------- output


def report_to_csv(report: TrackingReport):
    lines = [f"# {k} = {v}" for k, v in sorted(report.labels.items())]
    lines.append("idx,tx,ty,tz,ax,ay,az,err")
    for i, (t, a, e) in enumerate(zip(report.targets, report.achieved, report.errors)):
        vals = [*t, *a, e]
        lines.append(",".join([str(i)] + [repr(float(v)) for v in vals]))
    mean, std, mx = report_metrics(report)
    lines += [f"# mean = {mean!r}", f"# std = {std!r}", f"# max = {mx!r}"]
    return "\n".join(lines) + "\n"


def report_from_csv(text):
    from .errors import ParseError

    labels, rows = {}, []
    header_seen = False
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, sep, val = line[1:].partition("=")
            if not sep:
                raise ParseError("malformed comment line", n)
            if not header_seen:
                labels[key.strip()] = val.strip()
            continue
        if not header_seen:
            if line.strip() != "idx,tx,ty,tz,ax,ay,az,err":
                raise ParseError("missing report column header", n)
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise ParseError(f"expected 8 fields, got {len(parts)}", n)
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise ParseError(str(exc), n) from None
    if not rows:
        raise ParseError("report has no rows")
    a = np.array(rows)
    return TrackingReport(a[:, 0:3], a[:, 3:6], a[:, 6], labels)


def report_svg(planar, report: TrackingReport, size=480):
    """Top-down overlay: planar path (red), mapped path (green), achieved (blue)."""
    mapped = report.targets[:, :2]
    achieved = report.achieved[:, :2]
    allxy = np.vstack([mapped, achieved])
    lo, hi = allxy.min(axis=0), allxy.max(axis=0)
    span = max(float(np.max(hi - lo)), 1e-9)
    pad = 20

    def tx(pts, lo=lo, span=span):
        s = (size - 2 * pad) / span
        return [(pad + (x - lo[0]) * s, size - pad - (y - lo[1]) * s) for x, y in pts]

    # planar path drawn in its own unit frame over the same canvas
    unit = np.asarray(planar, dtype=float)
    ulo = np.array([-1.0, -1.0])

    def poly(pts, color):
        d = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        return f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>'

    mean, std, mx = report_metrics(report)
    return "\n".join(
        [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
            '<rect width="100%" height="100%" fill="white"/>',
            poly(tx(unit, ulo, 2.0), "red"),
            poly(tx(mapped), "green"),
            poly(tx(achieved), "blue"),
            f'<text x="{pad}" y="14" font-size="11" font-family="monospace">'
            f"mean {mean:.2f} mm  std {std:.2f} mm  max {mx:.2f} mm</text>",
            "</svg>",
        ]
    ) + "\n"

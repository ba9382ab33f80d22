"""Synthetic two-segment pneumatic soft arm.

Each McKibben actuator is a rate-independent Prandtl-Ishlinskii model (a
weighted sum of play operators on top of a linear compliance). Three
actuators mounted at 120 degree spacing set the curvature of one
constant-curvature segment whose backbone arc length is fixed; two segments
are stacked in series.

All state is passed by value: every stepping function returns a new state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, PressureRangeError

P_MIN = 0.0
P_MAX = 250.0
KAPPA_EPS = 1e-9


def _default_thresholds(n=8):
    return tuple(P_MAX * j / (n + 1) for j in range(1, n + 1))


def _default_weights(n=8):
    return tuple(0.04 * math.exp(-j / 4) for j in range(1, n + 1))


@dataclass(frozen=True)
class ActuatorParams:
    L0: float = 100.0
    c0: float = 0.20
    r: tuple = field(default_factory=_default_thresholds)
    w: tuple = field(default_factory=_default_weights)

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if r.shape != w.shape or r.ndim != 1 or r.size == 0:
            raise DomainError("thresholds and weights must be equal-length 1-D")
        if not (r[0] > 0 and r[-1] < P_MAX and np.all(np.diff(r) > 0)):
            raise DomainError("play thresholds must be strictly increasing in (0, 250)")
        if np.any(w < 0) or self.c0 <= 0 or self.L0 <= 0:
            raise DomainError("need w >= 0, c0 > 0, L0 > 0")

    @property
    def n(self):
        return len(self.r)


@dataclass(frozen=True)
class SegmentGeometry:
    d: float = 25.0
    s0: float = 120.0

    def __post_init__(self):
        if self.d <= 0 or self.s0 <= 0:
            raise DomainError("segment geometry must be positive")


@dataclass(frozen=True)
class PlantParams:
    actuator: ActuatorParams = field(default_factory=ActuatorParams)
    geometry: SegmentGeometry = field(default_factory=SegmentGeometry)
    noise_sigma: float = 0.5

    def to_dict(self):
        """Flat key/value view; floats keep their exact repr."""
        a, g = self.actuator, self.geometry
        return {
            "plant.L0": repr(float(a.L0)),
            "plant.c0": repr(float(a.c0)),
            "plant.r": " ".join(repr(float(v)) for v in a.r),
            "plant.w": " ".join(repr(float(v)) for v in a.w),
            "plant.d": repr(float(g.d)),
            "plant.s0": repr(float(g.s0)),
            "plant.noise_sigma": repr(float(self.noise_sigma)),
        }

    @classmethod
    def from_dict(cls, d):
        act = ActuatorParams(
            L0=float(d["plant.L0"]),
            c0=float(d["plant.c0"]),
            r=tuple(float(v) for v in d["plant.r"].split()),
            w=tuple(float(v) for v in d["plant.w"].split()),
        )
        geo = SegmentGeometry(d=float(d["plant.d"]), s0=float(d["plant.s0"]))
        return cls(act, geo, float(d["plant.noise_sigma"]))

    def fingerprint(self):
        import hashlib

        text = "\n".join(f"{k}={v}" for k, v in sorted(self.to_dict().items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ActuatorState:
    y: np.ndarray
    p_last: float = 0.0


@dataclass(frozen=True)
class ArmState:
    """Play states ``y`` of shape (6, n) and last pressures of shape (6,).

    Rows 0-2 belong to segment 1, rows 3-5 to segment 2.
    """

    y: np.ndarray
    p_last: np.ndarray

    def actuator(self, i):
        return ActuatorState(self.y[i].copy(), float(self.p_last[i]))

    def equals(self, other):
        return np.array_equal(self.y, other.y) and np.array_equal(self.p_last, other.p_last)


def play_update(y_prev, p, r):
    """Classical play (backlash) operator; broadcasts over arrays."""
    return np.maximum(p - r, np.minimum(p + r, y_prev))


def _check_pressure(p):
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p < P_MIN) or np.any(p > P_MAX):
        raise PressureRangeError(f"pressure outside [{P_MIN}, {P_MAX}] kPa: {p}")
    return p


def actuator_length(params: ActuatorParams, state: ActuatorState, p):
    p = float(_check_pressure(p))
    y = play_update(state.y, p, np.asarray(params.r))
    length = params.L0 + params.c0 * p + float(np.dot(params.w, y))
    return length, ActuatorState(y, p)


def pcc_from_lengths(l1, l2, l3, d):
    """Curvature and bend azimuth of a segment from its three actuator lengths.

    Actuator i sits at azimuth (i-1)*120 deg; the bend points toward the
    shortest actuator.
    """
    if min(l1, l2, l3) <= 0 or d <= 0:
        raise DomainError("actuator lengths and mounting radius must be positive")
    # l1^2 + l2^2 + l3^2 - l1 l2 - l2 l3 - l1 l3, in a cancellation-free form
    q = 0.5 * ((l1 - l2) ** 2 + (l2 - l3) ** 2 + (l1 - l3) ** 2)
    kappa = 2.0 * math.sqrt(q) / (d * (l1 + l2 + l3))
    phi = math.atan2(math.sqrt(3.0) * (l3 - l2), l2 + l3 - 2.0 * l1)
    return kappa, phi


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def segment_transform(kappa, phi, s):
    """Rotation and translation of a constant-curvature arc of length ``s``.

    Below ``KAPPA_EPS`` the first-order series in kappa is used.
    """
    cp, sp = math.cos(phi), math.sin(phi)
    if kappa < KAPPA_EPS:
        # first-order expansion about the straight configuration
        a = kappa * s
        t = np.array([0.5 * a * s * cp, 0.5 * a * s * sp, s])
        skew = np.array([[0.0, 0.0, a * cp], [0.0, 0.0, a * sp], [-a * cp, -a * sp, 0.0]])
        return np.eye(3) + skew, t
    theta = kappa * s
    # 1 - cos(theta) written as 2 sin^2(theta/2) to avoid cancellation
    h = 2.0 * math.sin(0.5 * theta) ** 2 / kappa
    t = np.array([h * cp, h * sp, math.sin(theta) / kappa])
    R = _rz(phi) @ _ry(theta) @ _rz(-phi)
    return R, t


def arm_reset(params: PlantParams | ActuatorParams | None = None) -> ArmState:
    if params is None:
        params = PlantParams()
    act = params.actuator if isinstance(params, PlantParams) else params
    return ArmState(np.zeros((6, act.n)), np.zeros(6))


def actuator_lengths(params: PlantParams, state: ArmState, u):
    """Advance all six actuators; returns (lengths (6,), new state)."""
    u = _check_pressure(u)
    if u.shape != (6,):
        raise DomainError(f"expected 6 pressures, got shape {u.shape}")
    act = params.actuator
    r = np.asarray(act.r)
    y = play_update(state.y, u[:, None], r[None, :])
    lengths = act.L0 + act.c0 * u + y @ np.asarray(act.w)
    return lengths, ArmState(y, u.copy())


def tip_from_lengths(lengths, geometry: SegmentGeometry):
    k1, f1 = pcc_from_lengths(*lengths[:3], geometry.d)
    k2, f2 = pcc_from_lengths(*lengths[3:], geometry.d)
    R1, t1 = segment_transform(k1, f1, geometry.s0)
    _, t2 = segment_transform(k2, f2, geometry.s0)
    return t1 + R1 @ t2


def arm_step(params: PlantParams, state: ArmState, u, rng=None):
    """One quasi-static frame: apply pressures ``u`` and return the tip.

    Sensor noise is added only when ``rng`` is given.
    """
    lengths, new_state = actuator_lengths(params, state, u)
    tip = tip_from_lengths(lengths, params.geometry)
    if rng is not None and params.noise_sigma > 0:
        tip = tip + rng.normal(0.0, params.noise_sigma, size=3)
    return tip, new_state


class Plant:
    """Stateful convenience wrapper around :func:`arm_step`."""

    def __init__(self, params: PlantParams | None = None, rng=None):
        self.params = params or PlantParams()
        self.rng = rng
        self.reset()

    def reset(self):
        self.state = arm_reset(self.params)
        self.tip = np.array([0.0, 0.0, 2 * self.params.geometry.s0])
        return self.tip

    def step(self, u):
        self.tip, self.state = arm_step(self.params, self.state, u, self.rng)
        return self.tip

"""Needle insertion simulation.

An attempt is a discrete-time state machine sampled at the pressure-sensor
rate. The peristaltic pump is gated on needle depth, the line pressure
follows a first-order response toward the lumen pressure once the wall
yields, and puncture is declared per detection window from pressure rise or
flashback.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import TargetLostError, ValidationError
from .geometry import matrix_to_quat, probe_rotation
from .phantom import ProbePose


class AttemptState(str, enum.Enum):
    APPROACH = "Approach"
    SKIN_CONTACT = "SkinContact"
    IN_TISSUE = "InTissue"
    DITHERING = "Dithering"
    PUNCTURED = "Punctured"
    GUIDEWIRE_PLACED = "GuidewirePlaced"
    FAILED = "Failed"


ALLOWED_TRANSITIONS = {
    None: {AttemptState.APPROACH, AttemptState.FAILED},
    AttemptState.APPROACH: {AttemptState.SKIN_CONTACT, AttemptState.FAILED},
    AttemptState.SKIN_CONTACT: {AttemptState.IN_TISSUE, AttemptState.FAILED},
    AttemptState.IN_TISSUE: {AttemptState.DITHERING, AttemptState.PUNCTURED, AttemptState.FAILED},
    AttemptState.DITHERING: {AttemptState.IN_TISSUE, AttemptState.PUNCTURED, AttemptState.FAILED},
    AttemptState.PUNCTURED: {AttemptState.GUIDEWIRE_PLACED},
    AttemptState.GUIDEWIRE_PLACED: set(),
    AttemptState.FAILED: set(),
}


def valid_transitions(states) -> bool:
    prev = None
    for s in states:
        s = AttemptState(s)
        if s not in ALLOWED_TRANSITIONS[prev]:
            return False
        prev = s
    return True


@dataclass(frozen=True)
class NeedleConfig:
    probe_to_needle_distance_mm: float = 10.0
    insertion_angle_deg: float = 30.0
    dither_amplitude_mm: float = 1.0
    max_dither_cycles: int = 3
    pump_setpoint_mmHg: float = -50.0
    baseline_mmHg: float = 0.0  # saline drip line pressure with pump off
    sample_rate_hz: float = 100.0
    window_s: float = 0.5
    threshold_mmHg: float = 20.0
    tau_s: float = 0.2
    pressure_sigma_mmHg: float = 2.0
    advance_speed_mm_s: float = 5.0
    approach_clearance_mm: float = 2.0
    skin_dwell_s: float = 0.1
    capture_threshold_mm: float = 3.0  # minimum lumen height the needle can enter
    lateral_sigma_mm: float = 0.0
    lateral_bias_mm: float = 0.0
    tenting_d0_mm: float = 1.0
    tenting_k: float = 1.0
    tenting_p_ref_mmHg: float = 65.0
    tenting_variability: float = 0.0  # log-normal sigma of per-push wall yield
    march_step_mm: float = 0.05

    def __post_init__(self):
        if not self.probe_to_needle_distance_mm > 0:
            raise ValidationError("probe_to_needle_distance must be > 0")
        if not 0.0 < self.insertion_angle_deg < 90.0:
            raise ValidationError("insertion angle must lie in (0, 90) degrees")
        if not self.pump_setpoint_mmHg < 0:
            raise ValidationError("pump setpoint must be negative")
        if self.max_dither_cycles < 0:
            raise ValidationError("max_dither_cycles must be >= 0")
        if self.window_samples < 1:
            raise ValidationError("detection window must hold at least one sample")

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate_hz

    @property
    def window_samples(self) -> int:
        return int(round(self.window_s * self.sample_rate_hz))

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "max_dither_cycles" in d:
            d["max_dither_cycles"] = int(d["max_dither_cycles"])
        return cls(**d)

    def to_dict(self):
        return asdict(self)


class PumpState(NamedTuple):
    on: bool
    target_mmHg: float


def pump_state(needle_depth: float, setpoint: float = -50.0, baseline: float = 0.0) -> PumpState:
    """Pump runs only while the needle tip is below the skin."""
    if needle_depth > 0:
        return PumpState(True, setpoint)
    return PumpState(False, baseline)


def tenting_depth(radius: float, internal_pressure: float, d0: float = 1.0, k: float = 1.0,
                  p_ref: float = 65.0) -> float:
    """Wall deflection ahead of the needle before it yields; grows as lumen pressure drops."""
    if not radius > 0:
        raise ValidationError("radius must be > 0")
    return d0 * (1.0 + k * max(0.0, p_ref - internal_pressure) / p_ref)


@dataclass(frozen=True)
class TimelinePoint:
    time: float
    depth: float
    state: AttemptState
    in_lumen: bool = False


@dataclass(frozen=True)
class PressureSample:
    time: float
    pressure: float
    flashback: bool
    state: str = ""
    depth: float = 0.0
    pump_on: bool = False


class PressureModel:
    """Line pressure for a sequence of timeline points (stateful, seeded).

    Pump off: baseline. Pump on in tissue: setpoint. After lumen entry at
    ``t_e``: ``P_v + (setpoint - P_v) * exp(-(t - t_e) / tau)``. Flashback
    shows one detection window after entry. Gaussian noise is added to every
    sample (one draw per sample regardless of sigma).
    """

    def __init__(self, vessel_pressure: float, config: NeedleConfig, rng, sigma: float | None = None):
        self.vessel_pressure = float(vessel_pressure)
        self.cfg = config
        self.sigma = config.pressure_sigma_mmHg if sigma is None else float(sigma)
        self.rng = rng
        self.entry_time = None

    def sample(self, tp: TimelinePoint) -> PressureSample:
        cfg = self.cfg
        pump = pump_state(tp.depth, cfg.pump_setpoint_mmHg, cfg.baseline_mmHg)
        noise = self.sigma * self.rng.standard_normal()
        flash = False
        if tp.in_lumen and pump.on:
            if self.entry_time is None:
                self.entry_time = tp.time
            el = tp.time - self.entry_time
            p = self.vessel_pressure + (cfg.pump_setpoint_mmHg - self.vessel_pressure) * math.exp(-el / cfg.tau_s)
            flash = el >= cfg.window_s - 1e-9
        else:
            p = pump.target_mmHg
        return PressureSample(tp.time, p + noise, flash, AttemptState(tp.state).value, tp.depth, pump.on)


def pressure_trace(timeline, vessel_pressure: float, config: NeedleConfig | None = None,
                   sigma: float | None = None, rng=None) -> list:
    config = config or NeedleConfig()
    model = PressureModel(vessel_pressure, config, np.random.default_rng(rng), sigma)
    return [model.sample(tp) for tp in timeline]


def detect_puncture(window, config: NeedleConfig | None = None) -> bool:
    """Flashback anywhere in the window, or mean rise above setpoint beyond threshold."""
    config = config or NeedleConfig()
    if len(window) != config.window_samples:
        raise ValueError(f"window must hold {config.window_samples} samples, got {len(window)}")
    if any(s.flashback for s in window):
        return True
    mean = math.fsum(s.pressure for s in window) / len(window)
    return mean - config.pump_setpoint_mmHg > config.threshold_mmHg


# -- geometry along the needle -------------------------------------------------

def _inside_tube(vessel, points, collapse):
    d, foot, tan = vessel.nearest(points)
    up = np.array([0.0, 0.0, 1.0])
    b = up - (tan @ up)[:, None] * tan
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    b = np.where(nb > 1e-9, b / np.maximum(nb, 1e-12), np.array([0.0, 1.0, 0.0]))
    a = np.cross(tan, b)
    rel = points - foot
    x = np.einsum("ij,ij->i", rel, a)
    y = np.einsum("ij,ij->i", rel, b)
    r = vessel.nominal_radius
    inside = (x / r) ** 2 + (y / (r * collapse)) ** 2 <= 1.0
    # the polyline foot of an end sample is not a cross-section
    s_ok = d < 2 * r + 1.0
    return inside & s_ok


def _first_run(mask):
    idx = np.nonzero(mask)[0]
    if len(idx) == 0:
        return None
    i0 = idx[0]
    i1 = i0
    while i1 + 1 < len(mask) and mask[i1 + 1]:
        i1 += 1
    return i0, i1


@dataclass
class NeedleGeometry:
    start: np.ndarray
    direction: np.ndarray
    s_skin: float
    s_target: float
    hit_vessel: object = None
    collapsed: bool = False
    s_contact: float | None = None
    s_exit: float | None = None

    def tip(self, s):
        return self.start + s * self.direction


def needle_geometry(phantom, pose, target, config: NeedleConfig, lateral_error: float = 0.0):
    """Needle line through ``target`` at the configured angle, approaching
    along the probe's elevation axis from the distal side.

    Returns ``None`` if the skin entry would fall under the probe footprint.
    """
    R = pose.rotation
    e = R[:, 1].copy()
    e[2] = 0.0
    e /= np.linalg.norm(e)
    lat = np.array([-e[1], e[0], 0.0])
    alpha = math.radians(config.insertion_angle_deg)
    d = math.cos(alpha) * e + np.array([0.0, 0.0, -math.sin(alpha)])
    T = np.asarray(target, dtype=float) + lateral_error * lat
    # skin crossing of the line through T, by bisection on depth
    lo, hi = 0.0, 500.0
    f = lambda s: float(phantom.depth_of(T - s * d)[0])
    if f(lo) <= 0:
        return None
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    s_entry = hi
    entry = T - s_entry * d
    horiz = float(np.dot(pose.position[:2] - entry[:2], e[:2]))
    if horiz < config.probe_to_needle_distance_mm - 1e-9:
        return None
    s_skin = config.approach_clearance_mm / math.sin(alpha)
    start = entry - s_skin * d
    return NeedleGeometry(start, d, s_skin, s_skin + s_entry)


def locate_lumen(phantom, geom: NeedleGeometry, config: NeedleConfig):
    """First vessel the needle line meets and the lumen extent along it."""
    r_max = max(v.nominal_radius for v in phantom.vessels)
    s_far = geom.s_target + 2.0 * r_max / math.sin(math.radians(config.insertion_angle_deg)) + 10.0
    s = np.arange(0.0, s_far, config.march_step_mm)
    P = geom.tip(s[:, None])
    best = None
    for v in phantom.vessels:
        run = _first_run(_inside_tube(v, P, 1.0))
        if run is not None and (best is None or run[0] < best[1][0]):
            best = (v, run)
    if best is None:
        return geom
    v, _ = best
    geom.hit_vessel = v
    c = phantom.collapse(v)
    if 2.0 * c * v.nominal_radius < config.capture_threshold_mm:
        geom.collapsed = True
        return geom
    run = _first_run(_inside_tube(v, P, c))
    if run is None:
        geom.collapsed = c < 1.0
        return geom
    geom.s_contact = float(s[run[0]])
    geom.s_exit = float(s[run[1]])
    return geom


# -- attempts ------------------------------------------------------------------

@dataclass
class AttemptResult:
    point: object
    success: bool
    reason: str | None
    states: list
    samples: list = field(default_factory=list)
    dither_cycles: int = 0
    punctured_vessel: str | None = None
    punctured_kind: str | None = None
    lumen_entry_s: float | None = None
    detection_s: float | None = None
    centering_iterations: int = 0

    def to_dict(self):
        return {
            "point": self.point.to_dict() if hasattr(self.point, "to_dict") else self.point,
            "outcome": "GuidewirePlaced" if self.success else "Failed",
            "success": self.success,
            "reason": self.reason,
            "states": [AttemptState(s).value for s in self.states],
            "dither_cycles": self.dither_cycles,
            "punctured_vessel": self.punctured_vessel,
            "punctured_kind": self.punctured_kind,
            "lumen_entry_s": self.lumen_entry_s,
            "detection_s": self.detection_s,
            "centering_iterations": self.centering_iterations,
            "n_samples": len(self.samples),
        }


class _Run:
    """Sample-by-sample driver for one attempt."""

    def __init__(self, phantom, geom, config, pressure, rng):
        self.ph = phantom
        self.g = geom
        self.cfg = config
        self.pm = pressure
        self.rng = rng
        self.t = 0.0
        self.s = 0.0
        self.samples = []
        self.states = []
        self.window = []
        self.in_lumen = False
        self.entry_time = None
        self.detected_at = None
        self.yield_at = None  # travel at which the wall gives way this push

    def depth(self, s):
        return float(self.ph.depth_of(self.g.tip(s))[0])

    def push(self, state):
        if not self.states or self.states[-1] != state:
            self.states.append(state)

    def new_push(self):
        g, cfg = self.g, self.cfg
        jitter = math.exp(cfg.tenting_variability * self.rng.standard_normal())
        if g.s_contact is None:
            self.yield_at = None
            return
        v = g.hit_vessel
        dfl = tenting_depth(v.nominal_radius, v.internal_pressure, cfg.tenting_d0_mm, cfg.tenting_k,
                            cfg.tenting_p_ref_mmHg) * jitter
        y = g.s_contact + dfl
        # wall tents all the way onto the back wall: no entry on this push
        self.yield_at = y if y <= g.s_exit else None

    def step(self, state, s_new):
        if self.yield_at is not None and not self.in_lumen and s_new >= self.yield_at:
            self.in_lumen = True
            self.entry_time = self.t
        self.s = s_new
        self.push(state)
        d = self.depth(self.s)
        smp = self.pm.sample(TimelinePoint(self.t, d, state, self.in_lumen))
        self.samples.append(smp)
        self.t = len(self.samples) * self.cfg.dt
        if smp.pump_on and state in (AttemptState.IN_TISSUE, AttemptState.DITHERING):
            self.window.append(smp)
            if len(self.window) == self.cfg.window_samples:
                if detect_puncture(self.window, self.cfg):
                    self.detected_at = smp.time
                self.window = []
        return self.detected_at is not None

    def move(self, state, s_to):
        ds = self.cfg.advance_speed_mm_s * self.cfg.dt
        n = max(1, int(math.ceil(abs(s_to - self.s) / ds - 1e-9)))
        s_from = self.s
        for k in range(1, n + 1):
            if self.step(state, s_from + (s_to - s_from) * k / n):
                return True
        return False

    def dwell(self, state, duration):
        for _ in range(int(round(duration / self.cfg.dt))):
            if self.step(state, self.s):
                return True
        return False


def _failed(point, reason, centering_iterations=0):
    return AttemptResult(point, False, reason, [AttemptState.FAILED], centering_iterations=centering_iterations)


def attempt_insertion(phantom, point, model, config: NeedleConfig | None = None, *, width: float = 38.0,
                      depth: float = 40.0, noise=None, rng=None, centering=None) -> AttemptResult:
    """Centre on the target, then drive the needle state machine to an outcome.

    ``centering`` is a dict of :func:`femaccess.planner.center_probe` options
    (gain, tol, max_iter). Independent child streams feed centering, needle
    scatter and pressure noise so that changing one stage never shifts
    another's random draws.
    """
    from .planner import center_probe

    config = config or NeedleConfig()
    centering = dict(centering or {})
    ss = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(
        rng if rng is not None else 0)
    r_center, r_needle, r_pressure = (np.random.default_rng(c) for c in ss.spawn(3))

    x, y = point.position[:2]
    z = float(phantom.surface.height(x, y))
    n = phantom.surface.normal(x, y)
    elev = np.asarray(model.axis, dtype=float).copy()
    elev[2] = 0.0
    pose = ProbePose(np.array([x, y, z]), matrix_to_quat(probe_rotation(n, elev)), 0, 0.0)
    try:
        cres = center_probe(phantom, pose, model, width, depth, noise, r_center,
                            gain=centering.get("gain", 1.0), tol=centering.get("tol", 1.0),
                            max_iter=centering.get("max_iter", 20))
    except TargetLostError:
        return _failed(point, "target lost")
    if not cres.converged:
        return _failed(point, "not centered", cres.iterations)

    v_c = float(cres.contour.centroid[1])
    target = cres.pose.image_to_world([width / 2.0, v_c], width)[0]
    lateral = config.lateral_bias_mm + config.lateral_sigma_mm * r_needle.standard_normal()
    geom = needle_geometry(phantom, cres.pose, target, config, lateral)
    if geom is None:
        return _failed(point, "probe clearance", cres.iterations)
    locate_lumen(phantom, geom, config)

    vp = geom.hit_vessel.internal_pressure if geom.hit_vessel is not None else 0.0
    run = _Run(phantom, geom, config, PressureModel(vp, config, r_pressure), r_needle)
    run.new_push()
    S = AttemptState
    done = run.move(S.APPROACH, geom.s_skin)
    done = done or run.dwell(S.SKIN_CONTACT, config.skin_dwell_s)
    done = done or run.move(S.IN_TISSUE, geom.s_target)
    done = done or run.dwell(S.IN_TISSUE, 2 * config.window_s)
    cycles = 0
    amp = config.dither_amplitude_mm
    while not done and cycles < config.max_dither_cycles:
        cycles += 1
        run.new_push()
        done = (run.move(S.DITHERING, geom.s_target + amp)
                or run.move(S.DITHERING, geom.s_target - amp)
                or run.move(S.DITHERING, geom.s_target)
                or run.dwell(S.IN_TISSUE, 2 * config.window_s))

    if done:
        run.push(S.PUNCTURED)
        run.push(S.GUIDEWIRE_PLACED)
        v = geom.hit_vessel
        return AttemptResult(point, True, None, run.states, run.samples, cycles, v.id, v.kind,
                             run.entry_time, run.detected_at, cres.iterations)

    if geom.hit_vessel is None:
        reason = "no intersection"
    elif geom.collapsed:
        reason = "vessel collapsed"
    else:
        reason = "tenting"
    run.move(S.FAILED, 0.0)
    return AttemptResult(point, False, reason, run.states, run.samples, cycles,
                         None, None, run.entry_time, None, cres.iterations)


@dataclass
class TrialReport:
    attempts: list
    per_vessel: dict
    per_model: dict
    reason: str | None = None

    @property
    def n_attempts(self):
        return len(self.attempts)

    @property
    def n_success(self):
        return sum(1 for a in self.attempts if a.success)

    def to_dict(self):
        return {
            "attempts": [dict(index=k, **a.to_dict()) for k, a in enumerate(self.attempts)],
            "per_vessel": self.per_vessel,
            "per_model": self.per_model,
            "totals": {"attempts": self.n_attempts, "successes": self.n_success,
                       "failures": self.n_attempts - self.n_success},
            "reason": self.reason,
        }


def run_trial(phantom, plan, models, config: NeedleConfig | None = None, *, seed: int = 0,
              width: float = 38.0, depth: float = 40.0, noise=None, centering=None) -> TrialReport:
    """Attempt plan points in order, skipping a vessel once it is cannulated."""
    config = config or NeedleConfig()
    by_id = {m.id: m for m in models}
    per_vessel = {v.id: {"kind": v.kind, "success": False, "punctures": 0} for v in phantom.vessels}
    per_model = {m.id: {"kind": m.kind, "attempts": 0, "success": False} for m in models}
    if not plan.points:
        return TrialReport([], per_vessel, per_model, plan.reason or "empty plan")
    children = np.random.SeedSequence(seed).spawn(len(plan.points))
    done = set()
    attempts = []
    for k, p in enumerate(plan.points):
        if p.vessel_id in done:
            continue
        res = attempt_insertion(phantom, p, by_id[p.vessel_id], config, width=width, depth=depth,
                                noise=noise, rng=children[k], centering=centering)
        attempts.append(res)
        per_model[p.vessel_id]["attempts"] += 1
        if res.success:
            done.add(p.vessel_id)
            per_model[p.vessel_id]["success"] = True
            per_vessel[res.punctured_vessel]["success"] = True
            per_vessel[res.punctured_vessel]["punctures"] += 1
    return TrialReport(attempts, per_vessel, per_model)


def trace_to_csv(samples, dest):
    """Write a pressure trace to a path or an open text stream."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w") as fh:
            return trace_to_csv(samples, fh)
    dest.write("time_s,pressure_mmHg,flashback,state,depth_mm,pump_on\n")
    for s in samples:
        dest.write(f"{s.time:.4f},{s.pressure!r},{int(s.flashback)},{s.state},{s.depth!r},{int(s.pump_on)}\n")

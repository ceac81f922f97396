"""Insertion planning along reconstructed vessels and in-image centering."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import TargetLostError, ValidationError
from .phantom import Contour2D, ProbePose, section_ellipse, synthesize_frame
from .geometry import ellipse_polygon
from .tracker import overlap_cost


@dataclass(frozen=True)
class InsertionPoint:
    vessel_id: str
    station: float  # arc length from the distal end, mm
    position: np.ndarray
    tangent: np.ndarray
    expected_depth: float
    param: float = 0.0  # spline station of the point
    vessel_kind: str | None = None

    def to_dict(self):
        return {
            "vessel_id": self.vessel_id,
            "vessel_kind": self.vessel_kind,
            "station_mm": float(self.station),
            "param_mm": float(self.param),
            "position": [float(v) for v in self.position],
            "tangent": [float(v) for v in self.tangent],
            "expected_depth_mm": float(self.expected_depth),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["vessel_id"], float(d["station_mm"]), np.asarray(d["position"], float),
                   np.asarray(d["tangent"], float), float(d["expected_depth_mm"]),
                   float(d.get("param_mm", 0.0)), d.get("vessel_kind"))


@dataclass(frozen=True)
class Workspace:
    """Reachable set: a sphere about the robot base, cut by a skin half-space.

    A point is accessible when it lies on the non-positive side of the plane
    through ``plane_point`` with normal ``plane_normal`` (below the skin).
    """

    center: tuple = (60.0, 0.0, 300.0)
    radius: float = 500.0
    plane_point: tuple = (0.0, 0.0, 0.0)
    plane_normal: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError("workspace radius must be > 0")

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        if np.linalg.norm(p - np.asarray(self.center)) > self.radius:
            return False
        return float((p - np.asarray(self.plane_point)) @ np.asarray(self.plane_normal)) <= 0.0

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        return cls(tuple(d.get("center", cls.center)), float(d.get("radius", cls.radius)),
                   tuple(d.get("plane_point", cls.plane_point)), tuple(d.get("plane_normal", cls.plane_normal)))

    def to_dict(self):
        return {"center": list(self.center), "radius": self.radius,
                "plane_point": list(self.plane_point), "plane_normal": list(self.plane_normal)}


@dataclass(frozen=True)
class PlannerConfig:
    spacing_mm: float = 10.0
    min_radius_mm: float = 2.0
    workspace: Workspace = field(default_factory=Workspace)
    proximal_first: bool = False
    centering_gain: float = 1.0
    centering_tol_mm: float = 1.0
    centering_max_iter: int = 20

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        ws = Workspace.from_dict(d.pop("workspace", {}))
        if "centering_max_iter" in d:
            d["centering_max_iter"] = int(d["centering_max_iter"])
        if "proximal_first" in d:
            d["proximal_first"] = bool(d["proximal_first"])
        return cls(workspace=ws, **d)


@dataclass
class InsertionPlan:
    points: list
    filters: dict = field(default_factory=dict)
    reason: str | None = None
    rejected: list = field(default_factory=list)  # (InsertionPoint, reason)

    def __len__(self):
        return len(self.points)

    def to_dict(self):
        return {
            "points": [p.to_dict() for p in self.points],
            "filters": self.filters,
            "reason": self.reason,
            "rejected": [{"vessel_id": p.vessel_id, "station_mm": float(p.station), "reason": r}
                         for p, r in self.rejected],
        }

    @classmethod
    def from_dict(cls, d):
        return cls([InsertionPoint.from_dict(p) for p in d["points"]], d.get("filters", {}), d.get("reason"))


def sample_points(vessel, spacing: float = 10.0, surface_height=None) -> list:
    """Candidates every ``spacing`` mm of arc length from the distal end.

    ``surface_height(xy)`` supplies the skin height for the expected depth;
    without it the depth is reported as NaN.
    """
    s_tab, arc = vessel.arc_length_table()
    total = arc[-1]
    n = int(math.floor(total / spacing + 1e-9)) + 1
    targets = spacing * np.arange(n)
    params = np.interp(targets, arc, s_tab)
    pos = vessel.point(params)
    tan = vessel.tangent(params)
    if surface_height is not None:
        depth = np.asarray(surface_height(pos[:, :2]), dtype=float) - pos[:, 2]
    else:
        depth = np.full(n, np.nan)
    return [InsertionPoint(vessel.id, float(targets[k]), pos[k], tan[k], float(depth[k]), float(params[k]),
                           getattr(vessel, "kind", None))
            for k in range(n)]


def filter_points(points, workspace: Workspace, min_radius: float, vessel_radius):
    """Drop unreachable points and points on vessels thinner than ``min_radius``.

    ``vessel_radius`` is a number or a ``vessel_id -> radius`` mapping.
    Returns ``(kept, rejected, reason)``; ``reason`` is set only when nothing
    survives and names the constraint(s) responsible.
    """
    kept, rejected = [], []
    for p in points:
        r = vessel_radius[p.vessel_id] if isinstance(vessel_radius, dict) else vessel_radius
        if r < min_radius:
            rejected.append((p, "radius"))
        elif not workspace.contains(p.position) or not (p.expected_depth > 0 or math.isnan(p.expected_depth)):
            rejected.append((p, "reachability"))
        else:
            kept.append(p)
    reason = None
    if not kept:
        counts = Counter(r for _, r in rejected)
        reason = ",".join(sorted(counts)) if counts else "no candidates"
    return kept, rejected, reason


def order_points(points, proximal, distal, proximal_first: bool = False) -> InsertionPlan:
    """Attempt order: ascending projection on the distal-to-proximal axis."""
    proximal = np.asarray(proximal, dtype=float)[:2]
    distal = np.asarray(distal, dtype=float)[:2]
    d = proximal - distal
    if np.linalg.norm(d) < 1e-9:
        raise ValidationError("landmarks must be distinct")
    axis = d / np.linalg.norm(d)
    sign = -1.0 if proximal_first else 1.0

    def key(p):
        proj = float((p.position[:2] - distal) @ axis)
        return (sign * proj, p.vessel_id, sign * p.station)

    return InsertionPlan(sorted(points, key=key))


def make_plan(models, proximal, distal, config: PlannerConfig | None = None, surface_height=None) -> InsertionPlan:
    config = config or PlannerConfig()
    candidates = []
    for m in models:
        candidates.extend(sample_points(m, config.spacing_mm, surface_height))
    radii = {m.id: m.radius for m in models}
    kept, rejected, reason = filter_points(candidates, config.workspace, config.min_radius_mm, radii)
    plan = order_points(kept, proximal, distal, config.proximal_first)
    plan.rejected = rejected
    plan.reason = reason
    if not models:
        plan.reason = "no vessels"
    plan.filters = {"workspace": config.workspace.to_dict(), "min_radius_mm": config.min_radius_mm,
                    "spacing_mm": config.spacing_mm, "proximal_first": config.proximal_first}
    return plan


# -- centering -----------------------------------------------------------------

def predicted_section(frame, model, dense_step: float = 0.25, end_margin: float = 5.0):
    """Expected image contour of ``model`` in ``frame``'s plane, or ``None``."""
    pose = frame.pose
    n_vec = pose.rotation[:, 1]
    n = max(2, int(math.ceil(model.length / dense_step)) + 1)
    s = np.linspace(0.0, model.length, n)
    P = model.point(s)
    # linear extension past the ends so a tilted plane through an end
    # station still finds its crossing
    ends = model.tangent(np.array([0.0, model.length]))
    s = np.concatenate([[-end_margin], s, [model.length + end_margin]])
    P = np.vstack([P[0] - end_margin * ends[0], P, P[-1] + end_margin * ends[1]])
    d = (P - pose.position) @ n_vec
    idx = np.nonzero(np.sign(d[:-1]) * np.sign(d[1:]) <= 0)[0]
    if len(idx) == 0:
        return None
    i = idx[0]
    w = 0.0 if d[i] == d[i + 1] else d[i] / (d[i] - d[i + 1])
    si = s[i] + w * (s[i + 1] - s[i])
    w_pt = P[i] + w * (P[i + 1] - P[i])
    si = min(max(si, 0.0), model.length)
    sec = section_ellipse(pose, frame.image_width_mm, w_pt, model.tangent(si), model.radius)
    if sec is None:
        return None
    center, major, a, b = sec
    return Contour2D(ellipse_polygon(center, major, a, b))


def centering_offset(frame, model):
    """Lateral offset of the target contour from the image centre.

    The target is the frame contour with the largest IoU against the model's
    predicted section. Returns ``(offset_mm, contour)``.
    """
    pred = predicted_section(frame, model)
    if pred is None or not frame.contours:
        raise TargetLostError("target vessel not visible in frame")
    best, best_cost = None, 1.0
    for c in frame.contours:
        cost = overlap_cost(pred, c)
        if cost < best_cost:
            best, best_cost = c, cost
    if best is None:
        raise TargetLostError("no contour overlaps the predicted section")
    return float(best.centroid[0] - frame.image_width_mm / 2.0), best


@dataclass
class CenteringResult:
    pose: ProbePose
    offsets: list
    converged: bool
    contour: Contour2D | None = None
    frame: object = None

    @property
    def iterations(self):
        return len(self.offsets) - 1


def center_probe(phantom, pose, model, width, depth, noise, rng, gain: float = 1.0, tol: float = 1.0,
                 max_iter: int = 20, frame_id0: int = 0, max_lost_frames: int = 3) -> CenteringResult:
    """Servo the probe laterally until the target sits within ``tol`` of centre.

    Each correction translates the probe by ``gain * offset`` along its
    lateral axis (the image content shifts by ``-gain * offset``) and reseats
    it on the skin. Frames where the target is missing are retaken; more than
    ``max_lost_frames`` in a row raise :class:`TargetLostError`.
    """
    offsets = []
    lost = 0
    contour = frame = None
    for it in range(max_iter + 1):
        frame = synthesize_frame(phantom, pose, width, depth, noise, rng)
        frame.frame_id = frame_id0 + it
        try:
            offset, contour = centering_offset(frame, model)
        except TargetLostError:
            lost += 1
            if lost > max_lost_frames:
                raise
            continue
        lost = 0
        offsets.append(offset)
        if abs(offset) <= tol:
            return CenteringResult(pose, offsets, True, contour, frame)
        if it == max_iter:
            break
        lateral = pose.rotation[:, 0]
        new = pose.position + gain * offset * lateral
        new[2] = float(phantom.surface.height(new[0], new[1]))
        pose = ProbePose(new, pose.orientation, frame_id0 + it + 1, pose.timestamp)
    return CenteringResult(pose, offsets, False, contour, frame)

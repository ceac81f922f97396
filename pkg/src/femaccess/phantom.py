"""Ground-truth vascular phantoms and synthetic sensor data.

A phantom is a height-field skin surface over a rectangular x-y domain with
one or more tubular vessels below it. World coordinates are millimetres with
+z pointing up out of the skin.

Probe frame convention (used by every module that touches poses): the
rotation ``R`` of a :class:`ProbePose` has columns ``(x, y, z)`` where ``x``
is the image lateral axis, ``y`` the elevational axis (the image-plane
normal) and ``z`` the beam/depth axis. An image point ``(u, v)`` in an image
of width ``W`` sits at ``position + R @ (u - W/2, 0, v)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .errors import ValidationError
from .geometry import ellipse_polygon, polygon_area, polygon_centroid, quat_to_matrix

CONTOUR_VERTICES = 32
DENSE_STEP_MM = 0.25


# -- scenario ----------------------------------------------------------------

@dataclass(frozen=True)
class ContourNoise:
    centroid_sigma_mm: float = 0.0
    dropout: float = 0.0
    false_positive_rate: float = 0.0
    # extra miss probability per unit of collapse (1 - c); segmentation
    # trained on normotensive vessels loses flattened veins
    collapse_miss_gain: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.dropout <= 1.0:
            raise ValidationError(f"dropout must lie in [0, 1], got {self.dropout}")
        if self.false_positive_rate < 0:
            raise ValidationError("false_positive_rate must be >= 0")
        if self.centroid_sigma_mm < 0:
            raise ValidationError("centroid_sigma_mm must be >= 0")
        if self.collapse_miss_gain < 0:
            raise ValidationError("collapse_miss_gain must be >= 0")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(v) for k, v in (d or {}).items()})

    def to_dict(self):
        return {
            "centroid_sigma_mm": self.centroid_sigma_mm,
            "dropout": self.dropout,
            "false_positive_rate": self.false_positive_rate,
            "collapse_miss_gain": self.collapse_miss_gain,
        }


@dataclass(frozen=True)
class ShockScenario:
    map_mmHg: float = 65.0
    collapse_onset_mmHg: float = 40.0
    collapse_floor: float = 0.25
    noise: ContourNoise = field(default_factory=ContourNoise)
    rng_seed: int = 0

    def __post_init__(self):
        if self.map_mmHg < 0:
            raise ValidationError("map_mmHg must be >= 0")
        if self.collapse_onset_mmHg <= 0:
            raise ValidationError("collapse_onset_mmHg must be > 0")
        if not 0.0 < self.collapse_floor <= 1.0:
            raise ValidationError("collapse_floor must lie in (0, 1]")

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        noise = ContourNoise.from_dict(d.pop("noise", {}))
        seed = int(d.pop("rng_seed", 0))
        return cls(noise=noise, rng_seed=seed, **{k: float(v) for k, v in d.items()})

    def to_dict(self):
        return {
            "map_mmHg": self.map_mmHg,
            "collapse_onset_mmHg": self.collapse_onset_mmHg,
            "collapse_floor": self.collapse_floor,
            "noise": self.noise.to_dict(),
            "rng_seed": self.rng_seed,
        }


def collapse_factor(kind: str, internal_pressure: float, scenario: ShockScenario) -> float:
    """Fraction of the nominal minor axis a vessel keeps under hypotension.

    Arteries never collapse. Veins follow a linear law in MAP from 1 at the
    onset pressure down to ``collapse_floor`` at MAP 0.
    """
    if internal_pressure < 0:
        raise ValidationError("internal_pressure must be >= 0")
    if kind != "vein" or scenario.map_mmHg >= scenario.collapse_onset_mmHg:
        return 1.0
    floor = scenario.collapse_floor
    return floor + (1.0 - floor) * scenario.map_mmHg / scenario.collapse_onset_mmHg


# -- surface -----------------------------------------------------------------

@dataclass(frozen=True)
class HeightField:
    """Quadratic skin surface ``z(x, y)`` over a rectangular domain.

    ``z = z0 + gx*x + gy*y + 0.5*(cxx*x^2 + cyy*y^2) + cxy*x*y``
    """

    x_range: tuple
    y_range: tuple
    z0: float = 0.0
    slope: tuple = (0.0, 0.0)
    curvature: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.x_range[1] > self.x_range[0] and self.y_range[1] > self.y_range[0]):
            raise ValidationError("surface domain extents must be positive")

    def height(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        gx, gy = self.slope
        cxx, cyy, cxy = self.curvature
        return self.z0 + gx * x + gy * y + 0.5 * (cxx * x * x + cyy * y * y) + cxy * x * y

    def gradient(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        gx, gy = self.slope
        cxx, cyy, cxy = self.curvature
        return gx + cxx * x + cxy * y, gy + cyy * y + cxy * x

    def normal(self, x, y):
        zx, zy = self.gradient(x, y)
        n = np.stack(np.broadcast_arrays(-zx, -zy, np.ones_like(zx, dtype=float)), axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def contains(self, x, y, margin=0.0):
        x = np.asarray(x)
        y = np.asarray(y)
        return ((x >= self.x_range[0] - margin) & (x <= self.x_range[1] + margin)
                & (y >= self.y_range[0] - margin) & (y <= self.y_range[1] + margin))

    @classmethod
    def from_dict(cls, d):
        return cls(
            x_range=tuple(float(v) for v in d["x_range"]),
            y_range=tuple(float(v) for v in d["y_range"]),
            z0=float(d.get("z0", 0.0)),
            slope=tuple(float(v) for v in d.get("slope", (0.0, 0.0))),
            curvature=tuple(float(v) for v in d.get("curvature", (0.0, 0.0, 0.0))),
        )

    def to_dict(self):
        return {
            "x_range": list(self.x_range),
            "y_range": list(self.y_range),
            "z0": self.z0,
            "slope": list(self.slope),
            "curvature": list(self.curvature),
        }


# -- vessels -----------------------------------------------------------------

class GroundTruthVessel:
    """A tube of constant nominal radius around a smooth centerline.

    The centerline interpolates the control points with a cubic spline in
    cumulative chord length (straight segment for two points).
    """

    def __init__(self, id, kind, centerline, nominal_radius, internal_pressure):
        self.id = str(id)
        self.kind = kind
        self.control_points = np.asarray(centerline, dtype=float)
        self.nominal_radius = float(nominal_radius)
        self.internal_pressure = float(internal_pressure)
        if kind not in ("artery", "vein"):
            raise ValidationError(f"vessel {self.id}: kind must be artery or vein, got {kind!r}")
        if self.control_points.ndim != 2 or self.control_points.shape[1] != 3 or len(self.control_points) < 2:
            raise ValidationError(f"vessel {self.id}: need >= 2 control points of (x, y, z)")
        if not self.nominal_radius > 0:
            raise ValidationError(f"vessel {self.id}: nominal_radius must be > 0")
        if self.internal_pressure < 0:
            raise ValidationError(f"vessel {self.id}: internal_pressure must be >= 0")
        chord = np.linalg.norm(np.diff(self.control_points, axis=0), axis=1)
        if np.any(chord <= 0):
            raise ValidationError(f"vessel {self.id}: repeated control points")
        self._knots = np.concatenate([[0.0], np.cumsum(chord)])
        if len(self.control_points) == 2:
            self._spline = None
        else:
            self._spline = CubicSpline(self._knots, self.control_points, axis=0)

    @property
    def length(self) -> float:
        return float(self._knots[-1])

    def point(self, s):
        s = np.asarray(s, dtype=float)
        if self._spline is None:
            a, b = self.control_points
            return a + (s[..., None] / self.length) * (b - a)
        return self._spline(s)

    def tangent(self, s):
        s = np.asarray(s, dtype=float)
        if self._spline is None:
            a, b = self.control_points
            t = np.broadcast_to((b - a) / self.length, s.shape + (3,))
        else:
            t = self._spline(s, 1)
        return t / np.linalg.norm(t, axis=-1, keepdims=True)

    @cached_property
    def dense_s(self) -> np.ndarray:
        n = max(2, int(math.ceil(self.length / DENSE_STEP_MM)) + 1)
        return np.linspace(0.0, self.length, n)

    @cached_property
    def dense(self) -> np.ndarray:
        return self.point(self.dense_s)

    @cached_property
    def _tree(self):
        return cKDTree(self.dense)

    def nearest(self, points):
        """Closest centerline points to ``points`` (N, 3).

        Returns ``(distance, foot_point, tangent)`` using exact projection onto
        the densified polyline.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        _, idx = self._tree.query(pts)
        P = self.dense
        best_d = np.full(len(pts), np.inf)
        best_f = np.zeros_like(pts)
        best_t = np.zeros_like(pts)
        for off in (-1, 0):
            i0 = np.clip(idx + off, 0, len(P) - 2)
            a, b = P[i0], P[i0 + 1]
            ab = b - a
            L2 = np.einsum("ij,ij->i", ab, ab)
            t = np.clip(np.einsum("ij,ij->i", pts - a, ab) / L2, 0.0, 1.0)
            foot = a + t[:, None] * ab
            d = np.linalg.norm(pts - foot, axis=1)
            better = d < best_d
            best_d[better] = d[better]
            best_f[better] = foot[better]
            best_t[better] = (ab / np.sqrt(L2)[:, None])[better]
        return best_d, best_f, best_t

    def plane_crossings(self, origin, normal):
        """Points where the centerline pierces the plane, with tangents."""
        n = np.asarray(normal, dtype=float)
        d = (self.dense - origin) @ n
        sign = np.sign(d)
        idx = np.nonzero(sign[:-1] * sign[1:] <= 0)[0]
        out = []
        last_s = None
        for i in idx:
            if d[i] == d[i + 1]:
                continue
            s0, s1 = self.dense_s[i], self.dense_s[i + 1]
            s = s0 + (s1 - s0) * d[i] / (d[i] - d[i + 1])
            # Newton refinement on the exact curve
            for _ in range(3):
                f = float((self.point(s) - origin) @ n)
                df = float(self._derivative(s) @ n)
                if df == 0:
                    break
                s = float(np.clip(s - f / df, s0, s1))
            if last_s is not None and abs(s - last_s) < 1e-9:
                continue
            last_s = s
            out.append((self.point(s), self.tangent(s)))
        return out

    def _derivative(self, s):
        if self._spline is None:
            a, b = self.control_points
            return (b - a) / self.length
        return self._spline(s, 1)

    def to_dict(self):
        return {
            "id": self.id,
            "kind": self.kind,
            "centerline": self.control_points.tolist(),
            "nominal_radius": self.nominal_radius,
            "internal_pressure": self.internal_pressure,
        }


@dataclass
class Phantom:
    vessels: list
    surface: HeightField
    scenario: ShockScenario

    def vessel(self, vessel_id):
        for v in self.vessels:
            if v.id == vessel_id:
                return v
        raise KeyError(vessel_id)

    def collapse(self, vessel) -> float:
        return collapse_factor(vessel.kind, vessel.internal_pressure, self.scenario)

    def depth_of(self, points):
        p = np.atleast_2d(points)
        return self.surface.height(p[:, 0], p[:, 1]) - p[:, 2]

    def with_scenario(self, **changes):
        """Copy with scenario fields replaced (vessels are shared, immutable)."""
        d = self.scenario.to_dict()
        d.update(changes)
        return Phantom(self.vessels, self.surface, ShockScenario.from_dict(d))


# -- building ------------------------------------------------------------------

def load_phantom_spec(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def build_phantom(spec) -> Phantom:
    """Build and validate a phantom from a spec dict or a JSON path."""
    if isinstance(spec, (str, Path)):
        spec = load_phantom_spec(spec)
    try:
        surface = HeightField.from_dict(spec["surface"])
        scenario = ShockScenario.from_dict(spec.get("scenario", {}))
        vessel_specs = spec["vessels"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"phantom spec missing field: {exc}") from exc
    if not vessel_specs:
        raise ValidationError("phantom needs at least one vessel")

    vessels = []
    seen = set()
    for vs in vessel_specs:
        vid = str(vs.get("id", len(vessels)))
        if vid in seen:
            raise ValidationError(f"duplicate vessel id {vid!r}")
        seen.add(vid)
        if "centerline_depth" in vs:
            # (x, y, depth below skin) control points
            cd = np.asarray(vs["centerline_depth"], dtype=float)
            if cd.ndim != 2 or cd.shape[1] != 3:
                raise ValidationError(f"vessel {vid}: centerline_depth rows must be (x, y, depth)")
            pts = np.column_stack([cd[:, 0], cd[:, 1], surface.height(cd[:, 0], cd[:, 1]) - cd[:, 2]])
        elif "centerline" in vs:
            pts = vs["centerline"]
        else:
            raise ValidationError(f"vessel {vid}: missing centerline")
        try:
            v = GroundTruthVessel(
                vid, vs.get("kind"), pts,
                vs.get("nominal_radius", vs.get("radius", 0.0)),
                vs.get("internal_pressure", 0.0),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"vessel {vid}: {exc}") from exc
        depth = surface.height(v.dense[:, 0], v.dense[:, 1]) - v.dense[:, 2]
        bad = np.nonzero(depth <= 0)[0]
        if len(bad):
            s = v.dense_s[bad[0]]
            raise ValidationError(
                f"vessel {vid} lies above the skin surface at station {s:.2f} mm "
                f"(depth {depth[bad[0]]:.2f} mm)"
            )
        vessels.append(v)
    return Phantom(vessels, surface, scenario)


def phantom_to_spec(phantom: Phantom) -> dict:
    return {
        "schema_version": 1,
        "surface": phantom.surface.to_dict(),
        "vessels": [v.to_dict() for v in phantom.vessels],
        "scenario": phantom.scenario.to_dict(),
    }


def random_phantom_spec(rng, *, radius_range=(2.0, 4.0), depth_range=(10.0, 25.0),
                        map_mmHg=65.0, noise=None, curved=True) -> dict:
    """Two roughly parallel vessels running along x, 12-20 mm apart.

    The domain is x in [0, 120], y in [-40, 40]; pair with a crop region
    inside it, e.g. corners spanning x in [10, 110], y in [-30, 30].
    """
    rng = np.random.default_rng(rng)
    r = rng.uniform(*radius_range, size=2)
    y0 = rng.uniform(-12.0, -6.0)
    y1 = y0 + rng.uniform(12.0, 20.0)
    xs = np.array([-10.0, 40.0, 80.0, 130.0])
    vessels = []
    kinds = ["vein", "artery"]
    for k, (yc, rad) in enumerate(zip((y0, y1), r)):
        lo, hi = depth_range
        dmid = rng.uniform(lo + 1.0, hi - 1.0)
        if curved:
            dy = rng.uniform(-2.0, 2.0, size=len(xs))
            dz = rng.uniform(-1.0, 1.0, size=len(xs))
        else:
            dy = np.zeros(len(xs))
            dz = np.zeros(len(xs))
        depths = np.clip(dmid + dz, *depth_range)
        vessels.append({
            "id": kinds[k],
            "kind": kinds[k],
            "centerline_depth": np.column_stack([xs, yc + dy, depths]).tolist(),
            "nominal_radius": float(rad),
            "internal_pressure": float(map_mmHg if kinds[k] == "artery" else 8.0),
        })
    return {
        "schema_version": 1,
        "surface": {"x_range": [0.0, 120.0], "y_range": [-40.0, 40.0], "z0": 0.0,
                    "slope": [float(rng.uniform(-0.05, 0.05)), 0.0],
                    "curvature": [0.0, 0.0, 0.0]},
        "vessels": vessels,
        "scenario": {"map_mmHg": float(map_mmHg), "noise": dict(noise or {}),
                     "rng_seed": int(rng.integers(0, 2**31 - 1))},
    }


# -- sensor data -------------------------------------------------------------

@dataclass(frozen=True)
class ProbePose:
    position: np.ndarray
    orientation: np.ndarray  # unit quaternion (w, x, y, z)
    frame_id: int = 0
    timestamp: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.orientation, dtype=float)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValidationError(f"orientation quaternion not unit norm: {np.linalg.norm(q)}")
        object.__setattr__(self, "orientation", q)
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def image_to_world(self, uv, width):
        """Map image points ``(u, v)`` (N, 2) to world coordinates."""
        uv = np.atleast_2d(np.asarray(uv, dtype=float))
        local = np.column_stack([uv[:, 0] - width / 2.0, np.zeros(len(uv)), uv[:, 1]])
        return self.position + local @ self.rotation.T

    def world_to_image(self, pts, width):
        """Inverse of :meth:`image_to_world`; also returns the out-of-plane offset."""
        local = (np.atleast_2d(pts) - self.position) @ self.rotation
        return np.column_stack([local[:, 0] + width / 2.0, local[:, 2]]), local[:, 1]

    def to_dict(self):
        return {
            "frame_id": int(self.frame_id),
            "timestamp": float(self.timestamp),
            "position": [float(v) for v in self.position],
            "orientation": [float(v) for v in self.orientation],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["position"], float), np.asarray(d["orientation"], float),
                   int(d["frame_id"]), float(d.get("timestamp", 0.0)))


class Contour2D:
    """Closed polygon in image millimetres (lateral u, depth v).

    ``kind`` and ``source`` carry the detector's class label and, for
    synthetic data, the ground-truth vessel id (``None`` for false positives).
    """

    __slots__ = ("polygon", "kind", "source", "_area", "_centroid")

    def __init__(self, polygon, kind=None, source=None):
        self.polygon = np.asarray(polygon, dtype=float)
        self.kind = kind
        self.source = source
        if self.polygon.ndim != 2 or self.polygon.shape[1] != 2 or len(self.polygon) < 3:
            raise ValidationError("contour needs >= 3 two-dimensional points")
        self._area = polygon_area(self.polygon)
        if not self._area > 0:
            raise ValidationError("contour area must be positive")
        self._centroid = None

    @property
    def area(self) -> float:
        return self._area

    @property
    def centroid(self) -> np.ndarray:
        if self._centroid is None:
            self._centroid = polygon_centroid(self.polygon)
        return self._centroid

    @property
    def bounds(self):
        lo = self.polygon.min(axis=0)
        hi = self.polygon.max(axis=0)
        return lo[0], lo[1], hi[0], hi[1]

    def to_dict(self):
        return {"polygon": self.polygon.tolist(), "kind": self.kind, "source": self.source}

    @classmethod
    def from_dict(cls, d):
        return cls(d["polygon"], d.get("kind"), d.get("source"))


@dataclass
class UltrasoundFrame:
    frame_id: int
    pose: ProbePose
    image_width_mm: float
    image_depth_mm: float
    contours: list
    pass_index: int = 0

    def to_dict(self):
        return {
            "frame_id": int(self.frame_id),
            "pass_index": int(self.pass_index),
            "image_width_mm": float(self.image_width_mm),
            "image_depth_mm": float(self.image_depth_mm),
            "pose": self.pose.to_dict(),
            "contours": [c.to_dict() for c in self.contours],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["frame_id"]), ProbePose.from_dict(d["pose"]),
                   float(d["image_width_mm"]), float(d["image_depth_mm"]),
                   [Contour2D.from_dict(c) for c in d["contours"]], int(d.get("pass_index", 0)))


def section_ellipse(pose, width, point, tangent, radius, collapse=1.0):
    """Image-plane ellipse of a tube crossing the plane of ``pose``.

    Returns ``(center_uv, major_dir_uv, a, b)`` with ``a`` the semi-axis along
    the projected tangent and ``b`` the (collapsed) minor semi-axis, or
    ``None`` when the tube runs too close to parallel with the image plane.
    """
    R = pose.rotation
    uv, _ = pose.world_to_image(point, width)
    tl = R.T @ tangent
    cos_t = abs(tl[1])
    if cos_t < 0.25:
        return None
    tp = np.array([tl[0], tl[2]])
    norm_tp = np.linalg.norm(tp)
    if norm_tp < 1e-9:
        major = np.array([1.0, 0.0])
    else:
        major = tp / norm_tp
    return uv[0], major, radius / cos_t, radius * collapse


def synthesize_frame(phantom: Phantom, pose: ProbePose, width: float, depth: float,
                     noise: ContourNoise | None, rng, pass_index: int = 0) -> UltrasoundFrame:
    """Synthetic segmentation output for one probe pose.

    Random draws per vessel are fixed (one uniform, two normals) so that
    streams stay aligned across scenarios that differ only in MAP.
    """
    if width <= 0 or depth <= 0:
        raise ValidationError("image extents must be positive")
    noise = noise if noise is not None else phantom.scenario.noise
    normal = pose.rotation[:, 1]
    contours = []
    for v in phantom.vessels:
        u_det = rng.random()
        jitter = rng.standard_normal(2) * noise.centroid_sigma_mm
        c = phantom.collapse(v)
        p_detect = (1.0 - noise.dropout) * max(0.0, 1.0 - noise.collapse_miss_gain * (1.0 - c))
        if u_det >= p_detect:
            continue
        for point, tangent in v.plane_crossings(pose.position, normal):
            sec = section_ellipse(pose, width, point, tangent, v.nominal_radius, c)
            if sec is None:
                continue
            center, major, a, b = sec
            poly = ellipse_polygon(center + jitter, major, a, b, CONTOUR_VERTICES)
            if (poly[:, 0].min() < 0 or poly[:, 0].max() > width
                    or poly[:, 1].min() < 0 or poly[:, 1].max() > depth):
                continue  # truncated by the image edge
            contours.append(Contour2D(poly, v.kind, v.id))
    n_fp = rng.poisson(noise.false_positive_rate) if noise.false_positive_rate > 0 else 0
    for _ in range(n_fp):
        a, b = rng.uniform(0.5, 1.0, size=2)
        ang = rng.uniform(0.0, np.pi)
        center = rng.uniform([1.0, 1.0], [width - 1.0, depth - 1.0])
        poly = ellipse_polygon(center, (np.cos(ang), np.sin(ang)), a, b, CONTOUR_VERTICES)
        contours.append(Contour2D(poly, None, None))
    return UltrasoundFrame(pose.frame_id, pose, width, depth, contours, pass_index)


@dataclass
class PointCloud:
    points: np.ndarray
    normals: np.ndarray

    def __len__(self):
        return len(self.points)

    def subset(self, mask):
        return PointCloud(self.points[mask], self.normals[mask])

    def to_csv(self, path):
        arr = np.hstack([self.points, self.normals])
        with open(path, "w") as fh:
            fh.write("x,y,z,nx,ny,nz\n")
            for row in arr:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path):
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if arr.size == 0:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)))
        return cls(arr[:, :3].copy(), arr[:, 3:6].copy())


def scan_surface(phantom: Phantom, pitch: float = 1.0, sigma: float = 0.0, rng=None) -> PointCloud:
    """Grid samples of the skin with Gaussian depth noise and analytic normals."""
    if pitch <= 0:
        raise ValidationError("sample pitch must be > 0")
    s = phantom.surface
    xs = np.arange(s.x_range[0], s.x_range[1] + 1e-9, pitch)
    ys = np.arange(s.y_range[0], s.y_range[1] + 1e-9, pitch)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    X, Y = X.ravel(), Y.ravel()
    Z = s.height(X, Y)
    if sigma > 0:
        rng = np.random.default_rng(rng)
        Z = Z + rng.normal(0.0, sigma, size=Z.shape)
    return PointCloud(np.column_stack([X, Y, Z]), s.normal(X, Y))

"""Surface cropping, raster sweep planning and admittance surface following."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import PipelineError, ValidationError
from .geometry import is_simple_polygon, matrix_to_quat, points_in_polygon, polygon_signed_area, probe_rotation
from .phantom import PointCloud, ProbePose, synthesize_frame


@dataclass(frozen=True)
class CropRegion:
    """Four user-marked corners plus the hip (proximal) and knee (distal) landmarks."""

    corners: np.ndarray
    proximal: np.ndarray
    distal: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=float)
        object.__setattr__(self, "corners", c)
        object.__setattr__(self, "proximal", np.asarray(self.proximal, dtype=float)[:2])
        object.__setattr__(self, "distal", np.asarray(self.distal, dtype=float)[:2])
        if c.shape != (4, 2):
            raise ValidationError("crop region needs exactly four (x, y) corners")
        for i in range(4):
            a, b, d = c[i - 1], c[i], c[(i + 1) % 4]
            cross = (b[0] - a[0]) * (d[1] - a[1]) - (b[1] - a[1]) * (d[0] - a[0])
            if abs(cross) < 1e-9:
                raise ValidationError(f"crop corners {(i - 1) % 4}, {i}, {(i + 1) % 4} are collinear")
        if not is_simple_polygon(c):
            raise ValidationError("crop quadrilateral self-intersects")
        if abs(polygon_signed_area(c)) <= 0:
            raise ValidationError("crop quadrilateral has zero area")
        if np.linalg.norm(self.proximal - self.distal) < 1e-9:
            raise ValidationError("proximal and distal landmarks coincide")

    @property
    def axis(self) -> np.ndarray:
        """Unit (x, y) vector pointing from the distal to the proximal landmark."""
        d = self.proximal - self.distal
        return d / np.linalg.norm(d)

    @property
    def axis3(self) -> np.ndarray:
        return np.array([self.axis[0], self.axis[1], 0.0])

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["corners"], float), np.asarray(d["proximal"], float),
                   np.asarray(d["distal"], float))

    def to_dict(self):
        return {"corners": self.corners.tolist(), "proximal": self.proximal.tolist(),
                "distal": self.distal.tolist()}


def crop_cloud(cloud: PointCloud, region: CropRegion) -> PointCloud:
    """Keep the points whose (x, y) fall inside the crop quadrilateral."""
    if len(cloud) == 0:
        return cloud
    return cloud.subset(points_in_polygon(cloud.points[:, :2], region.corners))


class SurfaceEstimate:
    """Local height and normal from a point cloud via k-nearest plane fits."""

    def __init__(self, cloud: PointCloud, k: int = 8):
        if len(cloud) < 3:
            raise PipelineError("surface estimate needs at least 3 points", "empty cloud")
        self.cloud = cloud
        self.k = min(k, len(cloud))
        self._tree = cKDTree(cloud.points[:, :2])

    def height_normal(self, xy):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        _, idx = self._tree.query(xy, k=self.k)
        idx = np.atleast_2d(idx).reshape(len(xy), -1)
        heights = np.empty(len(xy))
        normals = np.empty((len(xy), 3))
        for i, nb in enumerate(idx):
            P = self.cloud.points[nb]
            A = np.column_stack([np.ones(len(P)), P[:, 0] - xy[i, 0], P[:, 1] - xy[i, 1]])
            coef, *_ = np.linalg.lstsq(A, P[:, 2], rcond=None)
            heights[i] = coef[0]
            n = np.array([-coef[1], -coef[2], 1.0])
            normals[i] = n / np.linalg.norm(n)
        return heights, normals

    def height(self, xy):
        return self.height_normal(xy)[0]


@dataclass
class ScanPath:
    passes: list
    probe_width_mm: float
    pass_pitch_mm: float
    pass_centers: list
    travel_axis: np.ndarray
    lateral_axis: np.ndarray
    image_depth_mm: float = 40.0

    @property
    def poses(self):
        return [p for ps in self.passes for p in ps]

    def footprints(self):
        w = self.probe_width_mm
        return [(c - w / 2.0, c + w / 2.0) for c in self.pass_centers]

    def travel_direction(self, k) -> np.ndarray:
        ps = self.passes[k]
        d = ps[-1].position[:2] - ps[0].position[:2]
        if np.linalg.norm(d) < 1e-12:
            return self.travel_axis[:2] * (1 if k % 2 == 0 else -1)
        return d / np.linalg.norm(d)

    def covers(self, points) -> np.ndarray:
        """Which ``points`` lie laterally inside at least one footprint."""
        lat = np.asarray(points)[:, :2] @ self.lateral_axis[:2]
        ok = np.zeros(len(lat), dtype=bool)
        for lo, hi in self.footprints():
            ok |= (lat >= lo - 1e-9) & (lat <= hi + 1e-9)
        return ok

    def to_dict(self):
        return {
            "probe_width_mm": self.probe_width_mm,
            "pass_pitch_mm": self.pass_pitch_mm,
            "image_depth_mm": self.image_depth_mm,
            "travel_axis": [float(v) for v in self.travel_axis],
            "lateral_axis": [float(v) for v in self.lateral_axis],
            "passes": [
                {"center_mm": float(c), "poses": [p.to_dict() for p in ps]}
                for c, ps in zip(self.pass_centers, self.passes)
            ],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            passes=[[ProbePose.from_dict(p) for p in ps["poses"]] for ps in d["passes"]],
            probe_width_mm=float(d["probe_width_mm"]),
            pass_pitch_mm=float(d["pass_pitch_mm"]),
            pass_centers=[float(ps["center_mm"]) for ps in d["passes"]],
            travel_axis=np.asarray(d["travel_axis"], float),
            lateral_axis=np.asarray(d["lateral_axis"], float),
            image_depth_mm=float(d.get("image_depth_mm", 40.0)),
        )


def pass_layout(lat_min: float, lat_max: float, probe_width: float):
    """Pass pitch and lateral centres for footprints overlapping by one third."""
    pitch = probe_width * 2.0 / 3.0
    extent = lat_max - lat_min
    if extent <= probe_width:
        n = 1
    else:
        n = int(math.ceil((extent - probe_width) / pitch - 1e-9)) + 1
    centers = [lat_min + probe_width / 2.0 + k * pitch for k in range(n)]
    return pitch, centers


def generate_raster_path(cloud: PointCloud, region: CropRegion, probe_width: float = 38.0, *,
                         standoff: float = 0.0, step: float = 1.0, image_depth: float = 40.0,
                         orientation: str = "along", speed_mm_s: float = 10.0,
                         surface: SurfaceEstimate | None = None) -> ScanPath:
    """Serpentine raster over the cropped cloud.

    Passes run along the proximal-distal axis (``orientation="along"``) or
    across it. Probe poses sit on the locally fitted surface, beam along the
    inward normal, elevation along the pass axis.
    """
    if probe_width <= 0:
        raise ValidationError("probe_width must be > 0")
    if step <= 0:
        raise ValidationError("pose step must be > 0")
    if len(cloud) == 0:
        raise PipelineError("cropped cloud is empty; nothing to scan", "empty cloud")
    axis = region.axis
    if orientation == "along":
        travel = axis
    elif orientation == "across":
        travel = np.array([-axis[1], axis[0]])
    else:
        raise ValidationError(f"unknown pass orientation {orientation!r}")
    lateral = np.array([-travel[1], travel[0]])
    surface = surface or SurfaceEstimate(cloud)

    xy = cloud.points[:, :2]
    lat = xy @ lateral
    along = xy @ travel
    pitch, centers = pass_layout(float(lat.min()), float(lat.max()), probe_width)
    elevation = np.array([travel[0], travel[1], 0.0])

    passes = []
    frame_id = 0
    dt = step / speed_mm_s
    for k, c in enumerate(centers):
        band = np.abs(lat - c) <= probe_width / 2.0 + 1e-9
        if not band.any():
            band = np.ones(len(lat), dtype=bool)
        a0, a1 = float(along[band].min()), float(along[band].max())
        n = int(math.floor((a1 - a0) / step + 1e-9)) + 1
        stations = a0 + step * np.arange(n)
        if k % 2 == 1:
            stations = stations[::-1]
        pts = stations[:, None] * travel + c * lateral
        h, normals = surface.height_normal(pts)
        poses = []
        for i in range(n):
            R = probe_rotation(normals[i], elevation)
            pos = np.array([pts[i, 0], pts[i, 1], h[i]]) + standoff * normals[i]
            poses.append(ProbePose(pos, matrix_to_quat(R), frame_id, frame_id * dt))
            frame_id += 1
        passes.append(poses)
    return ScanPath(passes, float(probe_width), pitch, centers,
                    np.array([travel[0], travel[1], 0.0]), np.array([lateral[0], lateral[1], 0.0]),
                    float(image_depth))


# -- admittance ----------------------------------------------------------------

@dataclass(frozen=True)
class AdmittanceState:
    offset_mm: float = 0.0
    desired_force_N: float = 4.0
    damping_Ns_per_mm: float = 5.0
    measured_force_N: float = 0.0

    def __post_init__(self):
        if not self.damping_Ns_per_mm > 0:
            raise ValidationError("damping must be > 0")


def admittance_step(state: AdmittanceState, measured_force: float, dt: float) -> AdmittanceState:
    """First-order velocity admittance; excess force retracts the probe (+offset)."""
    if not dt > 0:
        raise ValidationError("dt must be > 0")
    offset = state.offset_mm + dt * (measured_force - state.desired_force_N) / state.damping_Ns_per_mm
    return replace(state, offset_mm=offset, measured_force_N=measured_force)


def simulate_contact(surface_height, duration: float, dt: float = 0.01, stiffness: float = 10.0,
                     state: AdmittanceState | None = None, nominal_z: float = 0.0):
    """Closed loop against a linear-spring contact.

    ``surface_height(t)`` gives the skin height under the probe; the probe tip
    sits at ``nominal_z + offset``. Returns ``(t, force, offset)`` arrays.
    """
    state = state or AdmittanceState()
    n = int(round(duration / dt))
    ts = np.arange(n + 1) * dt
    forces = np.empty(n + 1)
    offsets = np.empty(n + 1)
    for i, t in enumerate(ts):
        pen = surface_height(t) - (nominal_z + state.offset_mm)
        f = stiffness * max(0.0, pen)
        forces[i] = f
        offsets[i] = state.offset_mm
        state = admittance_step(state, f, dt)
    return ts, forces, offsets


def execute_sweep(phantom, path: ScanPath, noise=None, rng=None):
    """One synthetic frame per pose, in path order."""
    rng = np.random.default_rng(rng)
    frames = []
    last_id = None
    for k, ps in enumerate(path.passes):
        for pose in ps:
            x, y = pose.position[:2]
            if not bool(phantom.surface.contains(x, y, margin=1e-6)):
                raise PipelineError(
                    f"pose index {len(frames)} (frame {pose.frame_id}) at ({x:.2f}, {y:.2f}) "
                    "lies outside the phantom domain", "pose outside domain")
            if last_id is not None and pose.frame_id <= last_id:
                raise PipelineError(f"frame ids not increasing at pose index {len(frames)}", "bad path")
            last_id = pose.frame_id
            frames.append(synthesize_frame(phantom, pose, path.probe_width_mm, path.image_depth_mm,
                                           noise, rng, pass_index=k))
    return frames

"""Vessel reconstruction from tracked contours.

Tracks are lifted to 3D with the probe poses, each track's centroids are
parameterised by their projected distance along a total-least-squares line,
a penalised cubic B-spline is fitted per world coordinate, and overlapping
models are merged until a fixed point is reached.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline, make_interp_spline

from .errors import DegenerateGeometryError, InsufficientExtentError, PipelineError


@dataclass(frozen=True)
class ReconConfig:
    smoothing: float = 1.0
    knot_spacing_mm: float = 5.0
    merge_dist_mm: float = 3.0
    min_span_mm: float = 10.0
    min_observations: int = 4

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "min_observations" in d:
            d["min_observations"] = int(d["min_observations"])
        return cls(**d)


@dataclass(frozen=True)
class Centroid3D:
    position: np.ndarray
    radius: float
    track_id: int
    frame_id: int
    kind: str | None = None


def lift_track(track, frames) -> list:
    """Map each observation's contour centroid into world coordinates.

    ``frames`` is a mapping ``frame_id -> UltrasoundFrame`` (or a sequence of
    frames).
    """
    if not isinstance(frames, dict):
        frames = {f.frame_id: f for f in frames}
    out = []
    for fid, contour in track.observations:
        frame = frames.get(fid)
        if frame is None:
            raise PipelineError(f"track {track.track_id}: no pose for frame {fid}", "missing pose")
        world = frame.pose.image_to_world(contour.centroid, frame.image_width_mm)[0]
        out.append(Centroid3D(world, math.sqrt(contour.area / math.pi), track.track_id, fid, contour.kind))
    return out


def linear_fit(positions, axis_hint=None):
    """Principal axis through the mean of ``positions``.

    The direction is oriented to agree with ``axis_hint`` (distal to proximal);
    without a hint its largest component is made positive.
    """
    P = np.asarray(positions, dtype=float)
    if len(P) < 2:
        raise DegenerateGeometryError("linear fit needs at least two points")
    mean = P.mean(axis=0)
    Q = P - mean
    scatter = Q.T @ Q
    w, V = np.linalg.eigh(scatter)
    if w[-1] <= 1e-18 * max(1.0, float(np.abs(P).max()) ** 2):
        raise DegenerateGeometryError("all centroids coincide")
    d = V[:, -1]
    if axis_hint is not None:
        if float(np.dot(d, axis_hint)) < 0:
            d = -d
    elif d[np.argmax(np.abs(d))] < 0:
        d = -d
    return mean, d / np.linalg.norm(d)


def parameterize(positions, point, direction):
    """Stations (projected distance along the fit line) sorted ascending.

    Returns ``(stations, order)`` where ``order`` indexes the input.
    """
    s = (np.asarray(positions, dtype=float) - point) @ np.asarray(direction, dtype=float)
    order = np.argsort(s, kind="stable")
    return s[order], order


class CenterlineSpline:
    """Cubic B-spline ``s -> (x, y, z)`` on ``[t[3], t[-4]]``."""

    def __init__(self, knots, coefficients, degree: int = 3):
        self.knots = np.asarray(knots, dtype=float)
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.degree = int(degree)
        self._bs = BSpline(self.knots, self.coefficients, self.degree, extrapolate=True)
        self._d1 = self._bs.derivative(1)

    @property
    def domain(self):
        return float(self.knots[self.degree]), float(self.knots[-self.degree - 1])

    def __call__(self, s):
        return self._bs(np.asarray(s, dtype=float))

    def derivative(self, s):
        return self._d1(np.asarray(s, dtype=float))

    def tangent(self, s):
        d = self.derivative(s)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def to_dict(self):
        return {"degree": self.degree, "knots": self.knots.tolist(),
                "coefficients": self.coefficients.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["knots"], d["coefficients"], d.get("degree", 3))


def clamped_knots(breakpoints, degree: int = 3) -> np.ndarray:
    b = np.asarray(breakpoints, dtype=float)
    return np.concatenate([[b[0]] * degree, b, [b[-1]] * degree])


def curvature_penalty(knots, degree: int = 3) -> np.ndarray:
    """Gram matrix of basis second derivatives, ``int B_i'' B_j'' ds``.

    Exact for cubics: second derivatives are piecewise linear, so two Gauss
    points per knot interval integrate their products exactly.
    """
    n = len(knots) - degree - 1
    basis2 = BSpline(knots, np.eye(n), degree).derivative(2)
    brk = np.unique(knots)
    g = 0.5 / math.sqrt(3.0)
    mid = 0.5 * (brk[:-1] + brk[1:])
    h = np.diff(brk)
    xq = np.concatenate([mid - g * h, mid + g * h])
    wq = np.concatenate([h / 2.0, h / 2.0])
    D = basis2(xq)
    return (D * wq[:, None]).T @ D


@dataclass
class SplineFit:
    spline: CenterlineSpline
    rms: float


def fit_spline(stations, positions, smoothing: float = 1.0, *, knot_spacing: float = 5.0,
               breakpoints=None, min_observations: int = 4, min_span: float = 10.0) -> SplineFit:
    """Penalised least-squares cubic spline of positions against stations.

    Minimises ``sum |B c - y|^2 + smoothing * int |c''(s)|^2 ds`` per
    coordinate. Breakpoints default to uniform spacing near ``knot_spacing``.
    """
    s = np.asarray(stations, dtype=float)
    Y = np.asarray(positions, dtype=float)
    if len(s) < min_observations:
        raise InsufficientExtentError(f"insufficient extent: {len(s)} observations < {min_observations}")
    s0, s1 = float(s.min()), float(s.max())
    if s1 - s0 < min_span:
        raise InsufficientExtentError(f"insufficient extent: station span {s1 - s0:.2f} mm < {min_span} mm")
    if breakpoints is None:
        n_int = max(1, int(round((s1 - s0) / knot_spacing)))
        breakpoints = np.linspace(s0, s1, n_int + 1)
    t = clamped_knots(breakpoints)
    B = BSpline.design_matrix(np.clip(s, t[3], t[-4]), t, 3).toarray()
    if smoothing > 0:
        omega = curvature_penalty(t)
        w, V = np.linalg.eigh(omega)
        root = (np.sqrt(np.clip(w, 0.0, None))[:, None] * V.T) * math.sqrt(smoothing)
        A = np.vstack([B, root])
        rhs = np.vstack([Y, np.zeros((root.shape[0], Y.shape[1]))])
    else:
        A, rhs = B, Y
    coef, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    resid = B @ coef - Y
    rms = float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1))))
    return SplineFit(CenterlineSpline(t, coef), rms)


def estimate_radius(centroids) -> float:
    radii = [c.radius if hasattr(c, "radius") else float(c) for c in centroids]
    if not radii:
        raise ValueError("need at least one centroid")
    return float(np.median(radii))


@dataclass
class VesselModel:
    spline: CenterlineSpline
    radius: float
    length: float  # station span L; stations run over [0, L]
    axis: np.ndarray  # unit, distal -> proximal
    track_ids: list
    kind: str | None = None
    id: str = ""
    rms: float = 0.0
    centroids: list = field(default_factory=list, repr=False)

    def point(self, s):
        return self.spline(s)

    def tangent(self, s):
        return self.spline.tangent(s)

    def sample(self, step: float = 1.0):
        n = int(math.floor(self.length / step + 1e-9))
        s = step * np.arange(n + 1)
        if self.length - s[-1] > 1e-9:
            s = np.append(s, self.length)
        return s, self.point(s)

    def arc_length_table(self, step: float = 0.02):
        n = max(2, int(math.ceil(self.length / step)) + 1)
        s = np.linspace(0.0, self.length, n)
        P = self.point(s)
        arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(P, axis=0), axis=1))])
        return s, arc

    @property
    def arc_length(self) -> float:
        return float(self.arc_length_table()[1][-1])

    def to_dict(self):
        s, P = self.sample(1.0)
        return {
            "id": self.id,
            "kind": self.kind,
            "radius_mm": float(self.radius),
            "length_mm": float(self.length),
            "arc_length_mm": self.arc_length,
            "axis": [float(v) for v in self.axis],
            "track_ids": [int(t) for t in self.track_ids],
            "rms_mm": float(self.rms),
            "stations": s.tolist(),
            "centerline": P.tolist(),
            "spline": self.spline.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        if "spline" in d:
            spline = CenterlineSpline.from_dict(d["spline"])
            length = float(d.get("length_mm", spline.domain[1] - spline.domain[0]))
        else:
            P = np.asarray(d["centerline"], dtype=float)
            if "stations" in d:
                s = np.asarray(d["stations"], dtype=float)
            else:
                s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(P, axis=0), axis=1))])
            s = s - s[0]
            k = 3 if len(P) >= 4 else 1
            bs = make_interp_spline(s, P, k=k)
            spline = CenterlineSpline(bs.t, bs.c, bs.k)
            length = float(s[-1])
        if "axis" in d:
            axis = np.asarray(d["axis"], dtype=float)
        else:
            a = spline(length) - spline(0.0)
            axis = a / np.linalg.norm(a)
        return cls(spline, float(d.get("radius_mm", d.get("radius", 0.0))), length, axis / np.linalg.norm(axis),
                   [int(t) for t in d.get("track_ids", [])], d.get("kind"), str(d.get("id", "")),
                   float(d.get("rms_mm", 0.0)))


def _canonical(centroids):
    return sorted(centroids, key=lambda c: (c.track_id, c.frame_id))


def build_model(centroids, axis_hint=None, config: ReconConfig | None = None) -> VesselModel:
    """Fit one vessel model to a set of 3D centroids."""
    config = config or ReconConfig()
    cs = _canonical(centroids)
    P = np.array([c.position for c in cs])
    if len(cs) < config.min_observations:
        raise InsufficientExtentError(f"insufficient extent: {len(cs)} observations")
    point, direction = linear_fit(P, axis_hint)
    stations, order = parameterize(P, point, direction)
    s0 = stations[0]
    fit = fit_spline(stations - s0, P[order], config.smoothing, knot_spacing=config.knot_spacing_mm,
                     min_observations=config.min_observations, min_span=config.min_span_mm)
    kinds = Counter(c.kind for c in cs if c.kind is not None)
    kind = sorted(kinds.items(), key=lambda kv: (-kv[1], kv[0]))[0][0] if kinds else None
    return VesselModel(fit.spline, estimate_radius(cs), float(stations[-1] - s0), direction,
                       sorted({c.track_id for c in cs}), kind, "", fit.rms, cs)


def _profile(model, axis, step=0.5):
    n = max(2, int(math.ceil(model.length / step)) + 1)
    P = model.point(np.linspace(0.0, model.length, n))
    proj = P @ axis
    order = np.argsort(proj, kind="stable")
    return proj[order], P[order]


def should_merge(a: VesselModel, b: VesselModel, merge_dist: float) -> bool:
    """Two-condition merge test on the common axis.

    Overlapping axis intervals merge when the mean centerline separation
    over the shared interval is below ``merge_dist``; disjoint intervals merge
    when the nearest endpoints are closer than ``merge_dist``.
    """
    axis = a.axis + b.axis
    if np.linalg.norm(axis) < 1e-9:
        axis = a.axis
    axis = axis / np.linalg.norm(axis)
    pa, Pa = _profile(a, axis)
    pb, Pb = _profile(b, axis)
    lo, hi = max(pa[0], pb[0]), min(pa[-1], pb[-1])
    if hi > lo:
        t = np.linspace(lo, hi, max(2, int(math.ceil(hi - lo)) + 1))
        Qa = np.column_stack([np.interp(t, pa, Pa[:, k]) for k in range(3)])
        Qb = np.column_stack([np.interp(t, pb, Pb[:, k]) for k in range(3)])
        return float(np.mean(np.linalg.norm(Qa - Qb, axis=1))) < merge_dist
    ends_a = (a.point(0.0), a.point(a.length))
    ends_b = (b.point(0.0), b.point(b.length))
    gap = min(float(np.linalg.norm(x - y)) for x in ends_a for y in ends_b)
    return gap < merge_dist


def merge_models(models, merge_dist: float = 3.0, axis_hint=None, config: ReconConfig | None = None):
    """Repeatedly merge the first qualifying pair until none remains."""
    config = config or ReconConfig(merge_dist_mm=merge_dist)
    models = list(models)
    while True:
        pair = None
        for i in range(len(models)):
            for j in range(i + 1, len(models)):
                if should_merge(models[i], models[j], merge_dist):
                    pair = (i, j)
                    break
            if pair:
                break
        if pair is None:
            return models
        i, j = pair
        merged = build_model(models[i].centroids + models[j].centroids, axis_hint, config)
        models = models[:i] + [merged] + models[i + 1:j] + models[j + 1:]


def reconstruct(tracks, frames, axis_hint=None, config: ReconConfig | None = None):
    """Tracks to merged, id-labelled vessel models.

    Tracks too short to fit are dropped. Models are labelled ``V0, V1, ...``
    in order of their lowest contributing track id.
    """
    config = config or ReconConfig()
    frame_map = {f.frame_id: f for f in frames}
    models = []
    for track in sorted(tracks, key=lambda t: t.track_id):
        cs = lift_track(track, frame_map)
        try:
            models.append(build_model(cs, axis_hint, config))
        except (InsufficientExtentError, DegenerateGeometryError):
            continue
    models = merge_models(models, config.merge_dist_mm, axis_hint, config)
    models.sort(key=lambda m: m.track_ids[0])
    for k, m in enumerate(models):
        m.id = f"V{k}"
    return models

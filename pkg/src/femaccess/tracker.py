"""Frame-to-frame contour association.

Contours are chained into tracks by solving a minimum-cost assignment
(Kuhn-Munkres) on ``1 - IoU`` between each active track's latest contour and
the contours of the incoming frame.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .geometry import clip_convex, is_convex
from .phantom import Contour2D

DEFAULT_GATE = 0.8
DEFAULT_MAX_MISSES = 5
_FORBIDDEN = 1e6


def overlap_cost(a: Contour2D, b: Contour2D) -> float:
    """``1 - IoU`` of two contours; 1 for disjoint, 0 for identical."""
    ax0, ay0, ax1, ay1 = a.bounds
    bx0, by0, bx1, by1 = b.bounds
    if ax1 <= bx0 or bx1 <= ax0 or ay1 <= by0 or by1 <= ay0:
        return 1.0
    if is_convex(b.polygon):
        inter_poly = clip_convex(a.polygon, b.polygon)
    elif is_convex(a.polygon):
        inter_poly = clip_convex(b.polygon, a.polygon)
    else:
        raise ValueError("overlap_cost needs at least one convex contour")
    if len(inter_poly) == 0:
        return 1.0
    x, y = inter_poly[:, 0], inter_poly[:, 1]
    inter = 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))
    inter = min(inter, a.area, b.area)
    union = a.area + b.area - inter
    iou = inter / union
    return float(min(1.0, max(0.0, 1.0 - iou)))


def _hungarian(cost):
    # shortest augmenting path with potentials, rows <= cols, 1-indexed
    n, m = cost.shape
    INF = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    a = cost.tolist()
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = a[i0 - 1]
            ui = u[i0]
            delta = INF
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    return sorted((p[j] - 1, j - 1) for j in range(1, m + 1) if p[j] != 0)


def matching_cost(cost, pairs) -> float:
    """Exactly rounded total of the matched entries."""
    return math.fsum(float(cost[i][j]) for i, j in pairs)


def solve_assignment(cost):
    """Minimum-cost maximal matching of a rectangular cost matrix.

    Returns ``(pairs, total)`` where ``pairs`` is a row-sorted list of
    ``(row, col)``. Every row is matched when rows <= cols, every column
    otherwise.
    """
    c = np.asarray(cost, dtype=float)
    if c.size == 0:
        return [], 0.0
    if c.ndim != 2:
        raise ValueError("cost matrix must be two-dimensional")
    if not np.all(np.isfinite(c)) or np.any(c < 0):
        raise ValueError("costs must be finite and non-negative")
    if c.shape[0] <= c.shape[1]:
        pairs = _hungarian(c)
    else:
        pairs = sorted((i, j) for j, i in _hungarian(c.T))
    return pairs, matching_cost(c, pairs)


# -- tracks --------------------------------------------------------------------

@dataclass
class Track:
    track_id: int
    observations: list = field(default_factory=list)  # (frame_id, Contour2D)
    miss_count: int = 0
    state: str = "active"

    @property
    def latest(self) -> Contour2D:
        return self.observations[-1][1]

    @property
    def frame_ids(self):
        return [f for f, _ in self.observations]

    @property
    def kind(self):
        votes = Counter(c.kind for _, c in self.observations if c.kind is not None)
        if not votes:
            return None
        # ties resolved alphabetically for determinism
        return sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]

    def append(self, frame_id, contour):
        if self.state != "active":
            raise ValueError(f"track {self.track_id} is finished")
        if self.observations and frame_id <= self.observations[-1][0]:
            raise ValueError(f"track {self.track_id}: frame ids must increase")
        self.observations.append((frame_id, contour))
        self.miss_count = 0

    def to_dict(self):
        return {
            "track_id": self.track_id,
            "state": self.state,
            "kind": self.kind,
            "miss_count": self.miss_count,
            "observations": [
                {"frame_id": f, "centroid": [float(v) for v in c.centroid], "area": c.area,
                 **c.to_dict()}
                for f, c in self.observations
            ],
        }

    @classmethod
    def from_dict(cls, d):
        obs = [(int(o["frame_id"]), Contour2D.from_dict(o)) for o in d["observations"]]
        return cls(int(d["track_id"]), obs, int(d.get("miss_count", 0)), d.get("state", "finished"))


@dataclass
class Assignment:
    matched: list  # (track_id, contour index)
    unmatched_tracks: list
    unmatched_contours: list
    total_cost: float


def associate_frame(tracks, frame, gate: float = DEFAULT_GATE, max_misses: int = DEFAULT_MAX_MISSES,
                    next_id: int | None = None):
    """Associate one frame's contours with the active tracks.

    Pairs with cost above ``gate`` are forbidden. Matched tracks take the
    contour; unmatched tracks accrue a miss and finish once ``miss_count``
    exceeds ``max_misses``; unmatched contours start new tracks. ``tracks``
    is updated in place and returned alongside the :class:`Assignment`.
    """
    if not 0.0 < gate <= 1.0:
        raise ValueError("gate must lie in (0, 1]")
    active = sorted((t for t in tracks if t.state == "active"), key=lambda t: t.track_id)
    contours = frame.contours
    pairs = []
    total = 0.0
    if active and contours:
        cost = np.array([[overlap_cost(t.latest, c) for c in contours] for t in active])
        masked = np.where(cost <= gate, cost, _FORBIDDEN)
        raw, _ = solve_assignment(masked)
        pairs = [(i, j) for i, j in raw if cost[i, j] <= gate]
        total = matching_cost(cost, pairs)
    matched_rows = {i for i, _ in pairs}
    matched_cols = {j for _, j in pairs}
    for i, j in pairs:
        active[i].append(frame.frame_id, contours[j])
    unmatched_tracks = []
    for i, t in enumerate(active):
        if i not in matched_rows:
            t.miss_count += 1
            unmatched_tracks.append(t.track_id)
            if t.miss_count > max_misses:
                t.state = "finished"
    if next_id is None:
        next_id = max((t.track_id for t in tracks), default=-1) + 1
    unmatched_contours = [j for j in range(len(contours)) if j not in matched_cols]
    for j in unmatched_contours:
        t = Track(next_id)
        t.append(frame.frame_id, contours[j])
        tracks.append(t)
        next_id += 1
    assignment = Assignment([(active[i].track_id, j) for i, j in pairs], unmatched_tracks,
                            unmatched_contours, total)
    return assignment, tracks


class Tracker:
    """Stateful wrapper that owns a sweep's tracks."""

    def __init__(self, gate: float = DEFAULT_GATE, max_misses: int = DEFAULT_MAX_MISSES):
        self.gate = gate
        self.max_misses = max_misses
        self.tracks = []
        self._next_id = 0

    def step(self, frame) -> Assignment:
        assignment, _ = associate_frame(self.tracks, frame, self.gate, self.max_misses, self._next_id)
        self._next_id = max(self._next_id, max((t.track_id for t in self.tracks), default=-1) + 1)
        return assignment

    def finish_all(self):
        for t in self.tracks:
            t.state = "finished"


def track_sweep(frames, gate: float = DEFAULT_GATE, max_misses: int = DEFAULT_MAX_MISSES,
                split_passes: bool = True):
    """Run the tracker over a whole sweep; every returned track is finished.

    With ``split_passes`` all tracks end when the pass index changes, since
    the lateral jump between passes makes image positions incomparable.
    """
    tracker = Tracker(gate, max_misses)
    current_pass = None
    for frame in frames:
        if split_passes and current_pass is not None and frame.pass_index != current_pass:
            tracker.finish_all()
        current_pass = frame.pass_index
        tracker.step(frame)
    tracker.finish_all()
    return tracker.tracks

"""Reconstruction and cannulation metrics against phantom ground truth."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .geometry import points_in_polygon

ASSOCIATION_TOL_MM = 5.0
RECALL_TOL_MM = 2.0


def _dense(model, step=0.25):
    n = max(2, int(np.ceil(model.length / step)) + 1)
    return model.point(np.linspace(0.0, model.length, n))


def compute_metrics(phantom, models, region=None, trial=None, recall_tol: float = RECALL_TOL_MM,
                    assoc_tol: float = ASSOCIATION_TOL_MM) -> dict:
    """Centerline/radius errors, arc-length recall and cannulation flags.

    Each model is attributed to the ground-truth vessel with the smallest
    mean distance; models farther than ``assoc_tol`` on average are reported
    as spurious. Recall counts ground-truth arc inside the crop region that
    lies within ``recall_tol`` of any model.
    """
    per_vessel = {v.id: {"kind": v.kind, "models": [], "centerline_error_mm": None,
                         "radius_rel_error": None, "recall": 0.0, "cannulated": False,
                         "arc_mm": 0.0} for v in phantom.vessels}
    all_err = []
    rad_err = []
    spurious = []
    for m in models:
        _, P = m.sample(1.0)
        dists = {v.id: v.nearest(P)[0] for v in phantom.vessels}
        vid = min(dists, key=lambda k: (float(dists[k].mean()), k))
        d = dists[vid]
        if d.mean() > assoc_tol:
            spurious.append(m.id)
            continue
        entry = per_vessel[vid]
        entry["models"].append(m.id)
        truth = phantom.vessel(vid).nominal_radius
        rerr = abs(m.radius - truth) / truth
        all_err.append(d)
        rad_err.append(rerr)
        prev = entry.get("_err", [])
        entry["_err"] = prev + [d]
        entry["_rerr"] = entry.get("_rerr", []) + [rerr]

    model_pts = [_dense(m) for m in models if m.id not in spurious]
    tree = cKDTree(np.vstack(model_pts)) if model_pts else None
    covered_total = 0.0
    arc_total = 0.0
    for v in phantom.vessels:
        P = v.dense
        seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
        mid = 0.5 * (P[1:] + P[:-1])
        keep = points_in_polygon(mid[:, :2], region.corners) if region is not None else np.ones(len(mid), bool)
        arc = float(seg[keep].sum())
        if tree is not None and arc > 0:
            dist, _ = tree.query(mid[keep])
            cov = float(seg[keep][dist <= recall_tol].sum())
        else:
            cov = 0.0
        entry = per_vessel[v.id]
        entry["arc_mm"] = arc
        entry["recall"] = cov / arc if arc > 0 else 0.0
        covered_total += cov
        arc_total += arc
        errs = entry.pop("_err", None)
        rerrs = entry.pop("_rerr", None)
        if errs:
            e = np.concatenate(errs)
            entry["centerline_error_mm"] = {"mean": float(e.mean()), "max": float(e.max())}
            entry["radius_rel_error"] = float(np.mean(rerrs))

    if trial is not None:
        for vid, rec in trial.get("per_vessel", {}).items():
            if vid in per_vessel:
                per_vessel[vid]["cannulated"] = bool(rec.get("success"))

    if all_err:
        e = np.concatenate(all_err)
        cl = {"mean": float(e.mean()), "max": float(e.max())}
        rr = {"mean": float(np.mean(rad_err)), "max": float(np.max(rad_err))}
    else:
        cl = {"mean": 0.0, "max": 0.0}
        rr = {"mean": 0.0, "max": 0.0}
    return {
        "centerline_error_mm": cl,
        "radius_rel_error": rr,
        "recall": covered_total / arc_total if arc_total > 0 else 0.0,
        "per_vessel": per_vessel,
        "spurious_models": spurious,
        "cannulation": {vid: per_vessel[vid]["cannulated"] for vid in per_vessel},
    }


def summary_line(name, metrics) -> str:
    cann = ", ".join(f"{vid} {'yes' if ok else 'no'}" for vid, ok in metrics["cannulation"].items())
    return (f"{name}: centerline error mean {metrics['centerline_error_mm']['mean']:.3f} mm "
            f"(max {metrics['centerline_error_mm']['max']:.3f}), radius error "
            f"{100 * metrics['radius_rel_error']['mean']:.1f}%, recall {metrics['recall']:.3f}; "
            f"cannulated: {cann}")

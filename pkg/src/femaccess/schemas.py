"""JSON schemas of the run artifacts.

Every artifact is an object with ``schema_version`` and ``artifact`` keys;
the schemas below pin the fields downstream stages rely on.
"""

import jsonschema

SCHEMA_VERSION = 1

_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_vec2 = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_quat = {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4}

_pose = {
    "type": "object",
    "required": ["frame_id", "position", "orientation"],
    "properties": {"frame_id": {"type": "integer"}, "timestamp": {"type": "number"},
                   "position": _vec3, "orientation": _quat},
}

_contour = {
    "type": "object",
    "required": ["polygon"],
    "properties": {
        "polygon": {"type": "array", "items": _vec2, "minItems": 3},
        "kind": {"type": ["string", "null"]},
        "source": {"type": ["string", "null"]},
    },
}


def _doc(name, props, required):
    return {
        "type": "object",
        "required": ["schema_version", "artifact"] + required,
        "properties": {"schema_version": {"const": SCHEMA_VERSION}, "artifact": {"const": name}, **props},
    }


SCHEMAS = {
    "path": _doc("path", {
        "crop": {"type": "object", "required": ["corners", "proximal", "distal"]},
        "path": {"type": "object", "required": ["probe_width_mm", "pass_pitch_mm", "passes"],
                 "properties": {"passes": {"type": "array", "items": {
                     "type": "object", "required": ["center_mm", "poses"],
                     "properties": {"poses": {"type": "array", "items": _pose}}}}}},
    }, ["crop", "path"]),
    "frames": _doc("frames", {
        "frames": {"type": "array", "items": {
            "type": "object",
            "required": ["frame_id", "pass_index", "image_width_mm", "image_depth_mm", "pose", "contours"],
            "properties": {"frame_id": {"type": "integer"}, "pass_index": {"type": "integer"},
                           "image_width_mm": {"type": "number", "exclusiveMinimum": 0},
                           "image_depth_mm": {"type": "number", "exclusiveMinimum": 0},
                           "pose": _pose, "contours": {"type": "array", "items": _contour}}}},
    }, ["frames"]),
    "tracks": _doc("tracks", {
        "tracks": {"type": "array", "items": {
            "type": "object", "required": ["track_id", "observations"],
            "properties": {"track_id": {"type": "integer"}, "observations": {"type": "array", "items": {
                "allOf": [_contour, {"type": "object", "required": ["frame_id", "centroid"],
                                     "properties": {"frame_id": {"type": "integer"}, "centroid": _vec2}}]}}}}},
    }, ["tracks"]),
    "vessels": _doc("vessels", {
        "axis": _vec3,
        "vessels": {"type": "array", "items": {
            "type": "object", "required": ["id", "radius_mm", "centerline"],
            "properties": {"id": {"type": "string"}, "radius_mm": {"type": "number", "exclusiveMinimum": 0},
                           "centerline": {"type": "array", "items": _vec3, "minItems": 2},
                           "stations": {"type": "array", "items": {"type": "number"}},
                           "axis": _vec3, "track_ids": {"type": "array", "items": {"type": "integer"}}}}},
    }, ["vessels"]),
    "plan": _doc("plan", {
        "crop": {"type": "object"},
        "plan": {"type": "object", "required": ["points"], "properties": {"points": {"type": "array", "items": {
            "type": "object", "required": ["vessel_id", "station_mm", "position", "tangent", "expected_depth_mm"],
            "properties": {"vessel_id": {"type": "string"}, "station_mm": {"type": "number"},
                           "position": _vec3, "tangent": _vec3,
                           "expected_depth_mm": {"type": ["number", "null"]}}}},
            "reason": {"type": ["string", "null"]}}},
    }, ["plan"]),
    "trial": _doc("trial", {
        "attempts": {"type": "array", "items": {"type": "object", "required": ["index", "outcome", "states"]}},
        "per_vessel": {"type": "object"},
        "totals": {"type": "object", "required": ["attempts", "successes", "failures"]},
    }, ["attempts", "per_vessel", "totals"]),
    "metrics": _doc("metrics", {
        "centerline_error_mm": {"type": "object", "required": ["mean", "max"]},
        "radius_rel_error": {"type": "object", "required": ["mean", "max"]},
        "recall": {"type": "number", "minimum": 0, "maximum": 1},
        "per_vessel": {"type": "object"},
    }, ["centerline_error_mm", "radius_rel_error", "recall", "per_vessel"]),
}


_VALIDATORS = {}


def validate(doc, name):
    """Raise ``jsonschema.ValidationError`` if ``doc`` breaks the ``name`` schema."""
    v = _VALIDATORS.get(name)
    if v is None:
        cls = jsonschema.validators.validator_for(SCHEMAS[name])
        v = _VALIDATORS[name] = cls(SCHEMAS[name])
    if not v.is_valid(doc):
        raise jsonschema.exceptions.best_match(v.iter_errors(doc))

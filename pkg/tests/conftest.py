import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from femaccess.geometry import matrix_to_quat, probe_rotation
from femaccess.phantom import ProbePose, build_phantom

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def flat_surface(x=(0.0, 120.0), y=(-40.0, 40.0), slope=(0.0, 0.0)):
    return {"x_range": list(x), "y_range": list(y), "z0": 0.0, "slope": list(slope),
            "curvature": [0.0, 0.0, 0.0]}


def straight_vessel(vid="v", kind="artery", y=0.0, depth=15.0, radius=3.0, pressure=65.0,
                    x0=-10.0, x1=130.0):
    return {"id": vid, "kind": kind, "nominal_radius": radius, "internal_pressure": pressure,
            "centerline_depth": [[x0, y, depth], [x1, y, depth]]}


def make_phantom(vessels, map_mmHg=65.0, noise=None, surface=None):
    return build_phantom({"surface": surface or flat_surface(), "vessels": vessels,
                          "scenario": {"map_mmHg": map_mmHg, "noise": noise or {}}})


def cross_pose(x, y, z=0.0, normal=(0.0, 0.0, 1.0), elevation=(1.0, 0.0, 0.0), frame_id=0):
    """Probe at (x, y, z), beam down the inward normal, image plane normal to ``elevation``."""
    R = probe_rotation(np.asarray(normal, float), np.asarray(elevation, float))
    return ProbePose(np.array([x, y, z], float), matrix_to_quat(R), frame_id, 0.0)


@pytest.fixture
def two_vessel_phantom():
    return make_phantom([straight_vessel("artery", "artery", -6.0, 15.0, 2.5, 65.0),
                         straight_vessel("vein", "vein", 6.0, 16.0, 3.0, 8.0)])

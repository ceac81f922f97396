"""Scenario configs and the serialized stage chain.

Each stage consumes and produces JSON documents (plus CSV text for the
surface cloud and pressure traces). ``run_pipeline`` hands every stage the
parsed text of the previous stage's output, so a full run and a chain of
single-stage invocations see identical inputs.
"""

from __future__ import annotations

import io
import json
import time
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import PipelineError, ValidationError
from .metrics import compute_metrics, summary_line
from .needle import NeedleConfig, run_trial, trace_to_csv
from .phantom import ContourNoise, PointCloud, UltrasoundFrame, build_phantom, load_phantom_spec, scan_surface
from .planner import InsertionPlan, PlannerConfig, make_plan
from .recon import ReconConfig, VesselModel, reconstruct
from .scanplan import CropRegion, SurfaceEstimate, crop_cloud, execute_sweep, generate_raster_path
from .schemas import SCHEMA_VERSION, validate as validate_schema
from .tracker import Track, track_sweep

STAGES = ("scan", "track", "recon", "plan", "insert")

STAGE_INPUTS = {
    "scan": [],
    "track": ["frames.json"],
    "recon": ["tracks.json", "frames.json"],
    "plan": ["vessels.json"],
    "insert": ["plan.json", "vessels.json"],
}

DATA_DIR = Path(__file__).parent / "data"


class ConfigError(ValidationError):
    pass


@dataclass
class Scenario:
    name: str
    config_path: Path | None
    phantom_spec: dict
    seed: int
    region: CropRegion
    camera: dict
    probe: dict
    tracker: dict
    recon: ReconConfig
    planner: PlannerConfig
    needle: NeedleConfig
    noise: ContourNoise | None
    output_dir: Path | None

    @property
    def phantom(self):
        return build_phantom(self.phantom_spec)

    @property
    def stream_seeds(self):
        """Independent integer seeds for the cloud, sweep and needle stages."""
        return [int(v) for v in np.random.SeedSequence(self.seed).generate_state(3)]


def bundled_scenario(name: str) -> Path:
    p = DATA_DIR / "scenarios" / f"{name}.json"
    if not p.exists():
        raise ConfigError(f"no bundled scenario {name!r}")
    return p


def scenario_from_dict(cfg: dict, base: Path | None = None, *, seed=None, out=None, map_mmHg=None) -> Scenario:
    base = base or Path.cwd()
    try:
        ref = cfg["phantom"]
        if isinstance(ref, dict):
            spec = ref
        else:
            ppath = Path(ref)
            if not ppath.is_absolute():
                ppath = base / ppath
            if not ppath.exists():
                raise ConfigError(f"phantom spec not found: {ppath}")
            spec = load_phantom_spec(ppath)
        spec = json.loads(json.dumps(spec))
        if map_mmHg is None:
            map_mmHg = cfg.get("map_mmHg")
        if map_mmHg is not None:
            spec.setdefault("scenario", {})["map_mmHg"] = float(map_mmHg)
        if seed is None:
            if "seed" not in cfg:
                raise ConfigError("scenario config must set a seed")
            seed = cfg["seed"]
        crop = cfg["crop"]
        region = CropRegion.from_dict(crop)
        noise = ContourNoise.from_dict(cfg["noise"]) if cfg.get("noise") is not None else None
        scn = Scenario(
            name=str(cfg.get("name", "scenario")),
            config_path=None,
            phantom_spec=spec,
            seed=int(seed),
            region=region,
            camera={"pitch_mm": 1.0, "depth_sigma_mm": 0.0, **cfg.get("camera", {})},
            probe={"width_mm": 38.0, "image_depth_mm": 40.0, "step_mm": 1.0, "standoff_mm": 0.0,
                   "orientation": "along", **cfg.get("probe", {})},
            tracker={"gate": 0.8, "max_misses": 5, **cfg.get("tracker", {})},
            recon=ReconConfig.from_dict(cfg.get("recon")),
            planner=PlannerConfig.from_dict(cfg.get("planner")),
            needle=NeedleConfig.from_dict(cfg.get("needle")),
            noise=noise,
            output_dir=Path(out) if out else (Path(cfg["output_dir"]) if cfg.get("output_dir") else None),
        )
        scn.phantom  # validate early
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario config: {exc!r}") from exc
    return scn


def load_scenario(path, *, seed=None, out=None, map_mmHg=None) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    scn = scenario_from_dict(cfg, path.parent, seed=seed, out=out, map_mmHg=map_mmHg)
    scn.config_path = path
    return scn


# -- serialization -------------------------------------------------------------

def header(name):
    return {"schema_version": SCHEMA_VERSION, "artifact": name, "generator": f"femaccess {__version__}"}


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _cloud_text(cloud: PointCloud) -> str:
    buf = io.StringIO()
    buf.write("x,y,z,nx,ny,nz\n")
    for row in np.hstack([cloud.points, cloud.normals]):
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def _cloud_from_text(text: str) -> PointCloud:
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    arr = np.array(rows, dtype=float).reshape(-1, 6)
    return PointCloud(arr[:, :3].copy(), arr[:, 3:].copy())


def _check(doc, name, enabled=True):
    if not enabled:
        return
    try:
        validate_schema(doc, name)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{name} artifact does not match schema at {where}: {exc.message}") from exc


def _nan_to_none(x):
    return None if isinstance(x, float) and x != x else x


# -- stages --------------------------------------------------------------------

def stage_scan(scn: Scenario) -> dict:
    phantom = scn.phantom
    cloud_seed, sweep_seed, _ = scn.stream_seeds
    cloud = scan_surface(phantom, float(scn.camera["pitch_mm"]), float(scn.camera["depth_sigma_mm"]),
                         rng=cloud_seed)
    cropped = crop_cloud(cloud, scn.region)
    pr = scn.probe
    path = generate_raster_path(cropped, scn.region, float(pr["width_mm"]), standoff=float(pr["standoff_mm"]),
                                step=float(pr["step_mm"]), image_depth=float(pr["image_depth_mm"]),
                                orientation=pr["orientation"])
    frames = execute_sweep(phantom, path, scn.noise, rng=sweep_seed)
    return {
        "cloud.csv": _cloud_text(cropped),
        "path.json": {**header("path"), "crop": scn.region.to_dict(), "path": path.to_dict()},
        "frames.json": {**header("frames"), "frames": [f.to_dict() for f in frames]},
    }


def stage_track(scn: Scenario, frames_doc: dict, *, validate: bool = True) -> dict:
    _check(frames_doc, "frames", validate)
    frames = [UltrasoundFrame.from_dict(f) for f in frames_doc["frames"]]
    tracks = track_sweep(frames, float(scn.tracker["gate"]), int(scn.tracker["max_misses"]))
    return {"tracks.json": {**header("tracks"), "tracks": [t.to_dict() for t in tracks]}}


def stage_recon(scn: Scenario, tracks_doc: dict, frames_doc: dict, *, validate: bool = True) -> dict:
    _check(tracks_doc, "tracks", validate)
    _check(frames_doc, "frames", validate)
    frames = [UltrasoundFrame.from_dict(f) for f in frames_doc["frames"]]
    tracks = [Track.from_dict(t) for t in tracks_doc["tracks"]]
    models = reconstruct(tracks, frames, scn.region.axis3, scn.recon)
    return {"vessels.json": {**header("vessels"), "axis": [float(v) for v in scn.region.axis3],
                             "vessels": [m.to_dict() for m in models]}}


def load_models(vessels_doc):
    return [VesselModel.from_dict(v) for v in vessels_doc["vessels"]]


def stage_plan(scn: Scenario, vessels_doc: dict, cloud_text: str | None = None, *, validate: bool = True) -> dict:
    _check(vessels_doc, "vessels", validate)
    models = load_models(vessels_doc)
    if cloud_text is not None:
        surf = SurfaceEstimate(_cloud_from_text(cloud_text))
        height = surf.height
    else:
        surface = scn.phantom.surface
        height = lambda xy: surface.height(np.asarray(xy)[:, 0], np.asarray(xy)[:, 1])
    plan = make_plan(models, scn.region.proximal, scn.region.distal, scn.planner, height)
    pd = plan.to_dict()
    for p in pd["points"]:
        p["expected_depth_mm"] = _nan_to_none(p["expected_depth_mm"])
    return {"plan.json": {**header("plan"), "crop": scn.region.to_dict(), "plan": pd}}


def stage_insert(scn: Scenario, plan_doc: dict, vessels_doc: dict, *, validate: bool = True) -> dict:
    _check(plan_doc, "plan", validate)
    _check(vessels_doc, "vessels", validate)
    pd = json.loads(json.dumps(plan_doc["plan"]))
    for p in pd["points"]:
        if p["expected_depth_mm"] is None:
            p["expected_depth_mm"] = float("nan")
    plan = InsertionPlan.from_dict(pd)
    models = load_models(vessels_doc)
    known = {m.id for m in models}
    missing = sorted({p.vessel_id for p in plan.points} - known)
    if missing:
        raise ConfigError(f"plan references unknown vessels {missing}")
    _, _, needle_seed = scn.stream_seeds
    pl = scn.planner
    report = run_trial(scn.phantom, plan, models, scn.needle, seed=needle_seed,
                       width=float(scn.probe["width_mm"]), depth=float(scn.probe["image_depth_mm"]),
                       noise=scn.noise, centering={"gain": pl.centering_gain, "tol": pl.centering_tol_mm,
                                                   "max_iter": pl.centering_max_iter})
    out = {"trial.json": {**header("trial"), **report.to_dict()}}
    for k, a in enumerate(report.attempts):
        buf = io.StringIO()
        trace_to_csv(a.samples, buf)
        out[f"traces/attempt_{k:03d}.csv"] = buf.getvalue()
    return out


def stage_metrics(phantom, path_doc: dict, vessels_doc: dict, trial_doc: dict | None, name="run") -> dict:
    region = CropRegion.from_dict(path_doc["crop"])
    m = compute_metrics(phantom, load_models(vessels_doc), region, trial_doc)
    doc = {**header("metrics"), **m}
    return {"metrics.json": doc, "summary.txt": summary_line(name, m) + "\n"}


# -- running -------------------------------------------------------------------

def _parse(text_or_doc):
    return json.loads(text_or_doc) if isinstance(text_or_doc, str) else text_or_doc


def _as_text(name, content):
    return content if isinstance(content, str) else dumps(content)


def write_artifacts(out_dir, artifacts: dict):
    out = Path(out_dir)
    for name, content in artifacts.items():
        p = out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(_as_text(name, content))


def read_inputs(in_dir, stage):
    """Load a stage's upstream artifacts from ``in_dir`` as parsed documents."""
    in_dir = Path(in_dir)
    missing = [n for n in STAGE_INPUTS[stage] if not (in_dir / n).exists()]
    if missing:
        raise ConfigError(f"stage {stage} missing inputs in {in_dir}: {', '.join(missing)}")
    docs = {}
    for n in STAGE_INPUTS[stage]:
        try:
            docs[n] = json.loads((in_dir / n).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{n} is not valid JSON: {exc}") from exc
    if stage == "plan" and (in_dir / "cloud.csv").exists():
        docs["cloud.csv"] = (in_dir / "cloud.csv").read_text()
    return docs


def run_stage(scn: Scenario, stage: str, inputs: dict, *, validate: bool = True) -> dict:
    if stage == "scan":
        return stage_scan(scn)
    if stage == "track":
        return stage_track(scn, inputs["frames.json"], validate=validate)
    if stage == "recon":
        return stage_recon(scn, inputs["tracks.json"], inputs["frames.json"], validate=validate)
    if stage == "plan":
        return stage_plan(scn, inputs["vessels.json"], inputs.get("cloud.csv"), validate=validate)
    if stage == "insert":
        return stage_insert(scn, inputs["plan.json"], inputs["vessels.json"], validate=validate)
    raise ConfigError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")


@dataclass
class RunResult:
    artifacts: dict  # name -> text
    timings: dict
    error: dict | None = None


def run_pipeline(scn: Scenario, out_dir=None, *, with_metrics: bool = True) -> RunResult:
    """scan -> track -> recon -> plan -> insert (-> metrics).

    Returns every artifact as text. An empty insertion plan stops the chain
    after writing a zero-attempt trial report and an error record.
    """
    texts = {}
    timings = {}
    error = None
    for stage in STAGES:
        avail = {n: (_parse(t) if n.endswith(".json") else t) for n, t in texts.items()}
        t0 = time.perf_counter()
        try:
            # documents produced within this run are known to be valid
            produced = run_stage(scn, stage, avail, validate=False)
        except PipelineError as exc:
            error = {"stage": stage, "reason": exc.reason, "message": str(exc)}
            timings[stage] = time.perf_counter() - t0
            break
        timings[stage] = time.perf_counter() - t0
        for n, c in produced.items():
            texts[n] = _as_text(n, c)
        if stage == "plan":
            plan = json.loads(texts["plan.json"])["plan"]
            if not plan["points"]:
                error = {"stage": "plan", "reason": plan.get("reason") or "empty plan",
                         "message": "insertion plan is empty"}
                trial = {**header("trial"), "attempts": [], "per_vessel": {
                    v.id: {"kind": v.kind, "success": False, "punctures": 0} for v in scn.phantom.vessels},
                    "per_model": {}, "totals": {"attempts": 0, "successes": 0, "failures": 0},
                    "reason": error["reason"]}
                texts["trial.json"] = dumps(trial)
                break
    if with_metrics and all(n in texts for n in ("path.json", "vessels.json")):
        t0 = time.perf_counter()
        trial = json.loads(texts["trial.json"]) if "trial.json" in texts else None
        produced = stage_metrics(scn.phantom, json.loads(texts["path.json"]),
                                 json.loads(texts["vessels.json"]), trial, scn.name)
        for n, c in produced.items():
            texts[n] = _as_text(n, c)
        timings["metrics"] = time.perf_counter() - t0
    if error is not None:
        texts["error.json"] = dumps({**header("error"), **error})
    result = RunResult(texts, timings, error)
    if out_dir is not None:
        write_artifacts(out_dir, texts)
        (Path(out_dir) / "timings.json").write_text(dumps({"runtime_s": timings}))
    return result

"""HTTP service exposing the pipeline to the browser UI and to scripts.

Sessions are in-memory. Reads (renders, lookups) take a snapshot of the
session scene and run lock-free; mutations (scene load, training, cut
application) hold the session's mutation lock so at most one is in flight.
"""

from __future__ import annotations

import base64
import io
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from PIL import Image, ImageDraw
from pydantic import BaseModel

from . import __version__, sceneio
from .evalbench import load_views, mask_from_scene
from .features import TrainConfig, affinity_pca_colors, train_feature_field
from .render import center_depth_map, render_payload
from .sceneio import FileFormatError
from .segmenter import PromptSet, fuse_similarity, prompt_similarity, \
    select_gaussians
from .sgc import apply_sgc
from .types import Camera, GaussianScene, ValidationError

DEFAULT_SESSION = "default"


@dataclass
class StoredSegmentation:
    result_json: dict
    mask: np.ndarray
    png_bytes: bytes
    scene: GaussianScene  # selected (possibly cut) sub-scene
    view_name: str


@dataclass
class Session:
    scene: GaussianScene | None = None
    scene_path: str = ""
    trained: bool = False
    cameras: dict = field(default_factory=dict)
    prompt_sets: dict = field(default_factory=dict)
    segmentations: dict = field(default_factory=dict)
    config: dict = field(default_factory=lambda: {"tau": 0.5, "use_sgc": False})
    train_jobs: dict = field(default_factory=dict)
    mutation_lock: threading.Lock = field(default_factory=threading.Lock)


class SceneLoadRequest(BaseModel):
    path: str
    session_id: str = DEFAULT_SESSION


class CameraRegisterRequest(BaseModel):
    name: str
    camera: dict | None = None
    path: str | None = None
    session_id: str = DEFAULT_SESSION


class PromptRequest(BaseModel):
    camera: str | None = None  # registered name
    camera_inline: dict | None = None
    points: list
    session_id: str = DEFAULT_SESSION


class SegmentRequest(BaseModel):
    prompt_set: str
    tau: float | None = None  # None -> the session's configured default
    use_sgc: bool = False
    mask_source: dict = {"type": "none"}
    session_id: str = DEFAULT_SESSION


class ExportRequest(BaseModel):
    segmentation_id: str
    path: str
    session_id: str = DEFAULT_SESSION


class TrainRequest(BaseModel):
    data: str  # dataset directory with views/
    iterations: int = 2000
    learning_rate: float = 7.5e-3
    pairs_per_iter: int = 1024
    rng_seed: int = 0
    session_id: str = DEFAULT_SESSION


class RenderRequest(BaseModel):
    camera: dict
    mode: str = "color"
    segmentation: str | None = None
    session_id: str = DEFAULT_SESSION


def _png_bytes(mask: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), "L").save(buf, "PNG")
    return buf.getvalue()


def _color_png_bytes(rgb: np.ndarray) -> bytes:
    arr = np.clip(np.asarray(rgb) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, "RGB").save(buf, "PNG")
    return buf.getvalue()


def _error(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status_code=status,
                         detail={"code": code, "message": message})


def create_app(data_root=".", frontend_dir=None, render_deadline_s=30.0,
               tau_default=0.5) -> FastAPI:
    """Build the service. Renders stay synchronous but are abandoned past
    `render_deadline_s` (504 with a machine-readable code); training runs
    as a background job with a polling endpoint."""
    app = FastAPI(title="segwild", version=__version__)
    root = Path(data_root)
    sessions: dict[str, Session] = {}
    metrics = {"renders": 0, "segments": 0, "render_ms_total": 0.0,
               "started": time.time()}
    render_pool = ThreadPoolExecutor(max_workers=4,
                                     thread_name_prefix="segwild-render")

    def session(session_id: str, create=True) -> Session:
        if session_id not in sessions:
            if not create:
                raise _error(404, "session_not_found", f"no session {session_id!r}")
            sessions[session_id] = Session()
            sessions[session_id].config["tau"] = tau_default
        return sessions[session_id]

    def need_scene(sess: Session) -> GaussianScene:
        if sess.scene is None:
            raise _error(409, "no_scene", "load a scene first")
        return sess.scene

    def resolve(path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else root / p

    def get_camera(sess: Session, name=None, inline=None) -> Camera:
        if inline is not None:
            try:
                return sceneio.camera_from_dict(inline)
            except (ValidationError, FileFormatError) as exc:
                raise _error(422, "bad_camera", str(exc))
        if name is None or name not in sess.cameras:
            raise _error(404, "camera_not_found", f"unknown camera {name!r}")
        return sess.cameras[name]

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/session")
    def new_session():
        sid = uuid.uuid4().hex[:12]
        sessions[sid] = Session()
        return {"session_id": sid}

    @app.post("/scene/load")
    def scene_load(req: SceneLoadRequest):
        path = resolve(req.path)
        if not path.exists():
            raise _error(404, "scene_not_found", f"no such file: {path}")
        sess = session(req.session_id)
        with sess.mutation_lock:
            try:
                scene = sceneio.load_scene(path)
            except (FileFormatError, ValidationError) as exc:
                raise _error(422, "bad_scene", str(exc))
            sess.scene = scene
            sess.scene_path = str(path)
            sess.trained = bool(np.any(scene.affinities))
        return {"session_id": req.session_id, "n_gaussians": len(scene),
                "feature_dim": scene.feature_dim, "trained": sess.trained}

    @app.post("/cameras")
    def register_camera(req: CameraRegisterRequest):
        sess = session(req.session_id)
        try:
            if req.camera is not None:
                cam = sceneio.camera_from_dict(req.camera)
            elif req.path is not None:
                cam = sceneio.load_camera(resolve(req.path))
            else:
                raise _error(422, "bad_camera", "camera or path required")
        except (FileFormatError, ValidationError) as exc:
            raise _error(422, "bad_camera", str(exc))
        except OSError as exc:
            raise _error(404, "camera_not_found", str(exc))
        sess.cameras[req.name] = cam
        return {"name": req.name, "width": cam.width, "height": cam.height}

    @app.get("/cameras")
    def list_cameras(session_id: str = DEFAULT_SESSION):
        sess = session(session_id)
        return {"cameras": {name: sceneio.camera_to_dict(cam)
                            for name, cam in sess.cameras.items()}}

    def do_render(sess: Session, cam: Camera, mode: str, segmentation=None) -> bytes:
        future = render_pool.submit(render_now, sess, cam, mode, segmentation)
        try:
            return future.result(timeout=render_deadline_s)
        except FutureTimeout:
            future.cancel()
            raise _error(504, "render_deadline_exceeded",
                         f"render exceeded {render_deadline_s}s")

    def render_now(sess: Session, cam: Camera, mode: str, segmentation=None) -> bytes:
        scene = need_scene(sess)
        t0 = time.perf_counter()
        if mode == "color":
            img = render_payload(scene, cam, "color").payload.data
        elif mode == "feature_pca":
            img = render_payload(scene, cam, affinity_pca_colors(scene)).payload.data
        elif mode == "depth":
            d = center_depth_map(scene, cam).data[:, :, 0].astype(np.float64)
            span = max(d.max() - d.min(), 1e-12)
            img = np.repeat(((d - d.min()) / span)[:, :, None], 3, axis=2)
        elif mode == "overlay":
            img = render_payload(scene, cam, "color").payload.data.astype(np.float64)
            if segmentation is not None:
                seg = sess.segmentations.get(segmentation)
                if seg is None:
                    raise _error(404, "segmentation_not_found",
                                 f"unknown segmentation {segmentation!r}")
                mask = mask_from_scene(seg.scene, cam)
                img[mask] = 0.55 * img[mask] + 0.45 * np.array([1.0, 0.3, 0.2])
        else:
            raise _error(422, "bad_mode", f"unknown render mode {mode!r}")
        metrics["renders"] += 1
        metrics["render_ms_total"] += (time.perf_counter() - t0) * 1e3
        return _color_png_bytes(img)

    @app.get("/render")
    def render_get(camera: str, mode: str = "color",
                   segmentation: str | None = None,
                   session_id: str = DEFAULT_SESSION):
        sess = session(session_id)
        cam = get_camera(sess, name=camera)
        png = do_render(sess, cam, mode, segmentation)
        return Response(content=png, media_type="image/png")

    @app.post("/render")
    def render_post(req: RenderRequest):
        sess = session(req.session_id)
        cam = get_camera(sess, inline=req.camera)
        png = do_render(sess, cam, req.mode, req.segmentation)
        return Response(content=png, media_type="image/png")

    @app.post("/prompts")
    def add_prompts(req: PromptRequest):
        sess = session(req.session_id)
        cam = get_camera(sess, name=req.camera, inline=req.camera_inline)
        points = [tuple(float(v) for v in p) for p in req.points]
        try:
            PromptSet(view=cam, points=points).validate()
        except ValidationError as exc:
            raise _error(422, "bad_prompts", str(exc))
        pid = uuid.uuid4().hex[:12]
        sess.prompt_sets[pid] = {"camera": cam, "points": points,
                                 "camera_name": req.camera}
        return {"prompt_set_id": pid, "n_points": len(points)}

    def build_mask(sess: Session, cam: Camera, source: dict, points):
        kind = source.get("type", "none")
        if kind == "none":
            return None, "none"
        if kind == "upload":
            raw = base64.b64decode(source["png_base64"])
            arr = np.asarray(Image.open(io.BytesIO(raw)).convert("L")) >= 128
            return arr, "upload"
        if kind == "polygon":
            img = Image.new("L", (cam.width, cam.height), 0)
            ImageDraw.Draw(img).polygon([tuple(p) for p in source["points"]],
                                        fill=255)
            return np.asarray(img) >= 128, "polygon"
        if kind == "bank":
            bank = sceneio.load_mask_bank(resolve(source["manifest"]))
            hits = [sum(1 for u, v in points
                        if bank.masks[i][int(round(v)), int(round(u))])
                    for i in range(len(bank))]
            if not hits or max(hits) == 0:
                raise _error(422, "no_matching_mask",
                             "no bank mask contains the prompts")
            return bank.masks[int(np.argmax(hits))], f"bank:{source['manifest']}"
        raise _error(422, "bad_mask_source", f"unknown mask source {kind!r}")

    @app.post("/segment")
    def do_segment(req: SegmentRequest):
        sess = session(req.session_id)
        scene = need_scene(sess)
        ps = sess.prompt_sets.get(req.prompt_set)
        if ps is None:
            raise _error(404, "prompt_set_not_found",
                         f"unknown prompt set {req.prompt_set!r}")
        cam = ps["camera"]
        tau = sess.config["tau"] if req.tau is None else req.tau
        mask, mask_provenance = build_mask(sess, cam, req.mask_source, ps["points"])
        try:
            prompts = PromptSet(view=cam, points=ps["points"], mask_2d=mask,
                                prompt_id=req.prompt_set).validate()
            t0 = time.perf_counter()
            sim = prompt_similarity(scene, prompts)
            result = select_gaussians(scene, prompts, fuse_similarity(sim), tau)
            if req.use_sgc:
                if mask is None:
                    raise _error(422, "sgc_needs_mask",
                                 "SGC requires a mask source")
                sub_scene, records = apply_sgc(scene, result, prompts)
                result.cut_records = records
            else:
                sub_scene = scene.subset(result.selected)
        except ValidationError as exc:
            raise _error(422, "segment_failed", str(exc))
        pred_mask = mask_from_scene(sub_scene, cam)
        sid = uuid.uuid4().hex[:12]
        result_json = result.to_dict()
        result_json.update({
            "segmentation_id": sid,
            "use_sgc": req.use_sgc,
            "mask_source": mask_provenance,
            "n_cut": sum(1 for r in result.cut_records if r.action == "cut"),
            "n_dropped": sum(1 for r in result.cut_records if r.action == "drop"),
        })
        sess.segmentations[sid] = StoredSegmentation(
            result_json=result_json, mask=pred_mask,
            png_bytes=_png_bytes(pred_mask), scene=sub_scene,
            view_name=ps.get("camera_name") or "inline")
        metrics["segments"] += 1
        result_json["elapsed_ms"] = (time.perf_counter() - t0) * 1e3
        return result_json

    @app.get("/segmentation/{sid}/mask.png")
    def segmentation_mask(sid: str, session_id: str = DEFAULT_SESSION):
        sess = session(session_id)
        seg = sess.segmentations.get(sid)
        if seg is None:
            raise _error(404, "segmentation_not_found", f"unknown id {sid!r}")
        return Response(content=seg.png_bytes, media_type="image/png")

    @app.get("/segmentation/{sid}.json")
    def segmentation_json(sid: str, session_id: str = DEFAULT_SESSION):
        sess = session(session_id)
        seg = sess.segmentations.get(sid)
        if seg is None:
            raise _error(404, "segmentation_not_found", f"unknown id {sid!r}")
        return seg.result_json

    @app.post("/export")
    def export(req: ExportRequest):
        sess = session(req.session_id)
        seg = sess.segmentations.get(req.segmentation_id)
        if seg is None:
            raise _error(404, "segmentation_not_found",
                         f"unknown id {req.segmentation_id!r}")
        path = resolve(req.path)
        path.parent.mkdir(parents=True, exist_ok=True)
        sceneio.save_scene(seg.scene, path)
        return {"path": str(path), "n_gaussians": len(seg.scene)}

    @app.post("/train")
    def train(req: TrainRequest):
        sess = session(req.session_id)
        scene = need_scene(sess)
        data_dir = resolve(req.data)
        if not data_dir.exists():
            raise _error(404, "data_not_found", f"no such directory: {data_dir}")
        job_id = uuid.uuid4().hex[:12]
        job = {"status": "running", "iterations_done": 0,
               "iterations_total": req.iterations, "error": None}
        sess.train_jobs[job_id] = job

        def progress(done, total):
            job["iterations_done"] = done

        def run():
            with sess.mutation_lock:
                try:
                    views = load_views(data_dir)
                    cfg = TrainConfig(iterations=req.iterations,
                                      learning_rate=req.learning_rate,
                                      pairs_per_iter=req.pairs_per_iter,
                                      rng_seed=req.rng_seed)
                    trained, _ = train_feature_field(scene, views, cfg,
                                                     progress_callback=progress)
                    sess.scene = trained
                    sess.trained = True
                    job["status"] = "done"
                except Exception as exc:  # job surface, report don't raise
                    job["status"] = "failed"
                    job["error"] = str(exc)

        threading.Thread(target=run, daemon=True).start()
        return {"job_id": job_id}

    @app.get("/train/{job_id}")
    def train_status(job_id: str, session_id: str = DEFAULT_SESSION):
        sess = session(session_id)
        job = sess.train_jobs.get(job_id)
        if job is None:
            raise _error(404, "job_not_found", f"unknown job {job_id!r}")
        return job

    @app.get("/state")
    def state(session_id: str = DEFAULT_SESSION):
        sess = session(session_id)
        return {
            "session_id": session_id,
            "scene_path": sess.scene_path,
            "n_gaussians": len(sess.scene) if sess.scene is not None else 0,
            "trained": sess.trained,
            "config": sess.config,
            "cameras": list(sess.cameras),
            "prompt_sets": {pid: {"points": ps["points"],
                                  "camera": ps.get("camera_name")}
                            for pid, ps in sess.prompt_sets.items()},
            "segmentations": list(sess.segmentations),
        }

    @app.get("/metrics")
    def get_metrics():
        renders = metrics["renders"]
        return {
            "sessions": len(sessions),
            "renders": renders,
            "segments": metrics["segments"],
            "avg_render_ms": metrics["render_ms_total"] / renders if renders else 0.0,
            "uptime_s": time.time() - metrics["started"],
        }

    if frontend_dir and Path(frontend_dir).exists():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="ui")
    return app

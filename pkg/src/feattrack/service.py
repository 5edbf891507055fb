"""FastAPI service over the tracker package.

Batch endpoints back the CLI subcommands (synth, track, eval, bench-speed);
session endpoints expose the stateful lifecycle (create from a first frame
and box, then push frames and get boxes back). Sequence/output directory
fields are paths on the serving host; with the default in-process client
they are simply local paths.
"""

from __future__ import annotations

import base64
import threading
import time
import uuid

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .bench import format_bench_report, speed_benchmark
from .config import TrackerConfig, harness_config, paper_config, parse_config
from .geometry import BBox
from .metrics import evaluate, format_report
from .sequence import load_groundtruth, load_otb_sequence
from .synth import generate_synthetic_sequence, read_image_bytes, save_sequence
from .tracker import Tracker, read_results_csv, track_sequence, write_results_csv

app = FastAPI(title="feattrack", version=__version__)

_sessions: dict[str, dict] = {}
_sessions_lock = threading.Lock()


class SynthRequest(BaseModel):
    seed: int = 0
    frames: int = Field(60, ge=1)
    challenges: list[str] = []
    width: int = Field(320, ge=64)
    height: int = Field(240, ge=64)
    target_size: int = Field(48, ge=8)
    out_dir: str


class SynthResponse(BaseModel):
    dir: str
    frames: int
    challenges: list[str]


class TrackRequest(BaseModel):
    seq_dir: str
    seed: int | None = None
    config_text: str | None = None
    paper_config: bool = False
    timing: str = "none"  # "none" keeps results.csv byte-reproducible
    scoring: str = "sampling"


class TrackResponse(BaseModel):
    csv: str
    frames: int
    mean_ms: float


class EvalRequest(BaseModel):
    results_csv: str
    seq_dir: str


class EvalResponse(BaseModel):
    precision_at_20: float
    auc: float
    mean_fps: float
    report: str


class BenchRequest(BaseModel):
    seq_dir: str
    candidates: int = Field(256, ge=1)
    seed: int | None = None
    config_text: str | None = None
    paper_config: bool = False


class BenchResponse(BaseModel):
    sampling_fps: float
    baseline_fps: float
    speedup: float
    analytic_flop_ratio: float
    report: str


class SessionCreateRequest(BaseModel):
    frame_ppm_b64: str
    box: list[float] = Field(min_length=4, max_length=4)  # x, y, w, h
    seed: int | None = None
    config_text: str | None = None
    paper_config: bool = False


class SessionCreateResponse(BaseModel):
    session_id: str
    frame_index: int


class SessionStepRequest(BaseModel):
    frame_ppm_b64: str


class SessionStepResponse(BaseModel):
    frame_index: int
    box: list[float]
    confidence: float
    ms: float


class SessionInfo(BaseModel):
    session_id: str
    frame_index: int
    box: list[float]


def resolve_config(config_text: str | None, use_paper: bool, seed: int | None) -> TrackerConfig:
    base = paper_config() if use_paper else harness_config()
    cfg = parse_config(config_text, base) if config_text else base
    if seed is not None:
        cfg.seed = seed
    return cfg


def _bad_request(e: Exception) -> HTTPException:
    return HTTPException(status_code=400, detail=str(e))


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/synth", response_model=SynthResponse)
def synth(req: SynthRequest) -> SynthResponse:
    try:
        seq = generate_synthetic_sequence(
            req.seed, req.frames, req.challenges, (req.width, req.height), req.target_size
        )
        out = save_sequence(seq, req.out_dir)
    except (ValueError, OSError) as e:
        raise _bad_request(e)
    return SynthResponse(dir=str(out), frames=len(seq.frames), challenges=sorted(seq.attributes))


@app.post("/track", response_model=TrackResponse)
def track(req: TrackRequest) -> TrackResponse:
    if req.timing not in ("none", "wall"):
        raise _bad_request(ValueError(f"timing must be 'none' or 'wall', got {req.timing!r}"))
    try:
        seq = load_otb_sequence(req.seq_dir)
        cfg = resolve_config(req.config_text, req.paper_config, req.seed)
        results = track_sequence(seq.frames, seq.gt[0], cfg, scoring=req.scoring)
    except (ValueError, FileNotFoundError) as e:
        raise _bad_request(e)
    mean_ms = sum(r.ms for r in results) / len(results)
    return TrackResponse(
        csv=write_results_csv(results, include_timing=req.timing == "wall"),
        frames=len(results),
        mean_ms=mean_ms,
    )


@app.post("/eval", response_model=EvalResponse)
def eval_results(req: EvalRequest) -> EvalResponse:
    try:
        parsed = read_results_csv(req.results_csv)
        gt, n_frames = load_groundtruth(req.seq_dir)
        if len(parsed) != len(gt):
            raise ValueError(f"{len(parsed)} result rows vs {len(gt)} ground-truth lines")
        res = evaluate([r.box for r in parsed], gt, [r.ms for r in parsed])
    except (ValueError, FileNotFoundError) as e:
        raise _bad_request(e)
    return EvalResponse(
        precision_at_20=res.precision_at_20,
        auc=res.auc,
        mean_fps=res.mean_fps,
        report=format_report(res),
    )


@app.post("/bench", response_model=BenchResponse)
def bench(req: BenchRequest) -> BenchResponse:
    try:
        seq = load_otb_sequence(req.seq_dir)
        cfg = resolve_config(req.config_text, req.paper_config, req.seed)
        rep = speed_benchmark(seq, cfg, req.candidates)
    except (ValueError, FileNotFoundError) as e:
        raise _bad_request(e)
    return BenchResponse(
        sampling_fps=rep.sampling_fps,
        baseline_fps=rep.baseline_fps,
        speedup=rep.speedup,
        analytic_flop_ratio=rep.analytic_flop_ratio,
        report=format_bench_report(rep),
    )


def _decode_frame(b64: str):
    try:
        return read_image_bytes(base64.b64decode(b64))
    except Exception as e:
        raise _bad_request(ValueError(f"bad frame payload: {e}"))


@app.post("/sessions", response_model=SessionCreateResponse)
def create_session(req: SessionCreateRequest) -> SessionCreateResponse:
    frame = _decode_frame(req.frame_ppm_b64)
    try:
        cfg = resolve_config(req.config_text, req.paper_config, req.seed)
        tracker = Tracker(cfg)
        tracker.init(frame, BBox(*req.box))
    except ValueError as e:
        raise _bad_request(e)
    sid = uuid.uuid4().hex
    with _sessions_lock:
        _sessions[sid] = {"tracker": tracker, "lock": threading.Lock()}
    return SessionCreateResponse(session_id=sid, frame_index=tracker.frame_index)


def _get_session(sid: str) -> dict:
    with _sessions_lock:
        if sid not in _sessions:
            raise HTTPException(status_code=404, detail=f"no session {sid}")
        return _sessions[sid]


@app.post("/sessions/{sid}/frames", response_model=SessionStepResponse)
def step_session(sid: str, req: SessionStepRequest) -> SessionStepResponse:
    entry = _get_session(sid)
    frame = _decode_frame(req.frame_ppm_b64)
    with entry["lock"]:
        tracker: Tracker = entry["tracker"]
        t0 = time.perf_counter()
        try:
            box, conf = tracker.detect(frame)
            tracker.update(frame, box)
        except ValueError as e:
            raise _bad_request(e)
        ms = (time.perf_counter() - t0) * 1000.0
        return SessionStepResponse(
            frame_index=tracker.frame_index,
            box=[box.x, box.y, box.w, box.h],
            confidence=conf,
            ms=ms,
        )


@app.get("/sessions/{sid}", response_model=SessionInfo)
def session_info(sid: str) -> SessionInfo:
    entry = _get_session(sid)
    tracker: Tracker = entry["tracker"]
    b = tracker.current_box
    return SessionInfo(
        session_id=sid, frame_index=tracker.frame_index, box=[b.x, b.y, b.w, b.h]
    )


@app.delete("/sessions/{sid}")
def delete_session(sid: str) -> dict:
    with _sessions_lock:
        if sid not in _sessions:
            raise HTTPException(status_code=404, detail=f"no session {sid}")
        del _sessions[sid]
    return {"deleted": sid}

"""HTTP service wrapping the synthesis pipelines.

One app serves a small job API: POST a JobConfig, poll its status, fetch
the finished PNG.  Jobs run on a single worker thread so concurrent
requests never compete for memory or BLAS time; results stay in memory
for the life of the process.

Run it with uvicorn's factory mode:

    uvicorn --factory styleforge.service:create_app

The default weight file comes from the STYLE_MODEL_PATH environment
variable (read when the app is created); individual jobs may override it
with their model_path field.  Loaded models are cached per
(path, pooling) pair and shared across apps in the process.
"""

from __future__ import annotations

import base64
import os
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException, Response

from . import __version__, imageio
from . import pipelines as pl
from .errors import ConfigurationError
from .imageio import ImageFileError
from .model import NetworkModel, load_model
from .optimize import OptimizerConfig
from .schemas import (
    ColorOptions,
    HealthInfo,
    ImageRef,
    JobConfig,
    JobCreated,
    JobError,
    JobStatus,
    ModelInfo,
    RunReportModel,
    StageModel,
)

_MODEL_CACHE: dict[tuple[str, str], NetworkModel] = {}
_MODEL_CACHE_LOCK = threading.Lock()


def get_cached_model(path: str, pooling: str = "average") -> NetworkModel:
    """Load a weight file, reusing a previous load of the same file."""
    key = (str(path), pooling)
    with _MODEL_CACHE_LOCK:
        model = _MODEL_CACHE.get(key)
        if model is None:
            model = load_model(path, pooling=pooling)
            _MODEL_CACHE[key] = model
        return model


def load_image_ref(ref: ImageRef) -> np.ndarray:
    if ref.path is not None:
        return imageio.read_image(ref.path)
    try:
        raw = base64.b64decode(ref.data, validate=True)
    except Exception as exc:
        raise ImageFileError(f"invalid base64 image data: {exc}") from exc
    return imageio.decode_image(raw)


def load_mask_ref(ref: ImageRef) -> np.ndarray:
    if ref.path is not None:
        return imageio.read_mask(ref.path)
    try:
        raw = base64.b64decode(ref.data, validate=True)
    except Exception as exc:
        raise ImageFileError(f"invalid base64 mask data: {exc}") from exc
    return imageio.decode_mask(raw)


def settings_from_config(config: JobConfig) -> pl.TransferSettings:
    s = config.settings
    init_image = None if s.init_image is None else load_image_ref(s.init_image)
    return pl.TransferSettings(
        content_layers=tuple(s.content_layers),
        style_layers=tuple(s.style_layers),
        content_weight=s.content_weight,
        style_weight=s.style_weight,
        style_layer_weights=s.style_layer_weights,
        region_weights=dict(s.region_weights),
        guidance_mode=s.guidance_mode,
        spatial_method=s.spatial_method,
        add_global_channel=s.add_global_channel,
        init=s.init,
        init_image=init_image,
        seed=s.seed,
        optimizer=OptimizerConfig(**config.optimizer.model_dump()),
    )


@dataclass
class _Job:
    job_id: str
    config: JobConfig
    state: str = "queued"
    error: JobError | None = None
    report: RunReportModel | None = None
    stages: list[StageModel] | None = None
    mix_report: RunReportModel | None = None
    image: np.ndarray | None = None
    mixed_style: np.ndarray | None = None

    def status(self) -> JobStatus:
        return JobStatus(
            job_id=self.job_id,
            mode=self.config.mode,
            state=self.state,
            error=self.error,
            report=self.report,
            stages=self.stages,
            mix_report=self.mix_report,
        )


class JobRegistry:
    """In-memory job table guarded by one lock."""

    def __init__(self):
        self._jobs: dict[str, _Job] = {}
        self._lock = threading.Lock()

    def create(self, config: JobConfig) -> _Job:
        job = _Job(job_id=uuid.uuid4().hex, config=config)
        with self._lock:
            self._jobs[job.job_id] = job
        return job

    def get(self, job_id: str) -> _Job:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}")
        return job

    def update(self, job: _Job, **fields) -> None:
        with self._lock:
            for name, value in fields.items():
                setattr(job, name, value)

    def read(self, job: _Job, *names):
        with self._lock:
            return tuple(getattr(job, name) for name in names)

    def snapshot(self, job_id: str) -> JobStatus:
        job = self.get(job_id)
        with self._lock:
            return job.status()


def run_job(model: NetworkModel, config: JobConfig) -> dict:
    """Execute one job synchronously and return its result fields."""
    settings = settings_from_config(config)
    out: dict = {}

    if config.mode == "mix-style":
        fine = load_image_ref(config.mix.fine)
        coarse = load_image_ref(config.mix.coarse)
        fine_layers = tuple(config.mix.fine_layers)
        if config.content is None:
            mixed = pl.make_mixed_style(model, fine, coarse, fine_layers, settings)
            out["image"] = mixed.image
            out["mixed_style"] = mixed.image
            out["mix_report"] = RunReportModel.from_report(mixed.report)
            return out
        content = load_image_ref(config.content)
        res = pl.transfer_mixed_style(model, content, fine, coarse, fine_layers, settings)
        out["image"] = res.image
        out["mixed_style"] = res.mixed_style
        out["report"] = RunReportModel.from_report(res.report)
        out["mix_report"] = RunReportModel.from_report(res.mix_report)
        return out

    content = load_image_ref(config.content)
    styles = [
        pl.StyleInput(
            image=load_image_ref(s.image),
            masks={region: load_mask_ref(ref) for region, ref in s.masks.items()},
        )
        for s in config.styles
    ]

    if config.mode == "transfer":
        res = pl.transfer(model, content, styles, settings)
    elif config.mode == "spatial":
        content_masks = {
            region: load_mask_ref(ref) for region, ref in config.content_masks.items()
        }
        res = pl.transfer_spatial(model, content, styles, content_masks, settings)
    elif config.mode == "color-preserve":
        options = config.color if config.color is not None else ColorOptions()
        if options.mode == "luminance":
            res = pl.transfer_luminance_preserving(
                model, content, styles, settings, prematch=options.prematch
            )
        else:
            res, _transform = pl.transfer_color_matched(
                model, content, styles, settings, method=options.method
            )
    elif config.mode == "highres":
        hr = config.highres
        hr_config = pl.HighResConfig(
            budget_pixels=hr.budget_pixels if hr else 250_000,
            refinement_fraction=hr.refinement_fraction if hr else 1.0 / 2.5,
            refinement_iterations=hr.refinement_iterations if hr else None,
        )
        hres = pl.transfer_highres(model, content, styles, settings, hr_config)
        out["image"] = hres.image
        out["report"] = RunReportModel.from_report(hres.report)
        out["stages"] = [
            StageModel(
                size=stage.size,
                reduction_factor=stage.reduction_factor,
                iterations=stage.iterations,
                report=RunReportModel.from_report(stage.report),
            )
            for stage in hres.stages
        ]
        return out
    else:  # pragma: no cover - schema validation rejects unknown modes
        raise ConfigurationError(f"unknown mode {config.mode!r}")

    out["image"] = res.image
    out["report"] = RunReportModel.from_report(res.report)
    return out


def create_app(model_path: str | None = None, pooling: str | None = None) -> FastAPI:
    """Build the service app.

    model_path overrides STYLE_MODEL_PATH as the default weight file;
    pooling sets the default pooling for jobs that do not choose one.
    Models load lazily on first use, so an app with no configured model
    still serves /health and jobs that carry their own model_path.
    """
    default_path = model_path if model_path is not None else os.environ.get("STYLE_MODEL_PATH")
    default_pooling = pooling or "average"

    app = FastAPI(title="styleforge", version=__version__)
    registry = JobRegistry()
    executor = ThreadPoolExecutor(max_workers=1)
    app.state.registry = registry
    app.state.executor = executor
    app.state.default_model_path = default_path
    app.state.default_pooling = default_pooling

    def resolve_model(config: JobConfig) -> NetworkModel:
        path = config.model_path or default_path
        if path is None:
            raise ConfigurationError(
                "no weight file configured: set STYLE_MODEL_PATH or pass model_path"
            )
        return get_cached_model(path, config.pooling or default_pooling)

    def execute(job: _Job) -> None:
        registry.update(job, state="running")
        try:
            model = resolve_model(job.config)
            result = run_job(model, job.config)
        except Exception as exc:
            registry.update(
                job,
                state="failed",
                error=JobError(type=type(exc).__name__, message=str(exc)),
            )
            return
        registry.update(job, state="done", **result)

    @app.post("/jobs", response_model=JobCreated, status_code=202)
    def create_job(config: JobConfig) -> JobCreated:
        job = registry.create(config)
        executor.submit(execute, job)
        return JobCreated(job_id=job.job_id, state=job.state)

    @app.get("/jobs/{job_id}", response_model=JobStatus)
    def job_status(job_id: str) -> JobStatus:
        return registry.snapshot(job_id)

    def png_response(job_id: str, attribute: str, what: str) -> Response:
        job = registry.get(job_id)
        state, image = registry.read(job, "state", attribute)
        if state == "failed":
            detail = job.error.message if job.error else "job failed"
            raise HTTPException(status_code=409, detail=f"job failed: {detail}")
        if state != "done" or image is None:
            raise HTTPException(status_code=409, detail=f"{what} not ready (state: {state})")
        return Response(content=imageio.encode_png(image), media_type="image/png")

    @app.get("/jobs/{job_id}/result")
    def job_result(job_id: str) -> Response:
        return png_response(job_id, "image", "result")

    @app.get("/jobs/{job_id}/mixed-style")
    def job_mixed_style(job_id: str) -> Response:
        job = registry.get(job_id)
        if job.config.mode != "mix-style":
            raise HTTPException(status_code=404, detail="job has no mixed style")
        return png_response(job_id, "mixed_style", "mixed style")

    @app.get("/model", response_model=ModelInfo)
    def model_info() -> ModelInfo:
        if default_path is None:
            raise HTTPException(status_code=404, detail="no default weight file configured")
        try:
            model = get_cached_model(default_path, default_pooling)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        return ModelInfo(
            path=str(default_path),
            pooling=model.pooling,
            channel_order=model.channel_order,
            channel_means=[float(v) for v in model.channel_means],
            conv_layers=list(model.conv_specs),
        )

    @app.get("/health", response_model=HealthInfo)
    def health() -> HealthInfo:
        return HealthInfo(status="ok", version=__version__)

    return app

"""Request/response models for the synthesis service.

The JobConfig model is also the on-disk job-file format the CLI reads:
one declarative description of a synthesis job (image references, masks
keyed by region id, mode options, weights, optimizer overrides, seed).
Unknown keys are rejected everywhere so typos fail loudly instead of
silently falling back to defaults.

Images are referenced either by filesystem path (resolved before the job
is submitted) or by base64-encoded PNG/JPEG bytes, which lets the same
job document work against a remote server.
"""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .optimize import IterationRecord, RunReport

DEFAULT_CONTENT_LAYERS = ["conv4_2"]
DEFAULT_STYLE_LAYERS = ["conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"]
DEFAULT_FINE_LAYERS = ["conv1_1", "conv2_1"]


class _Base(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ImageRef(_Base):
    """Exactly one of path (a local file) or data (base64 image bytes)."""

    path: str | None = None
    data: str | None = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.path is None) == (self.data is None):
            raise ValueError("an image reference needs exactly one of 'path' or 'data'")
        return self


class MaskedStyle(_Base):
    image: ImageRef
    masks: dict[str, ImageRef] = Field(default_factory=dict)


class SettingsModel(_Base):
    content_layers: list[str] = Field(default_factory=lambda: list(DEFAULT_CONTENT_LAYERS))
    style_layers: list[str] = Field(default_factory=lambda: list(DEFAULT_STYLE_LAYERS))
    content_weight: float = Field(default=1.0, ge=0.0)
    style_weight: float = Field(default=1000.0, ge=0.0)
    style_layer_weights: dict[str, float] | None = None
    region_weights: dict[str, float] = Field(default_factory=dict)
    guidance_mode: Literal["simple", "eroded"] = "eroded"
    spatial_method: Literal["gram", "sum"] = "gram"
    add_global_channel: bool | None = None
    init: Literal["content", "noise", "provided"] = "content"
    init_image: ImageRef | None = None
    seed: int = 0

    @model_validator(mode="after")
    def _init_image_only_when_provided(self):
        if self.init == "provided" and self.init_image is None:
            raise ValueError("init 'provided' needs init_image")
        if self.init != "provided" and self.init_image is not None:
            raise ValueError("init_image is only meaningful with init 'provided'")
        return self


class OptimizerModel(_Base):
    max_iterations: int = Field(default=500, ge=0)
    history_size: int = Field(default=10, ge=1)
    armijo_c1: float = Field(default=1e-4, gt=0.0, lt=1.0)
    backtrack_factor: float = Field(default=0.5, gt=0.0, lt=1.0)
    max_step_halvings: int = Field(default=20, ge=1)
    convergence_rtol: float = Field(default=1e-6, ge=0.0)
    convergence_window: int = Field(default=5, ge=1)


class ColorOptions(_Base):
    mode: Literal["luminance", "match"] = "luminance"
    method: Literal["symmetric", "cholesky"] = "symmetric"
    prematch: Literal["auto", "on", "off"] = "auto"


class MixOptions(_Base):
    fine: ImageRef
    coarse: ImageRef
    fine_layers: list[str] = Field(default_factory=lambda: list(DEFAULT_FINE_LAYERS))


class HighResOptions(_Base):
    budget_pixels: int = Field(default=250_000, ge=1024)
    refinement_fraction: float = Field(default=0.4, gt=0.0, le=1.0)
    refinement_iterations: int | None = Field(default=None, ge=0)


JobMode = Literal["transfer", "spatial", "color-preserve", "mix-style", "highres"]


class JobConfig(_Base):
    """One synthesis job.  Mode-specific option blocks are only accepted
    for their mode, so a stray block signals a misconfigured file."""

    mode: JobMode
    content: ImageRef | None = None
    styles: list[MaskedStyle] = Field(default_factory=list)
    content_masks: dict[str, ImageRef] = Field(default_factory=dict)
    settings: SettingsModel = Field(default_factory=SettingsModel)
    optimizer: OptimizerModel = Field(default_factory=OptimizerModel)
    color: ColorOptions | None = None
    mix: MixOptions | None = None
    highres: HighResOptions | None = None
    model_path: str | None = None
    pooling: Literal["average", "max"] | None = None

    @model_validator(mode="after")
    def _mode_requirements(self):
        if self.mode == "mix-style":
            if self.mix is None:
                raise ValueError("mix-style jobs need the 'mix' block (fine and coarse styles)")
            if self.styles:
                raise ValueError("mix-style jobs take their styles from the 'mix' block")
        else:
            if self.content is None:
                raise ValueError(f"{self.mode} jobs need a content image")
            if not self.styles:
                raise ValueError(f"{self.mode} jobs need at least one style image")
        if self.mode in ("transfer", "color-preserve", "highres") and len(self.styles) > 1:
            raise ValueError(f"{self.mode} jobs take exactly one style image")
        if self.color is not None and self.mode != "color-preserve":
            raise ValueError("the 'color' block only applies to color-preserve jobs")
        if self.mix is not None and self.mode != "mix-style":
            raise ValueError("the 'mix' block only applies to mix-style jobs")
        if self.highres is not None and self.mode != "highres":
            raise ValueError("the 'highres' block only applies to highres jobs")
        if self.mode != "spatial":
            if self.content_masks or any(s.masks for s in self.styles):
                raise ValueError("region masks only apply to spatial jobs")
        return self


# -- responses ---------------------------------------------------------


class IterationModel(_Base):
    """One accepted optimiser step, in the same shape the telemetry
    stream uses: iter / total / terms / step (plus the gradient norm)."""

    iter: int
    total: float
    terms: dict[str, float]
    step: float
    grad_norm: float

    @classmethod
    def from_record(cls, rec: IterationRecord) -> "IterationModel":
        return cls(
            iter=rec.iteration,
            total=rec.total_loss,
            terms=dict(rec.term_losses),
            step=rec.step_size,
            grad_norm=rec.gradient_norm,
        )

    def telemetry_line(self) -> dict[str, Any]:
        return {"iter": self.iter, "total": self.total, "terms": self.terms, "step": self.step}


class RunReportModel(_Base):
    iterations: list[IterationModel]
    termination: str
    wall_time_s: float
    settings: dict[str, Any]

    @classmethod
    def from_report(cls, report: RunReport) -> "RunReportModel":
        return cls(
            iterations=[IterationModel.from_record(r) for r in report.iterations],
            termination=report.termination,
            wall_time_s=report.wall_time_s,
            settings=dict(report.settings),
        )


class StageModel(_Base):
    size: tuple[int, int]
    reduction_factor: int
    iterations: int
    report: RunReportModel


class JobError(_Base):
    type: str
    message: str


JobState = Literal["queued", "running", "done", "failed"]


class JobStatus(_Base):
    job_id: str
    mode: JobMode
    state: JobState
    error: JobError | None = None
    report: RunReportModel | None = None
    stages: list[StageModel] | None = None
    mix_report: RunReportModel | None = None


class JobCreated(_Base):
    job_id: str
    state: JobState


class ModelInfo(_Base):
    path: str
    pooling: str
    channel_order: str
    channel_means: list[float]
    conv_layers: list[str]


class HealthInfo(_Base):
    status: str
    version: str

import time
from pathlib import Path
from typing import Annotated, Any, Callable, Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, FilePath, PositiveFloat, PositiveInt, TypeAdapter, ValidationError, model_validator

from dimensionality_lab.core import logger, utils
from dimensionality_lab.core.commands import metrics as metrics_command, sweep as sweep_command, train as train_command
from dimensionality_lab.core.commands.metrics import MetricName, PAIRED_METRICS
from dimensionality_lab.core.config import APP_VERSION, DEFAULT_OUTPUT_DIR, MANIFEST_FILE, WORKERS, validate_output_dir
from dimensionality_lab.core.errors import ConfigParseError, ExperimentError
from dimensionality_lab.core.gaussian import BlobConfig
from dimensionality_lab.core.spectrum import SpectrumMode
from dimensionality_lab.core.toyssl import TrainConfig

COMMAND_NAMES = ("sweep-features", "sweep-variance", "train-toy", "metrics")


class ExperimentBase(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(0, ge=0)
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)


class SweepFeaturesExperiment(ExperimentBase):
    """
    I(R;Z) of a PCA projection as the blob feature count grows
    """
    command: Literal["sweep-features"] = "sweep-features"
    blobs: BlobConfig = BlobConfig()
    feature_counts: list[PositiveInt] = Field(default_factory=lambda: [15, 20, 30, 40, 50], min_length=1)
    pca_k: PositiveInt = 10
    repeats: PositiveInt = 100
    workers: PositiveInt = WORKERS

    @model_validator(mode="after")
    def check_projection(self) -> "SweepFeaturesExperiment":
        if min(self.feature_counts) < self.pca_k + 1:
            raise ValueError(f"feature_counts must all be at least pca_k + 1 = {self.pca_k + 1}")
        if self.blobs.n_samples <= self.pca_k:
            raise ValueError(f"blobs.n_samples must exceed pca_k = {self.pca_k}")
        return self


class SweepVarianceExperiment(ExperimentBase):
    """
    I(R;Z) of a PCA projection as the blob cluster_std grows
    """
    command: Literal["sweep-variance"] = "sweep-variance"
    blobs: BlobConfig = BlobConfig()
    stds: list[PositiveFloat] = Field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0, 8.0], min_length=1)
    pca_k: PositiveInt = 2
    repeats: PositiveInt = 100
    workers: PositiveInt = WORKERS

    @model_validator(mode="after")
    def check_projection(self) -> "SweepVarianceExperiment":
        if self.blobs.n_features < self.pca_k + 1:
            raise ValueError(f"blobs.n_features must be at least pca_k + 1 = {self.pca_k + 1}")
        if self.blobs.n_samples <= self.pca_k:
            raise ValueError(f"blobs.n_samples must exceed pca_k = {self.pca_k}")
        return self


class TrainToyExperiment(ExperimentBase):
    command: Literal["train-toy"] = "train-toy"
    train: TrainConfig = TrainConfig()
    save_checkpoint: bool = True


class MetricsExperiment(ExperimentBase):
    """
    Spectrum and matrix-entropy metrics of one or two CSV feature matrices
    """
    command: Literal["metrics"] = "metrics"
    inputs: list[FilePath] = Field(min_length=1, max_length=2)
    metrics: list[MetricName] = Field(default_factory=lambda: ["er", "vne", "renyi", "cev", "count", "uniformity"], min_length=1)
    mode: SpectrumMode = "covariance"
    center: bool = True
    renyi_alpha: PositiveFloat = 2.0
    cev_p: float = Field(0.5, gt=0, le=1)
    count_tau: PositiveFloat = 0.01
    uniformity_t: PositiveFloat = 2.0

    @model_validator(mode="after")
    def check_inputs(self) -> "MetricsExperiment":
        if self.renyi_alpha == 1:
            raise ValueError("renyi_alpha must differ from 1")
        paired = [name for name in self.metrics if name in PAIRED_METRICS]
        if paired and len(self.inputs) != 2:
            raise ValueError(f"{', '.join(paired)} need exactly two inputs")
        return self


ExperimentConfig = Annotated[Union[SweepFeaturesExperiment, SweepVarianceExperiment, TrainToyExperiment, MetricsExperiment],
                             Field(discriminator="command")]

EXPERIMENT_ADAPTER = TypeAdapter(ExperimentConfig)

RUNNERS: dict[str, Callable[[Any, utils.ArtifactWriter], None]] = {
    "sweep-features": sweep_command.run_sweep_features,
    "sweep-variance": sweep_command.run_sweep_variance,
    "train-toy": train_command.run_train_toy,
    "metrics": metrics_command.run_metrics,
}


class ArtifactRecord(BaseModel):
    path: str
    sha256: str
    bytes: int


class RunManifest(BaseModel):
    """
    Everything needed to reproduce and verify a run
    """
    version: str
    command: str
    seed: int
    config: dict[str, Any]
    wall_time_s: float
    artifacts: list[ArtifactRecord]


def _error_key(error: dict) -> str:
    # discriminated unions prefix the location with the tag
    location = [str(part) for part in error["loc"]]
    if error["type"] in ("union_tag_not_found", "union_tag_invalid"):
        return "command"
    if location and location[0] in COMMAND_NAMES:
        location = location[1:]
    return ".".join(location) or "<document>"


def _resolve_seeds(cfg: ExperimentConfig) -> ExperimentConfig:
    """
    Push the experiment seed into the nested generator and training configs
    """
    if isinstance(cfg, (SweepFeaturesExperiment, SweepVarianceExperiment)):
        return cfg.model_copy(update={"blobs": cfg.blobs.model_copy(update={"seed": cfg.seed})})
    if isinstance(cfg, TrainToyExperiment):
        blobs = cfg.train.blobs.model_copy(update={"seed": cfg.seed})
        return cfg.model_copy(update={"train": cfg.train.model_copy(update={"seed": cfg.seed, "blobs": blobs})})
    return cfg


def parse_config(source: str, overrides: dict[str, Any] | None = None, command: str | None = None) -> ExperimentConfig:
    """
    Validate a YAML experiment config, applying non-None overrides on top of the file values

    When command is given, a file naming a different command is rejected.
    """
    try:
        raw = yaml.safe_load(source) if source.strip() else {}
    except yaml.YAMLError as e:
        raise ConfigParseError("<document>", f"Malformed YAML: {e}") from e

    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigParseError("<document>", "Top level of a config must be a mapping")

    if command is not None:
        if raw.get("command", command) != command:
            raise ConfigParseError("command", f"Config is for '{raw['command']}' but '{command}' was requested")
        raw["command"] = command

    raw.update({key: value for key, value in (overrides or {}).items() if value is not None})

    try:
        cfg = EXPERIMENT_ADAPTER.validate_python(raw)
    except ValidationError as e:
        error = e.errors()[0]
        raise ConfigParseError(_error_key(error), error["msg"]) from e

    return _resolve_seeds(cfg)


def serialize_config(cfg: ExperimentConfig) -> str:
    """
    YAML text that parse_config turns back into an equal config
    """
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    """
    Run one experiment into cfg.output_dir and write its manifest last

    On failure every artifact already written is removed and the error is wrapped with the command name.
    """
    validate_output_dir(cfg.output_dir)
    writer = utils.ArtifactWriter(cfg.output_dir)

    # a manifest left by an earlier run in this directory would describe files this run replaces
    stale_manifest = cfg.output_dir / MANIFEST_FILE
    if stale_manifest.exists():
        stale_manifest.unlink()
        logger.channel("experiment").warning(f"Removed the manifest of a previous run in {cfg.output_dir}")

    logger.channel("experiment").info(f"Running '{cfg.command}' with seed {cfg.seed} into {cfg.output_dir}")
    start_time = time.perf_counter()

    try:
        RUNNERS[cfg.command](cfg, writer)
    except Exception as e:
        writer.remove_all()
        logger.channel("experiment").error(f"Experiment '{cfg.command}' failed, partial outputs removed: {e}")
        raise ExperimentError(cfg.command, e) from e

    wall_time = time.perf_counter() - start_time
    manifest = RunManifest(version=APP_VERSION, command=cfg.command, seed=cfg.seed, config=cfg.model_dump(mode="json"), wall_time_s=wall_time,
                           artifacts=[ArtifactRecord(**record) for record in writer.records()])

    utils.atomic_write_text(cfg.output_dir / MANIFEST_FILE, manifest.model_dump_json(indent=2))
    logger.channel("experiment").info(f"'{cfg.command}' finished in {wall_time:.2f} s with {len(manifest.artifacts)} artifacts")

    return manifest

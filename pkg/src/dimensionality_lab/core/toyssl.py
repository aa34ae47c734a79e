import datetime
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, FilePath, PositiveInt, model_validator

from dimensionality_lab.core import logger
from dimensionality_lab.core.errors import InvalidInputError, ShapeError, InvalidParameterError, DegenerateBatchError, SingularModelError, \
    TrainingDivergenceError
from dimensionality_lab.core.gaussian import BlobConfig, blob_labels, generate_blobs, empirical_block_covariance, gaussian_mutual_info
from dimensionality_lab.core.losses import LossConfig, adadim_loss
from dimensionality_lab.core.mlp import MlpModel, AdamState, init_mlp, forward_values, represent_values, backward, adam_step, load_checkpoint
from dimensionality_lab.core.spectrum import (FeatureMatrix, as_feature_matrix, compute_spectrum, effective_rank, matrix_mutual_information,
                                              uniformity)

TRAJECTORY_COLUMNS = ["epoch", "loss_total", "loss_nce", "loss_vicreg", "alpha", "er_r", "er_z", "mi_rz", "uniformity_r", "uniformity_z"]

# probe batch size in full-batch mode when none is configured
DEFAULT_PROBE_BATCH = 256


class AlphaSchedule(BaseModel):
    """
    How often and on how many batches the adaptive weight is re-estimated
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    e_alpha: int = Field(50, ge=1)
    n_probe_batches: int = Field(10, ge=1)
    max_dim: PositiveInt | None = None
    current_alpha: float = Field(1.0, ge=0, le=1)
    probe_batch_size: int | None = Field(None, ge=2)


class TrainConfig(BaseModel):
    """
    A complete toy training run: data, architecture, objective, optimizer and logging cadence
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    blobs: BlobConfig = BlobConfig(n_samples=1000, n_features=25, n_centers=5, cluster_std=0.01)
    data_csv: FilePath | None = None

    encoder_hidden: list[PositiveInt] = Field(default_factory=lambda: [20] * 5, min_length=1)
    projector_hidden: list[PositiveInt] = Field(default_factory=lambda: [5, 5], min_length=1)
    loss: LossConfig = LossConfig()

    alpha_mode: Literal["fixed", "adaptive"] = "fixed"
    alpha: float = Field(1.0, ge=0, le=1)
    schedule: AlphaSchedule = AlphaSchedule()

    epochs: int = Field(1000, ge=0)
    batch_size: int | None = Field(None, ge=2)
    lr: float = Field(1e-4, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    noise_sigma: float = Field(0.5, ge=0)

    log_every: int = Field(1, ge=1)
    metric_rows: int | None = Field(None, ge=2)
    closed_form_mi: bool = True

    init_checkpoint: FilePath | None = None
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_sizes(self) -> "TrainConfig":
        if self.data_csv is None and self.blobs.n_samples < 2:
            raise ValueError("Training needs at least two samples")
        return self


@dataclass(frozen=True)
class TrajectoryRecord:
    epoch: int
    loss_total: float
    # raw component losses, NaN for a component alpha gives no weight
    loss_nce: float
    loss_vicreg: float
    alpha: float
    er_r: float
    er_z: float
    mi_rz: float
    uniformity_r: float
    uniformity_z: float
    # closed-form I(X;Z) under a joint Gaussian model, None when disabled
    mi_xz_gaussian: float | None = None

    def row(self) -> dict:
        return {column: getattr(self, column) for column in TRAJECTORY_COLUMNS}


@dataclass(frozen=True, eq=False)
class TrainResult:
    trajectory: list[TrajectoryRecord]
    model: MlpModel
    # (epoch the value first applies to, alpha)
    alpha_history: list[tuple[int, float]] = field(default_factory=list)


def augment(X: FeatureMatrix | np.ndarray, sigma: float, seed: int | np.random.Generator) -> FeatureMatrix:
    """
    Add elementwise N(0, sigma^2) noise
    """
    X = as_feature_matrix(X)
    noisy = _noisy(X.values, sigma, np.random.default_rng(seed))
    return X if noisy is X.values else FeatureMatrix(noisy)


def _noisy(values: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise InvalidParameterError(f"Noise sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return values
    return values + rng.normal(0.0, sigma, size=values.shape)


def compute_alpha(probe_batches: Sequence[FeatureMatrix | np.ndarray], max_dim: int) -> float:
    """
    Mean effective rank of the probe representations over max_dim, clipped to [0, 1]
    """
    if not probe_batches:
        raise InvalidParameterError("compute_alpha needs at least one probe batch")
    if max_dim < 1:
        raise InvalidParameterError(f"max_dim must be positive, got {max_dim}")

    ranks = []
    for batch in probe_batches:
        batch = as_feature_matrix(batch)
        if batch.rows < 2:
            raise InvalidInputError(f"Probe batches need at least two rows, got {batch.rows}")
        ranks.append(effective_rank(compute_spectrum(batch, "singular")))

    return float(np.clip(np.mean(ranks) / max_dim, 0.0, 1.0))


def load_training_data(cfg: TrainConfig) -> tuple[FeatureMatrix, np.ndarray | None]:
    """
    Training matrix plus cluster labels when the data is generated
    """
    if cfg.data_csv is not None:
        return FeatureMatrix.from_csv(cfg.data_csv), None
    return generate_blobs(cfg.blobs), blob_labels(cfg.blobs)


def _represent_finite(model: MlpModel, values: np.ndarray, epoch: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Evaluation pass during training of 0-based epoch `epoch`, raising a divergence error on overflow
    """
    R, Z = represent_values(model, values)
    if not (np.all(np.isfinite(R)) and np.all(np.isfinite(Z))):
        raise TrainingDivergenceError(f"Non-finite representations in epoch {epoch + 1}", last_good_epoch=epoch)
    return R, Z


def _record(epoch: int, model: MlpModel, X_eval: FeatureMatrix, losses: np.ndarray, alpha: float, cfg: TrainConfig) -> TrajectoryRecord:
    R, Z = (FeatureMatrix(values) for values in _represent_finite(model, X_eval.values, epoch - 1))

    mi_xz = None
    if cfg.closed_form_mi:
        try:
            mi_xz = gaussian_mutual_info(empirical_block_covariance(X_eval, Z))
        except SingularModelError as e:
            logger.channel("train").warning(f"Closed-form I(X;Z) undefined at epoch {epoch}: {e}")
            mi_xz = float("nan")

    return TrajectoryRecord(
        epoch=epoch,
        loss_total=float(losses[0]),
        loss_nce=float(losses[1]),
        loss_vicreg=float(losses[2]),
        alpha=alpha,
        er_r=effective_rank(compute_spectrum(R, "singular")),
        er_z=effective_rank(compute_spectrum(Z, "singular")),
        mi_rz=matrix_mutual_information(R, Z, 2.0),
        uniformity_r=uniformity(R),
        uniformity_z=uniformity(Z),
        mi_xz_gaussian=mi_xz,
    )


def train(cfg: TrainConfig, data: FeatureMatrix | np.ndarray | None = None) -> TrainResult:
    """
    Two-view training of the encoder/projector under the alpha-weighted loss

    Each epoch draws fresh noise for both views of every batch. In adaptive mode alpha is re-estimated
    on unaugmented probe batches before the first update of every e_alpha-th epoch.
    """
    X = as_feature_matrix(data) if data is not None else load_training_data(cfg)[0]
    n = X.rows
    if n < 2:
        raise DegenerateBatchError(f"Training needs at least two samples, got {n}")

    rng = np.random.default_rng(cfg.seed)
    if cfg.init_checkpoint is not None:
        model = load_checkpoint(cfg.init_checkpoint)
        logger.channel("train").info(f"Resuming from checkpoint {cfg.init_checkpoint}")
    else:
        model = init_mlp(X.cols, cfg.encoder_hidden, cfg.projector_hidden, rng)
    if model.input_dim != X.cols:
        raise ShapeError(f"Model expects {model.input_dim} input features, data has {X.cols}")

    state = AdamState.zeros_like(model.parameters())
    batch_size = min(cfg.batch_size or n, n)
    probe_size = min(cfg.schedule.probe_batch_size or cfg.batch_size or DEFAULT_PROBE_BATCH, n)
    max_dim = cfg.schedule.max_dim or model.representation_dim
    X_eval = X if cfg.metric_rows is None or cfg.metric_rows >= n else FeatureMatrix(X.values[:cfg.metric_rows])

    adaptive = cfg.alpha_mode == "adaptive"
    alpha = cfg.schedule.current_alpha if adaptive else cfg.alpha
    trajectory: list[TrajectoryRecord] = []
    alpha_history: list[tuple[int, float]] = [(1, alpha)] if not adaptive and cfg.epochs > 0 else []

    logger.channel("train").info(f"Training {cfg.epochs} epochs on {n}x{X.cols} data, batch {batch_size}, "
                                 f"alpha {'adaptive' if adaptive else alpha}, encoder {model.encoder_dims}, projector {model.projector_dims}")
    before = datetime.datetime.now()

    for epoch in range(cfg.epochs):
        if adaptive and epoch % cfg.schedule.e_alpha == 0:
            probes = [_represent_finite(model, X.values[rng.choice(n, size=probe_size, replace=False)], epoch)[0]
                      for _ in range(cfg.schedule.n_probe_batches)]
            alpha = compute_alpha(probes, max_dim)
            alpha_history.append((epoch + 1, alpha))
            logger.channel("train").debug(f"alpha = {alpha:.4f} from epoch {epoch + 1}")

        order = rng.permutation(n) if batch_size < n else np.arange(n)
        totals = np.zeros(3)
        batches = 0

        for start in range(0, n, batch_size):
            index = order[start:start + batch_size]
            # a trailing single-sample batch has no negatives and no covariance
            if index.size < 2:
                continue

            batch = X.values[index]
            _, Z_a, cache_a = forward_values(model, _noisy(batch, cfg.noise_sigma, rng))
            _, Z_b, cache_b = forward_values(model, _noisy(batch, cfg.noise_sigma, rng))
            if not (np.all(np.isfinite(Z_a)) and np.all(np.isfinite(Z_b))):
                raise TrainingDivergenceError(f"Non-finite activations in epoch {epoch + 1}", last_good_epoch=epoch)

            result = adadim_loss(Z_a, Z_b, alpha, cfg.loss)
            if not np.isfinite(result.loss):
                raise TrainingDivergenceError(f"Non-finite loss at epoch {epoch + 1}", last_good_epoch=epoch)

            grads = [grad_a + grad_b for grad_a, grad_b in zip(backward(model, cache_a, result.grad_z), backward(model, cache_b, result.grad_zp))]
            try:
                model, state = adam_step(model, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            except TrainingDivergenceError as e:
                raise TrainingDivergenceError(f"{e.message} in epoch {epoch + 1}", last_good_epoch=epoch) from e

            totals += (result.loss, result.nce, result.vicreg)
            batches += 1

        if (epoch + 1) % cfg.log_every == 0:
            record = _record(epoch + 1, model, X_eval, totals / max(batches, 1), alpha, cfg)
            trajectory.append(record)
            logger.channel("train").debug(f"Epoch {record.epoch}: loss {record.loss_total:.4f}, er_r {record.er_r:.3f}, mi_rz {record.mi_rz:.4f}")

    delta = datetime.datetime.now() - before
    logger.channel("train").info(f"Training complete ({delta})")

    return TrainResult(trajectory=trajectory, model=model, alpha_history=alpha_history)

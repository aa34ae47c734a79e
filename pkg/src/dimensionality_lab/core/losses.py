from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from dimensionality_lab.core.config import VARIANCE_EPSILON
from dimensionality_lab.core.errors import InvalidInputError, ShapeError, InvalidParameterError, DegenerateBatchError
from dimensionality_lab.core.spectrum import FeatureMatrix, as_feature_matrix

HINGE_TOLERANCE = 1e-12


class LossConfig(BaseModel):
    """
    Temperature of the sample-contrastive loss and weights of the dimension-contrastive one
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    tau: float = Field(0.1, gt=0)
    lambda_sim: float = 25.0
    mu_var: float = 25.0
    nu_cov: float = 1.0
    gamma: float = Field(1.0, gt=0)
    epsilon: float = Field(VARIANCE_EPSILON, gt=0)


@dataclass(frozen=True, eq=False)
class LossResult:
    loss: float
    grad_z: np.ndarray
    grad_zp: np.ndarray


@dataclass(frozen=True, eq=False)
class AdaDimLossResult(LossResult):
    alpha: float
    nce: float
    vicreg: float


def _check_views(Z: FeatureMatrix | np.ndarray, Zp: FeatureMatrix | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z, zp = as_feature_matrix(Z).values, as_feature_matrix(Zp).values
    if z.shape != zp.shape:
        raise ShapeError(f"Views must have equal shapes, got {z.shape} and {zp.shape}")
    if z.shape[0] < 2:
        raise DegenerateBatchError(f"Batch of {z.shape[0]} sample(s) is too small, need at least 2")
    return z, zp


def info_nce_loss(Z: FeatureMatrix | np.ndarray, Zp: FeatureMatrix | np.ndarray, tau: float = 0.1) -> LossResult:
    """
    NT-Xent loss averaged over all 2N anchors, with gradients for both views

    Every anchor is contrasted against the other 2N - 1 embeddings using cosine similarity over tau.
    """
    if tau <= 0:
        raise InvalidParameterError(f"Temperature tau must be positive, got {tau}")

    z, zp = _check_views(Z, Zp)
    return _info_nce(z, zp, tau)


def _info_nce(z: np.ndarray, zp: np.ndarray, tau: float) -> LossResult:
    n = z.shape[0]

    views = np.vstack([z, zp])
    norms = np.linalg.norm(views, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise InvalidInputError("Cosine similarity is undefined for zero-norm embeddings")
    unit = views / norms

    logits = unit @ unit.T / tau
    np.fill_diagonal(logits, -np.inf)

    anchors = np.arange(2 * n)
    positives = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
    # logits are bounded by 1 / tau, so shifting by the row max keeps exp in range
    row_max = logits.max(axis=1, keepdims=True)
    weights = np.exp(logits - row_max)
    partition = weights.sum(axis=1, keepdims=True)
    log_partition = np.log(partition[:, 0]) + row_max[:, 0]
    loss = float(np.mean(log_partition - logits[anchors, positives]))

    # dLoss/dlogits is softmax minus the positive indicator, per anchor
    grad_logits = weights / partition
    grad_logits[anchors, positives] -= 1.0
    grad_logits /= 2 * n

    grad_unit = (grad_logits + grad_logits.T) @ unit / tau
    # project out the radial component: d(h/|h|)/dh = (I - u u^T) / |h|
    grad_views = (grad_unit - unit * np.sum(grad_unit * unit, axis=1, keepdims=True)) / norms

    return LossResult(loss, grad_views[:n], grad_views[n:])


def _variance_term(z: np.ndarray, gamma: float, epsilon: float) -> tuple[float, np.ndarray]:
    n, d = z.shape
    centered = z - z.mean(axis=0)
    std = np.sqrt(np.sum(centered ** 2, axis=0) / (n - 1) + epsilon)
    hinge = gamma - std

    # subgradient 0 at the kink, including stds within rounding of gamma
    active = hinge > HINGE_TOLERANCE * gamma
    value = float(np.sum(np.where(active, hinge, 0.0)) / d)
    grad = -centered * (active / (d * std * (n - 1)))[None, :]
    return value, grad


def _covariance_term(z: np.ndarray) -> tuple[float, np.ndarray]:
    n, d = z.shape
    centered = z - z.mean(axis=0)
    off_diagonal = centered.T @ centered / (n - 1)
    np.fill_diagonal(off_diagonal, 0.0)

    value = float(np.sum(off_diagonal ** 2) / d)
    grad = 4.0 * centered @ off_diagonal / (d * (n - 1))
    return value, grad


def vicreg_terms(Z: FeatureMatrix | np.ndarray, Zp: FeatureMatrix | np.ndarray, cfg: LossConfig = LossConfig()) -> dict[str, float]:
    """
    Unweighted invariance, variance and covariance terms, for logging and inspection
    """
    z, zp = _check_views(Z, Zp)
    return {
        "invariance": float(np.sum((z - zp) ** 2) / z.shape[0]),
        "variance": _variance_term(z, cfg.gamma, cfg.epsilon)[0] + _variance_term(zp, cfg.gamma, cfg.epsilon)[0],
        "covariance": _covariance_term(z)[0] + _covariance_term(zp)[0],
    }


def vicreg_loss(Z: FeatureMatrix | np.ndarray, Zp: FeatureMatrix | np.ndarray, cfg: LossConfig = LossConfig()) -> LossResult:
    """
    Weighted sum of mean squared view difference, std hinge and off-diagonal covariance penalty
    """
    z, zp = _check_views(Z, Zp)
    return _vicreg(z, zp, cfg)


def _vicreg(z: np.ndarray, zp: np.ndarray, cfg: LossConfig) -> LossResult:
    n = z.shape[0]

    difference = z - zp
    invariance = float(np.sum(difference ** 2) / n)
    grad_invariance = 2.0 * difference / n

    variance_z, grad_variance_z = _variance_term(z, cfg.gamma, cfg.epsilon)
    variance_zp, grad_variance_zp = _variance_term(zp, cfg.gamma, cfg.epsilon)
    covariance_z, grad_covariance_z = _covariance_term(z)
    covariance_zp, grad_covariance_zp = _covariance_term(zp)

    loss = cfg.lambda_sim * invariance + cfg.mu_var * (variance_z + variance_zp) + cfg.nu_cov * (covariance_z + covariance_zp)
    grad_z = cfg.lambda_sim * grad_invariance + cfg.mu_var * grad_variance_z + cfg.nu_cov * grad_covariance_z
    grad_zp = -cfg.lambda_sim * grad_invariance + cfg.mu_var * grad_variance_zp + cfg.nu_cov * grad_covariance_zp

    return LossResult(float(loss), grad_z, grad_zp)


def adadim_loss(Z: FeatureMatrix | np.ndarray, Zp: FeatureMatrix | np.ndarray, alpha: float, cfg: LossConfig = LossConfig()) -> AdaDimLossResult:
    """
    alpha * InfoNCE + (1 - alpha) * VICReg, applied to the raw losses and their gradients

    A component with zero weight is not evaluated and its raw value is reported as NaN, so alpha = 0 works on
    batches InfoNCE is undefined on (zero-norm embeddings) and gives exactly the VICReg loss.
    """
    if not 0 <= alpha <= 1:
        raise InvalidParameterError(f"alpha must be in [0, 1], got {alpha}")

    z, zp = _check_views(Z, Zp)
    loss, grad_z, grad_zp = 0.0, np.zeros_like(z), np.zeros_like(zp)
    nce_value = vicreg_value = float("nan")

    if alpha > 0:
        nce = _info_nce(z, zp, cfg.tau)
        nce_value = nce.loss
        loss, grad_z, grad_zp = alpha * nce.loss, alpha * nce.grad_z, alpha * nce.grad_zp
    if alpha < 1:
        vicreg = _vicreg(z, zp, cfg)
        vicreg_value = vicreg.loss
        loss, grad_z, grad_zp = loss + (1 - alpha) * vicreg.loss, grad_z + (1 - alpha) * vicreg.grad_z, grad_zp + (1 - alpha) * vicreg.grad_zp

    return AdaDimLossResult(loss=float(loss), grad_z=grad_z, grad_zp=grad_zp, alpha=float(alpha), nce=nce_value, vicreg=vicreg_value)

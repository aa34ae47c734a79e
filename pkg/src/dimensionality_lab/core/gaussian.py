import datetime
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import LinAlgError, cho_factor, solve_triangular, svd

from dimensionality_lab.core import logger, utils
from dimensionality_lab.core.config import (RIDGE_SCALE, ENTROPY_RIDGE, SINGULAR_DETERMINANT_FLOOR, SINGULAR_RELATIVE_FLOOR, SCHUR_AGREEMENT_RTOL, SCHUR_AGREEMENT_ATOL,
                                            SCHUR_FAILURE_RTOL, PSD_TOLERANCE)
from dimensionality_lab.core.errors import InvalidInputError, ShapeError, InvalidParameterError, InvalidMatrixError, SingularModelError
from dimensionality_lab.core.spectrum import FeatureMatrix, as_feature_matrix, compute_spectrum, effective_rank

LOG_SINGULAR_FLOOR = math.log(SINGULAR_DETERMINANT_FLOOR)


class BlobConfig(BaseModel):
    """
    Parameters of the isotropic Gaussian cluster generator
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_samples: int = Field(1000, ge=1)
    n_features: int = Field(25, ge=1)
    n_centers: int = Field(5, ge=1)
    cluster_std: float = Field(1.0, ge=0)
    center_box: tuple[float, float] = (-10.0, 10.0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_consistency(self) -> "BlobConfig":
        if self.n_centers > self.n_samples:
            raise ValueError(f"n_centers ({self.n_centers}) must not exceed n_samples ({self.n_samples})")
        if self.center_box[0] >= self.center_box[1]:
            raise ValueError(f"center_box must be an increasing interval, got {self.center_box}")
        return self


def blob_labels(cfg: BlobConfig) -> np.ndarray:
    """
    Round-robin cluster assignment of each sample
    """
    return np.arange(cfg.n_samples) % cfg.n_centers


def generate_blobs(cfg: BlobConfig) -> FeatureMatrix:
    """
    Place centers uniformly in the box, assign samples round-robin and add isotropic noise
    """
    rng = np.random.default_rng(cfg.seed)

    low, high = cfg.center_box
    centers = rng.uniform(low, high, size=(cfg.n_centers, cfg.n_features))
    noise = rng.standard_normal((cfg.n_samples, cfg.n_features))

    return FeatureMatrix(centers[blob_labels(cfg)] + cfg.cluster_std * noise)


@dataclass(frozen=True, eq=False)
class PcaProjector:
    """
    Fitted PCA: column means, orthonormal component rows and their covariance eigenvalues
    """
    mean: np.ndarray
    components: np.ndarray
    explained: np.ndarray

    def __post_init__(self):
        gram = self.components @ self.components.T
        if np.max(np.abs(gram - np.eye(gram.shape[0]))) > 1e-8:
            raise InvalidMatrixError("PCA components are not orthonormal")
        if np.any(self.explained < 0) or np.any(np.diff(self.explained) > 0):
            raise InvalidMatrixError("PCA explained variances must be nonnegative and descending")

    @property
    def k(self) -> int:
        return self.components.shape[0]


def fit_pca(X: FeatureMatrix | np.ndarray, k: int) -> PcaProjector:
    """
    Top-k right singular directions of the centered data
    """
    X = as_feature_matrix(X)
    if not 1 <= k <= min(X.rows - 1, X.cols):
        raise InvalidParameterError(f"PCA needs 1 <= k <= min(n - 1, d) = {min(X.rows - 1, X.cols)}, got {k}")

    mean = X.values.mean(axis=0)
    _, singular, vt = svd(X.values - mean, full_matrices=False)
    components = vt[:k]

    # fix the sign ambiguity: largest loading of every component is positive
    pivots = components[np.arange(k), np.argmax(np.abs(components), axis=1)]
    signs = np.where(pivots < 0, -1.0, 1.0)

    return PcaProjector(mean, components * signs[:, None], singular[:k] ** 2 / (X.rows - 1))


def project(p: PcaProjector, X: FeatureMatrix | np.ndarray) -> FeatureMatrix:
    X = as_feature_matrix(X)
    if X.cols != p.mean.size:
        raise ShapeError(f"Projector was fit on {p.mean.size} features, got {X.cols}")
    return FeatureMatrix((X.values - p.mean) @ p.components.T)


def reconstruct(p: PcaProjector, Z: FeatureMatrix | np.ndarray) -> FeatureMatrix:
    """
    Map projected coordinates back into the original feature space
    """
    Z = as_feature_matrix(Z)
    if Z.cols != p.k:
        raise ShapeError(f"Projector has {p.k} components, got {Z.cols} coordinates")
    return FeatureMatrix(Z.values @ p.components + p.mean)


@dataclass(frozen=True, eq=False)
class BlockCovariance:
    """
    Joint covariance of (Z, R) split into its blocks; sigma_rz is m x n
    """
    sigma_r: np.ndarray
    sigma_z: np.ndarray
    sigma_rz: np.ndarray

    def __post_init__(self):
        sigma_r = np.atleast_2d(np.asarray(self.sigma_r, dtype=np.float64))
        sigma_z = np.atleast_2d(np.asarray(self.sigma_z, dtype=np.float64))
        sigma_rz = np.atleast_2d(np.asarray(self.sigma_rz, dtype=np.float64))

        m, n = sigma_r.shape[0], sigma_z.shape[0]
        if sigma_r.shape != (m, m) or sigma_z.shape != (n, n) or sigma_rz.shape != (m, n):
            raise ShapeError(f"Inconsistent block shapes: {sigma_r.shape}, {sigma_z.shape}, {sigma_rz.shape}")

        for name, block in (("sigma_r", sigma_r), ("sigma_z", sigma_z), ("sigma_rz", sigma_rz)):
            if not np.all(np.isfinite(block)):
                raise InvalidMatrixError(f"{name} contains non-finite entries")

        for name, block in (("sigma_r", sigma_r), ("sigma_z", sigma_z)):
            scale = max(1.0, float(np.max(np.abs(block))))
            if np.max(np.abs(block - block.T)) > PSD_TOLERANCE * scale:
                raise InvalidMatrixError(f"{name} is not symmetric")

        object.__setattr__(self, "sigma_r", (sigma_r + sigma_r.T) / 2)
        object.__setattr__(self, "sigma_z", (sigma_z + sigma_z.T) / 2)
        object.__setattr__(self, "sigma_rz", sigma_rz)

        eigenvalues = np.linalg.eigvalsh(self.assembled)
        if eigenvalues[0] < -PSD_TOLERANCE * max(1.0, float(eigenvalues[-1])):
            raise InvalidMatrixError(f"Joint covariance is not positive semi-definite (smallest eigenvalue {eigenvalues[0]:.3e})")

    @property
    def dim_r(self) -> int:
        return self.sigma_r.shape[0]

    @property
    def dim_z(self) -> int:
        return self.sigma_z.shape[0]

    @property
    def sigma_zr(self) -> np.ndarray:
        return self.sigma_rz.T

    @property
    def assembled(self) -> np.ndarray:
        """
        Full (n + m) x (n + m) covariance with Z first
        """
        return np.block([[self.sigma_z, self.sigma_zr], [self.sigma_rz, self.sigma_r]])


def empirical_block_covariance(R: FeatureMatrix | np.ndarray, Z: FeatureMatrix | np.ndarray) -> BlockCovariance:
    """
    Sample covariance (1 / (n - 1)) of the concatenated (Z, R) rows
    """
    R = as_feature_matrix(R)
    Z = as_feature_matrix(Z)

    if R.rows != Z.rows:
        raise ShapeError(f"Row counts differ: R has {R.rows}, Z has {Z.rows}")
    if R.rows < 2:
        raise InvalidInputError("Covariance needs at least two samples")
    if R.rows < R.cols + Z.cols + 1:
        logger.channel("gaussian").warning(f"Only {R.rows} samples for a {R.cols + Z.cols}-dimensional joint covariance, estimate is rank deficient")

    covariance = np.atleast_2d(np.cov(np.hstack([Z.values, R.values]), rowvar=False))
    n = Z.cols

    return BlockCovariance(sigma_r=covariance[n:, n:], sigma_z=covariance[:n, :n], sigma_rz=covariance[n:, :n])


@dataclass(frozen=True)
class LogDetTerms:
    """
    Log-determinants behind every Gaussian closed form, plus the ridge added to each block's diagonal
    """
    logdet_sigma_r: float
    logdet_sigma_z: float
    logdet_var_z_given_r: float
    logdet_var_r_given_z: float
    ridge_r: np.ndarray
    ridge_z: np.ndarray


@dataclass(frozen=True)
class BoundTerms:
    k_term: float
    v_term: float
    d_term: float
    g_const: float

    @property
    def upper_bound(self) -> float:
        """
        Bound on I(Y;R): G - I(R;Z) + H(R)
        """
        return self.g_const + self.k_term + self.v_term + self.d_term


def default_ridge(sigma: np.ndarray) -> np.ndarray:
    """
    RIDGE_SCALE times each diagonal entry, floored for near-constant coordinates

    Rescaling a coordinate rescales its ridge with it, so the closed forms keep their value under
    separate rescaling of R and Z.
    """
    diagonal = np.diag(sigma)
    return RIDGE_SCALE * np.maximum(diagonal, SINGULAR_RELATIVE_FLOOR * float(diagonal.mean()))


def _cholesky(matrix: np.ndarray, name: str):
    try:
        return cho_factor(matrix, lower=True)
    except LinAlgError as e:
        raise SingularModelError(f"{name} is not positive definite") from e


def _cholesky_logdet(factor) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(factor[0]))))


def _schur_complement(sigma_a: np.ndarray, sigma_ab: np.ndarray, factor_b) -> np.ndarray:
    """
    Var(A|B) = Sigma_A - Sigma_AB Sigma_B^-1 Sigma_BA, formed as Sigma_A - W^T W with W = L_B^-1 Sigma_BA
    """
    whitened = solve_triangular(factor_b[0], sigma_ab.T, lower=factor_b[1])
    return sigma_a - whitened.T @ whitened


def _conditional_logdet(conditional: np.ndarray, unconditioned: np.ndarray, name: str) -> float:
    eigenvalues = np.linalg.eigvalsh((conditional + conditional.T) / 2)
    floor = SINGULAR_RELATIVE_FLOOR * float(np.trace(unconditioned))
    if eigenvalues[0] <= floor:
        raise SingularModelError(f"{name} is singular, Z is a deterministic function of R")

    logdet = float(np.sum(np.log(eigenvalues)))
    if logdet < LOG_SINGULAR_FLOOR:
        raise SingularModelError(f"{name} has a vanishing determinant")
    return logdet


def log_determinant_terms(c: BlockCovariance, ridge: float | None = None) -> LogDetTerms:
    """
    ln|Sigma_R|, ln|Sigma_Z| and both Schur-complement conditional log-determinants
    """
    if ridge is None:
        ridge_r, ridge_z = default_ridge(c.sigma_r), default_ridge(c.sigma_z)
    elif ridge < 0:
        raise InvalidParameterError(f"Ridge must be nonnegative, got {ridge}")
    else:
        ridge_r, ridge_z = np.full(c.dim_r, float(ridge)), np.full(c.dim_z, float(ridge))

    sigma_r = c.sigma_r + np.diag(ridge_r)
    sigma_z = c.sigma_z + np.diag(ridge_z)
    factor_r = _cholesky(sigma_r, "Sigma_R")
    factor_z = _cholesky(sigma_z, "Sigma_Z")

    var_z_given_r = _schur_complement(sigma_z, c.sigma_zr, factor_r)
    var_r_given_z = _schur_complement(sigma_r, c.sigma_rz, factor_z)

    return LogDetTerms(logdet_sigma_r=_cholesky_logdet(factor_r), logdet_sigma_z=_cholesky_logdet(factor_z),
                       logdet_var_z_given_r=_conditional_logdet(var_z_given_r, sigma_z, "Var(Z|R)"),
                       logdet_var_r_given_z=_conditional_logdet(var_r_given_z, sigma_r, "Var(R|Z)"), ridge_r=ridge_r, ridge_z=ridge_z)


def _mutual_info_from_terms(terms: LogDetTerms) -> float:
    via_z = 0.5 * (terms.logdet_sigma_z - terms.logdet_var_z_given_r)
    via_r = 0.5 * (terms.logdet_sigma_r - terms.logdet_var_r_given_z)

    if not math.isclose(via_z, via_r, rel_tol=SCHUR_FAILURE_RTOL, abs_tol=SCHUR_AGREEMENT_ATOL):
        raise SingularModelError(f"Schur complement forms disagree ({via_z} vs {via_r}), covariance is too ill-conditioned")
    if not math.isclose(via_z, via_r, rel_tol=SCHUR_AGREEMENT_RTOL, abs_tol=SCHUR_AGREEMENT_ATOL):
        logger.channel("gaussian").warning(f"Schur complement forms differ beyond {SCHUR_AGREEMENT_RTOL:g}: {via_z} vs {via_r}")

    return (via_z + via_r) / 2


def gaussian_mutual_info(c: BlockCovariance, ridge: float | None = None) -> float:
    """
    Closed-form I(R;Z) of jointly Gaussian R and Z, averaged over both Schur complement forms

    Without an explicit ridge every diagonal entry of Sigma_R and Sigma_Z is raised by 1e-9 of itself, so the
    value does not move when R or Z is rescaled. An explicit ridge is added to both blocks as ridge * I.
    """
    return _mutual_info_from_terms(log_determinant_terms(c, ridge))


def gaussian_entropy(sigma_r: np.ndarray, ridge: float | None = None) -> float:
    """
    Differential entropy (m/2) ln(2 pi) + (1/2) ln|Sigma_R| + m/2 of an m-dimensional Gaussian
    """
    sigma_r = np.atleast_2d(np.asarray(sigma_r, dtype=np.float64))
    if sigma_r.ndim != 2 or sigma_r.shape[0] != sigma_r.shape[1]:
        raise ShapeError(f"Covariance must be square, got shape {sigma_r.shape}")

    ridge = ENTROPY_RIDGE if ridge is None else ridge
    m = sigma_r.shape[0]
    logdet = _cholesky_logdet(_cholesky(sigma_r + ridge * np.eye(m), "Sigma_R"))

    return 0.5 * m * math.log(2 * math.pi) + 0.5 * logdet + 0.5 * m


def _bound_from_terms(terms: LogDetTerms, dim_r: int, g_const: float) -> BoundTerms:
    return BoundTerms(k_term=0.5 * (terms.logdet_sigma_r - terms.logdet_sigma_z), v_term=0.5 * terms.logdet_var_z_given_r,
                      d_term=0.5 * dim_r * (math.log(2 * math.pi) + 1), g_const=g_const)


def bound_decomposition(c: BlockCovariance, g_const: float = 0.0, ridge: float | None = None) -> BoundTerms:
    """
    Split H(R) - I(R;Z) into variance differential (K), conditional variance (V) and dimension (D) terms
    """
    terms = log_determinant_terms(c, ridge)

    # run the Schur consistency check even though only the Z form is used
    _mutual_info_from_terms(terms)

    return _bound_from_terms(terms, c.dim_r, g_const)


@dataclass(frozen=True)
class SweepSample:
    param: float
    repeat: int
    seed: int
    mi: float
    entropy_r: float
    effective_rank_r: float
    terms: LogDetTerms
    bound: BoundTerms


@dataclass(frozen=True)
class SweepPoint:
    param: float
    mi_mean: float
    mi_std: float


@dataclass(frozen=True)
class SweepResult:
    samples: list[SweepSample]
    points: list[SweepPoint]

    def curve(self) -> list[tuple[float, float, float]]:
        return [(point.param, point.mi_mean, point.mi_std) for point in self.points]


def evaluate_projection(cfg: BlobConfig, pca_k: int, param: float = 0.0, repeat: int = 0) -> SweepSample:
    """
    One simulation: blobs as R, PCA projection as Z, closed-form quantities of the pair
    """
    R = generate_blobs(cfg)
    Z = project(fit_pca(R, pca_k), R)
    c = empirical_block_covariance(R, Z)
    terms = log_determinant_terms(c)

    return SweepSample(param=param, repeat=repeat, seed=cfg.seed, mi=_mutual_info_from_terms(terms), entropy_r=gaussian_entropy(c.sigma_r),
                       effective_rank_r=effective_rank(compute_spectrum(R, "covariance")), terms=terms,
                       bound=_bound_from_terms(terms, c.dim_r, 0.0))


def _run_sweep(label: str, settings: list[tuple[float, BlobConfig]], pca_k: int, repeats: int, workers: int) -> SweepResult:
    if repeats < 1:
        raise InvalidParameterError(f"Sweeps need at least one repeat, got {repeats}")
    if workers < 1:
        raise InvalidParameterError(f"Sweeps need at least one worker, got {workers}")

    logger.channel("sweep").info(f"Sweeping {label} over {len(settings)} values x {repeats} repeats ({workers} workers)")
    before = datetime.datetime.now()

    # seeds depend only on the repeat index so every parameter value sees the same draws
    jobs = [(param, repeat, cfg.model_copy(update={"seed": utils.derive_seed(cfg.seed, repeat)})) for param, cfg in settings for repeat in range(repeats)]

    def run_job(job: tuple[float, int, BlobConfig]) -> SweepSample:
        param, repeat, cfg = job
        return evaluate_projection(cfg, pca_k, param, repeat)

    if workers > 1:
        # map keeps job order, so the merge is independent of completion order
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(run_job, jobs))
    else:
        samples = [run_job(job) for job in jobs]

    # jobs run setting by setting, so each setting owns one contiguous slice of samples
    points = []
    for index, (param, _) in enumerate(settings):
        values = np.array([sample.mi for sample in samples[index * repeats:(index + 1) * repeats]])
        points.append(SweepPoint(param=param, mi_mean=float(values.mean()), mi_std=float(values.std(ddof=1)) if values.size > 1 else 0.0))

    delta = datetime.datetime.now() - before
    logger.channel("sweep").info(f"Sweep over {label} complete ({delta})")

    return SweepResult(samples=samples, points=points)


def sweep_features(base: BlobConfig, feature_counts: Sequence[int], pca_k: int, repeats: int, workers: int = 1) -> SweepResult:
    """
    I(R;Z) as the number of features in R grows at fixed cluster_std
    """
    if not feature_counts:
        raise InvalidParameterError("feature_counts must not be empty")
    for count in feature_counts:
        if count < pca_k + 1:
            raise InvalidParameterError(f"Every feature count must be at least pca_k + 1 = {pca_k + 1}, got {count}")

    settings = [(float(count), base.model_copy(update={"n_features": int(count)})) for count in feature_counts]
    return _run_sweep("feature count", settings, pca_k, repeats, workers)


def sweep_variance(base: BlobConfig, stds: Sequence[float], pca_k: int, repeats: int, workers: int = 1) -> SweepResult:
    """
    I(R;Z) as cluster_std grows at fixed feature count
    """
    if not stds:
        raise InvalidParameterError("stds must not be empty")
    for std in stds:
        if std <= 0:
            raise InvalidParameterError(f"Every cluster_std must be positive, got {std}")

    settings = [(float(std), base.model_copy(update={"cluster_std": float(std)})) for std in stds]
    return _run_sweep("cluster_std", settings, pca_k, repeats, workers)

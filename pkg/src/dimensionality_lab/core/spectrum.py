import math
from dataclasses import InitVar, dataclass
from functools import cached_property
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import svdvals
from scipy.spatial.distance import pdist
from scipy.special import entr, logsumexp

from dimensionality_lab.core import utils
from dimensionality_lab.core.config import (ZERO_EIGENVALUE_TOL, EIGEN_CLAMP_RELATIVE, PSD_TOLERANCE, SYMMETRY_TOLERANCE, UNIT_DIAGONAL_TOLERANCE,
                                            L1_SUM_TOLERANCE)
from dimensionality_lab.core.errors import InvalidInputError, ShapeError, InvalidParameterError, DegenerateSpectrumError, InvalidMatrixError

Normalization = Literal["raw", "l1"]
SpectrumMode = Literal["covariance", "singular"]


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """
    Helper class holding n samples by d features of finite reals (R, Z and their augmented views)
    """
    values: np.ndarray
    columns: tuple[str, ...] | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)

        if values.ndim != 2:
            raise ShapeError(f"Feature matrix must be 2-dimensional, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise InvalidInputError(f"Feature matrix needs at least one row and one column, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("Feature matrix contains non-finite entries")
        if self.columns is not None and len(self.columns) != values.shape[1]:
            raise ShapeError(f"Got {len(self.columns)} column names for {values.shape[1]} columns")

        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.columns is not None:
            object.__setattr__(self, "columns", tuple(str(c) for c in self.columns))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_csv(cls, path: str | Path) -> "FeatureMatrix":
        """
        Load a matrix from a CSV file with a header row of column names and one sample per line
        """
        try:
            frame = pd.read_csv(path)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise InvalidInputError(f"Cannot read feature matrix from '{path}': {e}") from e

        try:
            values = frame.to_numpy(dtype=np.float64)
        except ValueError as e:
            raise InvalidInputError(f"Feature matrix '{path}' contains non-numeric entries") from e

        return cls(values, tuple(frame.columns))

    def to_csv(self, path: str | Path):
        columns = self.columns or tuple(f"x{i}" for i in range(self.cols))
        utils.write_csv(path, pd.DataFrame(self.values, columns=list(columns)))


def as_feature_matrix(X: "FeatureMatrix | np.ndarray | Sequence") -> FeatureMatrix:
    """
    Helper to accept raw arrays wherever a FeatureMatrix is expected
    """
    return X if isinstance(X, FeatureMatrix) else FeatureMatrix(X)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """
    Descending nonnegative eigen/singular values with a normalization tag
    """
    values: np.ndarray
    normalization: Normalization = "raw"

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)

        if values.ndim != 1 or values.size == 0:
            raise InvalidInputError(f"Spectrum must be a non-empty vector, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("Spectrum contains non-finite values")
        if np.any(values < 0):
            raise InvalidInputError("Spectrum contains negative values")
        if np.any(np.diff(values) > 0):
            raise InvalidInputError("Spectrum values must be sorted in descending order")
        if self.normalization not in ("raw", "l1"):
            raise InvalidParameterError(f"Unknown spectrum normalization: {self.normalization}")
        if self.normalization == "l1" and abs(values.sum() - 1.0) > L1_SUM_TOLERANCE:
            raise InvalidInputError(f"l1 spectrum sums to {values.sum()}, not 1")

        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, values: Sequence[float] | np.ndarray) -> "Spectrum":
        """
        Build a raw spectrum from values in any order
        """
        return cls(np.sort(np.asarray(values, dtype=np.float64).ravel())[::-1])

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def normalized(self) -> "Spectrum":
        """
        Return the l1-normalized spectrum (a probability vector)
        """
        if self.normalization == "l1":
            return self

        total = self.total
        if total <= 0:
            raise DegenerateSpectrumError("Spectrum has no positive values")

        normalized = self.values / total

        # absorb rounding so the l1 invariant holds exactly enough
        return Spectrum(normalized / normalized.sum(), "l1")


def as_spectrum(s: "Spectrum | Sequence[float] | np.ndarray") -> Spectrum:
    return s if isinstance(s, Spectrum) else Spectrum.from_values(s)


def _clamp_small(values: np.ndarray) -> np.ndarray:
    """
    Zero out values whose magnitude is negligible next to the largest one
    """
    largest = float(np.max(np.abs(values))) if values.size else 0.0
    return np.where(np.abs(values) < EIGEN_CLAMP_RELATIVE * largest, 0.0, values)


def compute_spectrum(X: FeatureMatrix | np.ndarray, mode: SpectrumMode = "covariance", center: bool = True) -> Spectrum:
    """
    Singular values of the centered matrix, or eigenvalues of its sample covariance

    With center=False the raw singular values (or second-moment eigenvalues) are returned instead.
    """
    X = as_feature_matrix(X)
    if mode not in ("covariance", "singular"):
        raise InvalidParameterError(f"Unknown spectrum mode: {mode}")

    data = X.values - X.values.mean(axis=0) if center else X.values
    singular = svdvals(data)

    if mode == "singular":
        values = singular
    else:
        if X.rows < 2:
            raise InvalidInputError("Covariance spectrum needs at least two samples")

        # covariance has d eigenvalues, the thin SVD only min(n, d)
        values = np.zeros(X.cols)
        values[:singular.size] = singular ** 2 / (X.rows - 1)

    values = np.clip(_clamp_small(values), 0.0, None)
    return Spectrum(np.sort(values)[::-1])


def von_neumann_entropy(s: Spectrum | Sequence[float]) -> float:
    """
    Shannon entropy (natural log) of the l1-normalized spectrum
    """
    p = as_spectrum(s).normalized().values
    p = p[p > ZERO_EIGENVALUE_TOL]
    return float(np.sum(entr(p)))


def effective_rank(s: Spectrum | Sequence[float]) -> float:
    """
    Exponential of the spectrum entropy, a continuous stand-in for matrix rank
    """
    return math.exp(von_neumann_entropy(s))


def cumulative_explained_variance(s: Spectrum | Sequence[float], p: float) -> float:
    """
    Share of the total mass held by the top ceil(p * N) values
    """
    if not 0 < p <= 1:
        raise InvalidParameterError(f"Fraction p must be in (0, 1], got {p}")

    spectrum = as_spectrum(s)
    total = spectrum.total
    if total <= 0:
        raise DegenerateSpectrumError("Spectrum has no positive values")

    count = spectrum.values.size
    # round first so 0.3 * 10 does not become 4 values
    top = max(1, math.ceil(round(p * count, 9)))
    return float(spectrum.values[:top].sum() / total)


def explained_variance_curve(s: Spectrum | Sequence[float], ps: Sequence[float]) -> np.ndarray:
    spectrum = as_spectrum(s)
    return np.array([cumulative_explained_variance(spectrum, p) for p in ps])


def count_above_threshold(s: Spectrum | Sequence[float], tau: float = 0.01) -> int:
    """
    Number of l1-normalized values strictly above tau
    """
    if tau <= 0:
        raise InvalidParameterError(f"Threshold tau must be positive, got {tau}")

    return int(np.count_nonzero(as_spectrum(s).normalized().values > tau))


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """
    Symmetric unit-diagonal PSD n x n matrix used by the matrix-based Renyi estimators

    Pass validate=False only for matrices that are PSD by construction; symmetry and
    the unit diagonal are always checked.
    """
    values: np.ndarray
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool):
        values = np.array(self.values, dtype=np.float64)

        if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] < 1:
            raise ShapeError(f"Gram matrix must be square and non-empty, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidMatrixError("Gram matrix contains non-finite entries")
        if np.max(np.abs(values - values.T)) > SYMMETRY_TOLERANCE:
            raise InvalidMatrixError("Gram matrix is not symmetric")
        if np.max(np.abs(np.diag(values) - 1.0)) > UNIT_DIAGONAL_TOLERANCE:
            raise InvalidMatrixError("Gram matrix diagonal is not all ones")

        values.setflags(write=False)
        object.__setattr__(self, "values", values)

        if validate and self.eigenvalues[-1] < -PSD_TOLERANCE:
            raise InvalidMatrixError(f"Gram matrix is not positive semi-definite (smallest eigenvalue {self.eigenvalues[-1]:.3e})")

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """
        Descending eigenvalues with numerical noise clamped to zero
        """
        eigenvalues = np.linalg.eigvalsh((self.values + self.values.T) / 2)[::-1]
        eigenvalues = _clamp_small(eigenvalues)
        eigenvalues.setflags(write=False)
        return eigenvalues

    @classmethod
    def from_features(cls, X: FeatureMatrix | np.ndarray) -> "GramMatrix":
        """
        Gram matrix of the l2-normalized rows of X, no centering
        """
        unit = _unit_rows(as_feature_matrix(X))
        gram = unit @ unit.T
        gram = (gram + gram.T) / 2
        np.fill_diagonal(gram, 1.0)
        return cls(gram, validate=False)

    def hadamard(self, other: "GramMatrix") -> "GramMatrix":
        """
        Elementwise product, again unit-diagonal PSD by the Schur product theorem
        """
        if other.size != self.size:
            raise ShapeError(f"Cannot multiply Gram matrices of sizes {self.size} and {other.size}")
        return GramMatrix(self.values * other.values, validate=False)


def as_gram(A: GramMatrix | np.ndarray) -> GramMatrix:
    return A if isinstance(A, GramMatrix) else GramMatrix(A)


def renyi_matrix_entropy(A: GramMatrix | np.ndarray, alpha: float = 2.0) -> float:
    """
    Matrix-based alpha-Renyi entropy (1 / (1 - alpha)) * ln tr((A / n)^alpha)
    """
    if not alpha > 0 or alpha == 1:
        raise InvalidParameterError(f"Renyi order alpha must be positive and not 1, got {alpha}")

    A = as_gram(A)
    n = A.size

    if alpha == 2:
        # tr(A^2) is the squared Frobenius norm for symmetric A
        power_trace = float(np.sum(np.square(A.values))) / n ** 2
    else:
        eigenvalues = np.clip(A.eigenvalues, 0.0, None) / n
        power_trace = float(np.sum(eigenvalues ** alpha))

    return math.log(power_trace) / (1 - alpha)


def matrix_mutual_information(X: FeatureMatrix | np.ndarray, Y: FeatureMatrix | np.ndarray, alpha: float = 2.0) -> float:
    """
    H(A) + H(B) - H(A * B) over the row-normalized Gram matrices of X and Y
    """
    X = as_feature_matrix(X)
    Y = as_feature_matrix(Y)

    if X.rows != Y.rows:
        raise ShapeError(f"Row counts differ: {X.rows} vs {Y.rows}")
    if X.rows < 2:
        raise InvalidInputError("Matrix mutual information needs at least two samples")

    A = GramMatrix.from_features(X)
    B = GramMatrix.from_features(Y)

    return renyi_matrix_entropy(A, alpha) + renyi_matrix_entropy(B, alpha) - renyi_matrix_entropy(A.hadamard(B), alpha)


def matrix_entropy_me(A: GramMatrix | np.ndarray) -> float:
    """
    -tr(A ln A) + tr(A) evaluated on the eigenvalues of A
    """
    eigenvalues = np.clip(as_gram(A).eigenvalues, 0.0, None)
    entropy_terms = eigenvalues[eigenvalues > ZERO_EIGENVALUE_TOL]
    return float(np.sum(entr(entropy_terms)) + np.sum(eigenvalues))


def _unit_rows(X: FeatureMatrix) -> np.ndarray:
    norms = np.linalg.norm(X.values, axis=1)
    if np.any(norms == 0):
        raise InvalidInputError("Cannot project a zero-norm row onto the unit sphere")
    return X.values / norms[:, None]


def uniformity(X: FeatureMatrix | np.ndarray, t: float = 2.0) -> float:
    """
    Log of the mean Gaussian potential exp(-t * |xi - xj|^2) over distinct pairs of unit rows
    """
    X = as_feature_matrix(X)
    if X.rows < 2:
        raise InvalidInputError("Uniformity needs at least two samples")

    squared_distances = pdist(_unit_rows(X), "sqeuclidean")
    return float(logsumexp(-t * squared_distances) - math.log(squared_distances.size))


def alignment(X: FeatureMatrix | np.ndarray, Y: FeatureMatrix | np.ndarray, power: float = 2.0) -> float:
    """
    Mean distance^power between paired unit rows of two views
    """
    X = as_feature_matrix(X)
    Y = as_feature_matrix(Y)
    if X.values.shape != Y.values.shape:
        raise ShapeError(f"Alignment needs equal shapes, got {X.values.shape} and {Y.values.shape}")

    distances = np.linalg.norm(_unit_rows(X) - _unit_rows(Y), axis=1)
    return float(np.mean(distances ** power))

from typing import TYPE_CHECKING, Callable, Literal

import numpy as np

from dimensionality_lab.core import logger, utils
from dimensionality_lab.core.errors import InvalidParameterError
from dimensionality_lab.core.spectrum import (FeatureMatrix, GramMatrix, Spectrum, alignment, compute_spectrum, count_above_threshold,
                                              cumulative_explained_variance, effective_rank, matrix_entropy_me, matrix_mutual_information,
                                              renyi_matrix_entropy, uniformity, von_neumann_entropy)
from dimensionality_lab.core.utils import ArtifactWriter

if TYPE_CHECKING:
    from dimensionality_lab.core.experiment import MetricsExperiment

MetricName = Literal["er", "vne", "renyi", "mi", "cev", "count", "uniformity", "me", "alignment"]

# metrics comparing two matrices
PAIRED_METRICS = ("mi", "alignment")


def spectrum_frame(spectrum: Spectrum):
    """
    Sorted spectrum with its l1-normalized values and their running sum
    """
    total = spectrum.total
    normalized = spectrum.values / total if total > 0 else np.zeros_like(spectrum.values)
    rows = [{"index": i, "value": value, "normalized": share, "cumulative": cumulative}
            for i, (value, share, cumulative) in enumerate(zip(spectrum.values, normalized, np.cumsum(normalized)))]
    return utils.records_frame(rows, ["index", "value", "normalized", "cumulative"])


def evaluate_metrics(cfg: "MetricsExperiment", X: FeatureMatrix, Y: FeatureMatrix | None) -> list[tuple[str, float]]:
    """
    Evaluate the configured metrics in order on X (and Y for the paired ones)
    """
    spectrum = compute_spectrum(X, cfg.mode, cfg.center)

    def paired(fn: Callable[[FeatureMatrix, FeatureMatrix], float]) -> Callable[[], float]:
        def evaluate() -> float:
            if Y is None:
                raise InvalidParameterError("Paired metrics need a second input matrix")
            return fn(X, Y)
        return evaluate

    metrics: dict[str, Callable[[], float]] = {
        "er": lambda: effective_rank(spectrum),
        "vne": lambda: von_neumann_entropy(spectrum),
        "renyi": lambda: renyi_matrix_entropy(GramMatrix.from_features(X), cfg.renyi_alpha),
        "mi": paired(lambda a, b: matrix_mutual_information(a, b, cfg.renyi_alpha)),
        "cev": lambda: cumulative_explained_variance(spectrum, cfg.cev_p),
        "count": lambda: float(count_above_threshold(spectrum, cfg.count_tau)),
        "uniformity": lambda: uniformity(X, cfg.uniformity_t),
        "me": lambda: matrix_entropy_me(GramMatrix.from_features(X)),
        "alignment": paired(alignment),
    }

    return [(name, metrics[name]()) for name in cfg.metrics]


def run_metrics(cfg: "MetricsExperiment", writer: ArtifactWriter):
    """
    Evaluate spectrum metrics on a CSV feature matrix
    """
    X = FeatureMatrix.from_csv(cfg.inputs[0])
    Y = FeatureMatrix.from_csv(cfg.inputs[1]) if len(cfg.inputs) > 1 else None
    logger.channel("metrics").info(f"Evaluating {', '.join(cfg.metrics)} on {X.rows}x{X.cols} matrix from {cfg.inputs[0]}")

    values = evaluate_metrics(cfg, X, Y)
    writer.write_frame("metrics.csv", utils.records_frame([{"metric": name, "value": value} for name, value in values], ["metric", "value"]))
    writer.write_frame("spectrum.csv", spectrum_frame(compute_spectrum(X, cfg.mode, cfg.center)))

    for name, value in values:
        logger.channel("metrics").info(f"{name} = {value:.6g}")

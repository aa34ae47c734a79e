from typing import TYPE_CHECKING

from dimensionality_lab.core import logger, utils
from dimensionality_lab.core.gaussian import SweepResult, sweep_features, sweep_variance
from dimensionality_lab.core.utils import ArtifactWriter

if TYPE_CHECKING:
    from dimensionality_lab.core.experiment import SweepFeaturesExperiment, SweepVarianceExperiment

SAMPLE_COLUMNS = ["param", "repeat", "seed", "mi", "entropy_r", "effective_rank_r"]
AGGREGATE_COLUMNS = ["param", "mi_mean", "mi_std"]
TERM_COLUMNS = ["param", "repeat", "logdet_sigma_r", "logdet_sigma_z", "logdet_var_z_given_r", "k_term", "v_term", "d_term"]


def write_sweep(result: SweepResult, writer: ArtifactWriter):
    """
    Write per-repeat samples, the aggregated curve and the bound terms of a sweep
    """
    samples = [{"param": s.param, "repeat": s.repeat, "seed": s.seed, "mi": s.mi, "entropy_r": s.entropy_r, "effective_rank_r": s.effective_rank_r}
               for s in result.samples]
    writer.write_frame("sweep.csv", utils.records_frame(samples, SAMPLE_COLUMNS))

    points = [{"param": p.param, "mi_mean": p.mi_mean, "mi_std": p.mi_std} for p in result.points]
    writer.write_frame("sweep_aggregate.csv", utils.records_frame(points, AGGREGATE_COLUMNS))

    terms = [{"param": s.param, "repeat": s.repeat, "logdet_sigma_r": s.terms.logdet_sigma_r, "logdet_sigma_z": s.terms.logdet_sigma_z,
              "logdet_var_z_given_r": s.terms.logdet_var_z_given_r, "k_term": s.bound.k_term, "v_term": s.bound.v_term, "d_term": s.bound.d_term}
             for s in result.samples]
    writer.write_frame("sweep_terms.csv", utils.records_frame(terms, TERM_COLUMNS))

    for point in result.points:
        logger.channel("sweep").info(f"param {point.param:g}: I(R;Z) = {point.mi_mean:.4f} +/- {point.mi_std:.4f}")


def run_sweep_features(cfg: "SweepFeaturesExperiment", writer: ArtifactWriter):
    result = sweep_features(cfg.blobs, cfg.feature_counts, cfg.pca_k, cfg.repeats, cfg.workers)
    write_sweep(result, writer)


def run_sweep_variance(cfg: "SweepVarianceExperiment", writer: ArtifactWriter):
    result = sweep_variance(cfg.blobs, cfg.stds, cfg.pca_k, cfg.repeats, cfg.workers)
    write_sweep(result, writer)

from typing import TYPE_CHECKING

from dimensionality_lab.core import logger, utils
from dimensionality_lab.core.mlp import save_checkpoint
from dimensionality_lab.core.toyssl import TRAJECTORY_COLUMNS, load_training_data, train
from dimensionality_lab.core.utils import ArtifactWriter

if TYPE_CHECKING:
    from dimensionality_lab.core.experiment import TrainToyExperiment


def run_train_toy(cfg: "TrainToyExperiment", writer: ArtifactWriter):
    """
    Train the toy network and write its trajectory, alpha schedule, labels and final weights
    """
    data, labels = load_training_data(cfg.train)
    result = train(cfg.train, data)

    writer.write_frame("trajectory.csv", utils.records_frame([record.row() for record in result.trajectory], TRAJECTORY_COLUMNS))
    writer.write_frame("alpha.csv", utils.records_frame([{"epoch": epoch, "alpha": alpha} for epoch, alpha in result.alpha_history], ["epoch", "alpha"]))

    if cfg.train.closed_form_mi:
        rows = [{"epoch": record.epoch, "mi_xz_gaussian": record.mi_xz_gaussian} for record in result.trajectory]
        writer.write_frame("gaussian_mi.csv", utils.records_frame(rows, ["epoch", "mi_xz_gaussian"]))

    # cluster labels let external tools probe the representation
    if labels is not None:
        writer.write_frame("labels.csv", utils.records_frame([{"index": i, "label": int(label)} for i, label in enumerate(labels)], ["index", "label"]))

    if cfg.save_checkpoint:
        path = writer.write_with("model.bin", lambda target: save_checkpoint(result.model, target))
        logger.channel("train").info(f"Saved final model ({utils.format_bytes(path.stat().st_size)})")

    if result.trajectory:
        last = result.trajectory[-1]
        logger.channel("train").info(f"Final epoch {last.epoch}: loss {last.loss_total:.4f}, er_r {last.er_r:.3f}, I(R;Z) {last.mi_rz:.4f}")

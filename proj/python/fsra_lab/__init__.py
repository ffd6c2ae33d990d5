"""FSRA cross-view geo-localization lab."""

from ._core import (
    ConfigError,
    TrainingHalted,
    black_pad,
    cross_view_triplet,
    epoch_image_count,
    evaluate,
    evaluate_distances,
    flip_pad,
    heat_map,
    id_loss,
    kl_mutual,
    partition,
    read_image,
    region_sizes,
    synth_data,
    train,
)

__all__ = [
    "ConfigError",
    "TrainingHalted",
    "black_pad",
    "cross_view_triplet",
    "epoch_image_count",
    "evaluate",
    "evaluate_distances",
    "flip_pad",
    "heat_map",
    "id_loss",
    "kl_mutual",
    "partition",
    "read_image",
    "region_sizes",
    "synth_data",
    "train",
]

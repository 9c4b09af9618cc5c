from ._flora import (
    ModelHandle,
    architecture_names,
    build_descriptor,
    count_parameters,
    macro_metrics,
    optimizer_names,
    synth_images,
    train_synth,
)

__all__ = [
    "ModelHandle",
    "architecture_names",
    "build_descriptor",
    "count_parameters",
    "macro_metrics",
    "optimizer_names",
    "synth_images",
    "train_synth",
]

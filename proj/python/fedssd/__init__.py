"""Python bindings for the fedssd federated-training library."""

from ._fedssd import (
    Dataset,
    FedssdError,
    Model,
    aggregate,
    batch_weights,
    class_weights,
    credibility_matrix,
    derive_seed,
    evaluate,
    generate_synthetic,
    kl_loss,
    load_idx,
    mse_loss,
    partition_dirichlet,
    partition_quantity,
    preset_names,
    preset_text,
    rounds_to_target,
    run_experiment,
    run_federation,
    sample_auxiliary,
    sample_weight,
    ssd_loss,
    weight_vector,
)

__all__ = [
    "Dataset",
    "FedssdError",
    "Model",
    "aggregate",
    "batch_weights",
    "class_weights",
    "credibility_matrix",
    "derive_seed",
    "evaluate",
    "generate_synthetic",
    "kl_loss",
    "load_idx",
    "mse_loss",
    "partition_dirichlet",
    "partition_quantity",
    "preset_names",
    "preset_text",
    "rounds_to_target",
    "run_experiment",
    "run_federation",
    "sample_auxiliary",
    "sample_weight",
    "ssd_loss",
    "weight_vector",
]

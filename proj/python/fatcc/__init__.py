"""Federated adversarial training with logit calibration and prototype contrast."""

from ._core import (
    ConfigError,
    DomainError,
    FormatError,
    Model,
    ShapeError,
    aggregate_global,
    bim,
    calibrated_ce,
    compare_report,
    contrastive_loss,
    cross_entropy,
    dirichlet_partition,
    fedavg,
    fgsm,
    init_mlp,
    local_prototypes,
    modulating_weights,
    pgd,
    run_experiment,
    synth_gaussian,
    taylor_ratio,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "FormatError",
    "Model",
    "ShapeError",
    "aggregate_global",
    "bim",
    "calibrated_ce",
    "compare_report",
    "contrastive_loss",
    "cross_entropy",
    "dirichlet_partition",
    "fedavg",
    "fgsm",
    "init_mlp",
    "local_prototypes",
    "modulating_weights",
    "pgd",
    "run_experiment",
    "synth_gaussian",
    "taylor_ratio",
]

"""Python bindings for the swiden C++ library."""

from ._swiden import (
    ConfigError,
    DataError,
    Error,
    InputError,
    ShapeError,
    Rng,
    PlateauScheduler,
    derive_seed,
    five_crop_offsets,
    gen_synthetic,
    grl_backward,
    gradcheck,
    pool_five_crop_predictions,
    run_experiment,
    train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "InputError",
    "ShapeError",
    "Rng",
    "PlateauScheduler",
    "derive_seed",
    "five_crop_offsets",
    "gen_synthetic",
    "grl_backward",
    "gradcheck",
    "pool_five_crop_predictions",
    "run_experiment",
    "train",
]

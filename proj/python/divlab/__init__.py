"""Task2Vec diversity-coefficient laboratory (Python surface).

The heavy lifting lives in the compiled `_divlab` extension; this package
re-exports its public names. Pipeline orchestration (configs, checkpoints,
reports) stays on the `divlab` CLI.
"""

from ._divlab import (
    ConfigError,
    DatasetHandle,
    DiversityConfig,
    DiversityEstimate,
    LinearFit,
    NumericError,
    ProbeNetwork,
    ProbeTrainConfig,
    SyntheticSpec,
    default_config_json,
    derive_seed,
    diversity_coefficient,
    fit_linear_r2,
    generate_synthetic,
    load_dataset,
    pretrain_probe,
)

__all__ = [
    "ConfigError",
    "DatasetHandle",
    "DiversityConfig",
    "DiversityEstimate",
    "LinearFit",
    "NumericError",
    "ProbeNetwork",
    "ProbeTrainConfig",
    "SyntheticSpec",
    "default_config_json",
    "derive_seed",
    "diversity_coefficient",
    "fit_linear_r2",
    "generate_synthetic",
    "load_dataset",
    "pretrain_probe",
]

__version__ = "0.1.0"

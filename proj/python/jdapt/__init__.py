from ._jdapt import (
    CoralMap,
    Error,
    Model,
    ValidationError,
    evaluate,
    fit_coral,
    gradcheck,
    load_records,
    run_pipeline,
    sample_covariance,
    synth,
)

__all__ = [
    "CoralMap",
    "Error",
    "Model",
    "ValidationError",
    "evaluate",
    "fit_coral",
    "gradcheck",
    "load_records",
    "run_pipeline",
    "sample_covariance",
    "synth",
]

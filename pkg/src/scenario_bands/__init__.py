"""Scenario-based interval prediction for day-ahead price series.

A conditional Wasserstein GAN is trained with randomized noise scales so
that, at inference, the noise scale sigma acts as a knob: larger sigma
spreads the generated scenarios, widening the interval band and raising
coverage. Coverage and width are evaluated both per evaluation point
(ECP/EAW) and per simulation (ECPAS/EAWAPI), with confidence-level bounds
over repeated simulations.
"""

__version__ = "0.1.0"

from .data import (
    CsvFormatError,
    PriceSeries,
    SampleSet,
    Scaler,
    SynthConfig,
    day_condition,
    fit_normalize,
    load_csv,
    make_windows,
    synth_prices,
    write_csv,
)
from .gan import (
    CheckpointFormatError,
    CheckpointVersionError,
    GanHyper,
    ModelCheckpoint,
    TrainingDiverged,
    TrainingTrace,
    critic_forward,
    generator_forward,
    load_checkpoint,
    sample_training_noise,
    save_checkpoint,
    train,
    wgan_losses,
)
from .harness import (
    DEFAULT_CL_GRID,
    DEFAULT_SIGMA_GRID,
    ExperimentConfig,
    RunManifest,
    derive_seed,
    prepare_datasets,
    run_experiment,
)
from .intervals import (
    IntervalSeries,
    ScenarioSet,
    build_interval,
    generate_scenarios,
    predict_day,
)
from .metrics import (
    CoverageMatrix,
    FallacyReport,
    MetricsReport,
    compute_report,
    confidence_stat,
    coverage_matrix,
    eaw_per_sample,
    eawapi_per_repeat,
    ecp_per_sample,
    ecpas_per_repeat,
    fallacy_report,
    fallacy_report_from_stats,
)
from .numerics import (
    AdamState,
    MlpParams,
    adam_step,
    grad_check,
    init_mlp,
    make_rng,
    mlp_backward,
    mlp_forward,
    nearest_rank,
    nearest_rank_quantile,
    sample_gaussian,
)

__all__ = [
    "__version__",
    "AdamState", "MlpParams", "adam_step", "grad_check", "init_mlp", "make_rng",
    "mlp_backward", "mlp_forward", "nearest_rank", "nearest_rank_quantile",
    "sample_gaussian",
    "CsvFormatError", "PriceSeries", "SampleSet", "Scaler", "SynthConfig",
    "day_condition", "fit_normalize", "load_csv", "make_windows", "synth_prices",
    "write_csv",
    "CheckpointFormatError", "CheckpointVersionError", "GanHyper", "ModelCheckpoint",
    "TrainingDiverged", "TrainingTrace", "critic_forward", "generator_forward",
    "load_checkpoint", "sample_training_noise", "save_checkpoint", "train",
    "wgan_losses",
    "IntervalSeries", "ScenarioSet", "build_interval", "generate_scenarios",
    "predict_day",
    "CoverageMatrix", "FallacyReport", "MetricsReport", "compute_report",
    "confidence_stat", "coverage_matrix", "eaw_per_sample", "eawapi_per_repeat",
    "ecp_per_sample", "ecpas_per_repeat", "fallacy_report", "fallacy_report_from_stats",
    "DEFAULT_CL_GRID", "DEFAULT_SIGMA_GRID", "ExperimentConfig", "RunManifest",
    "derive_seed", "prepare_datasets", "run_experiment",
]

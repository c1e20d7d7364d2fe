//! Experiment orchestration: configuration files, the pilot and adaptation
//! sweeps, evaluation metrics, CSV curves and the gradient self-check.

pub mod config;
pub mod curve;
pub mod experiments;
pub mod gradcheck;

pub use config::{load_config, DemodFamily, ExperimentConfig, Profile};
pub use curve::{read_curve, write_curve, CurveRow, CurveTable, Method, Metric};
pub use experiments::{
    evaluate_bler, evaluate_initialization, evaluate_ser, load_params, median_over_seeds, run_meta_train, save_params,
    sweep_adaptation, sweep_pilots, with_workers, AdaptationSweep, PilotSweep, SeedCurve,
};
pub use gradcheck::{run_gradcheck, CheckResult, GradcheckReport, Scale};

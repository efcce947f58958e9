//! Stratified RMSE, the energy-inconsistency score and the twin-lake
//! experiment grid.

mod experiment;
mod report;

pub use experiment::{
    prepare_bundle, pretrain, repeat_seed, run_cell, run_experiment_grid, BenchmarkSpec, Bundle, CellResult,
    ExperimentConfig, Grid, GridResult, LakeData, PretrainSource, Pretrained, Score, Variant,
};
pub use report::{
    energy_inconsistency, evaluate, rmse_strata, save_report, EvalReport, Season, Strata, Stratum, StratumRmse,
    MIN_DEPTH_OBS, SEASON_NOTE,
};

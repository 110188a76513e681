//! Experiment orchestration: synthetic fixtures, single runs, ablation grids and sweeps.

mod featurize;
mod fixture;
mod plan;
mod run;

pub use featurize::ImageFeaturizer;
pub use fixture::{class_name, desk_schedule, gen_fixture, image_id, Fixture, SyntheticFixtureSpec};
pub use plan::{seed_from_env, ExperimentPlan, ModelShape, Stages, SweepAxis, SweepGrid, SEED_ENV};
pub use run::{
    build_backgrounds, execute_run, median, run_ablation, run_sweep, AblationResult, AblationRow, Backgrounds,
    PreparedData, RunOutcome, RunSpec, SweepCurve, SweepPoint,
};

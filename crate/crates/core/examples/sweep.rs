//! Sweeps λ or τ with the contrastive and fake stages on and prints the curve.
//!
//! ```bash
//! cargo run --release -p fodfom --example sweep [lambda|tau|alpha]
//! ```

use fodfom::pipeline::{run_sweep, ExperimentPlan, PreparedData, Stages, SweepAxis};

fn main() -> fodfom::Result<()> {
    let axis = match std::env::args().nth(1).as_deref() {
        None | Some("lambda") => SweepAxis::Lambda,
        Some("tau") => SweepAxis::Tau,
        Some("alpha") => SweepAxis::Alpha,
        Some(other) => return Err(fodfom::Error::InvalidArgument(format!("unknown axis {other}"))),
    };
    let mut plan = ExperimentPlan {
        stages: Stages {
            supcon: true,
            bg_ood: false,
            sd_ood: true,
        },
        seeds: vec![0, 1, 2],
        ..Default::default()
    };
    plan.apply_seed_env()?;
    let data = PreparedData::from_plan(&plan, None)?;
    print!("{}", run_sweep(&data, &plan, axis, None)?.to_csv());
    Ok(())
}

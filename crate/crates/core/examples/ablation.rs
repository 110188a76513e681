//! Runs the eight-row stage ablation on a synthetic fixture and prints the table.
//!
//! ```bash
//! cargo run --release -p fodfom --example ablation [OUT_DIR]
//! ```

use std::time::Instant;

use fodfom::pipeline::{run_ablation, ExperimentPlan, PreparedData};

fn main() -> fodfom::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let mut plan = ExperimentPlan::default();
    plan.apply_seed_env()?;

    let start = Instant::now();
    let data = PreparedData::from_plan(&plan, out.as_deref())?;
    let result = run_ablation(&data, &plan, out.as_deref())?;
    print!("{}", result.to_markdown());
    println!(
        "\n{} runs in {:.1}s",
        result.rows.len() * plan.seeds.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

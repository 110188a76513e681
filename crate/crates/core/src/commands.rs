//! Command-line surface. The `fodfom` binary parses [`Cli`] and calls [`run`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::background::{make_background, BlurSpec, ImageU8};
use crate::error::{Error, Result};
use crate::eval::{make_report, ScoredSplit};
use crate::fake_embed::{generate_fakes, SelectionMetric};
use crate::matrix::Matrix;
use crate::pipeline::{
    gen_fixture, run_ablation, run_sweep, seed_from_env, ExperimentPlan, PreparedData, SweepAxis,
    SyntheticFixtureSpec,
};
use crate::scoring::{estimate_rectify, score_inputs, ScoreMethod};
use crate::tensor_io::{
    read_jsonl, read_tensor, read_tensor_with, validate_manifest, write_jsonl, write_tensor, DetectionRecord,
    Manifest, TensorF32, Validation,
};
use crate::trainer::{load_checkpoint, save_checkpoint, train, TrainConfig, TrainingSet};

#[derive(Debug, Parser)]
#[command(name = "fodfom", version, about = "Fake-outlier construction, training and OOD scoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic fixture (manifest, tensors, captions, detections, images)
    GenFixture(GenFixtureArgs),
    /// Synthesize fake-OOD embeddings from periphery rows
    SynthFakes(SynthFakesArgs),
    /// Blur detected foregrounds into background images
    GenBackgrounds(GenBackgroundsArgs),
    /// Train the (C+1)-class model
    Train(TrainArgs),
    /// Score features with a trained model
    Score(ScoreArgs),
    /// FPR95 / AUROC report from score files
    Eval(EvalArgs),
    /// Stage ablation grid
    Ablate(PlanArgs),
    /// Hyperparameter sensitivity sweep
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenFixtureArgs {
    /// Fixture spec JSON, or an experiment plan JSON with a `fixture` block
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthFakesArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long)]
    pub metric: Option<SelectionMetric>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenBackgroundsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub kernel: Option<u32>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Training config JSON; defaults to the manifest hyperparameters
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra fake-OOD feature files, appended under label C
    #[arg(long)]
    pub fakes: Vec<PathBuf>,
    /// Checkpoint path; the layout sidecar and `<stem>.log.csv` go next to it
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value = "react")]
    pub method: ScoreMethod,
    #[arg(long, default_value_t = 90.0)]
    pub react_percentile: f64,
    /// ID inputs used to estimate the ReAct clip value (required for `react`)
    #[arg(long)]
    pub id_features: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub id_scores: PathBuf,
    /// `name=path`, repeatable
    #[arg(long, required = true, value_parser = parse_named)]
    pub ood_scores: Vec<(String, PathBuf)>,
    /// `report.csv` also produces `report.md` and `report.roc.csv`
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Experiment plan JSON; the built-in synthetic plan when omitted
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub plan: PlanArgs,
    #[arg(long)]
    pub axis: SweepAxis,
}

fn parse_named(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected name=path, got {s:?}"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected name=path, got {s:?}"));
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenFixture(a) => cmd_gen_fixture(a),
        Command::SynthFakes(a) => cmd_synth_fakes(a),
        Command::GenBackgrounds(a) => cmd_gen_backgrounds(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// Loads a manifest and refuses to continue if validation finds anything.
fn load_valid_manifest(path: &Path) -> Result<Manifest> {
    let m = Manifest::load(path)?;
    let diags = validate_manifest(&m);
    if diags.is_empty() {
        return Ok(m);
    }
    for d in &diags {
        warn!("{d}");
    }
    Err(Error::InvalidManifest(format!(
        "{} problem(s), first: {}",
        diags.len(),
        diags[0]
    )))
}

fn cmd_gen_fixture(a: GenFixtureArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(p, e))?;
            let inner = value.get("fixture").cloned().unwrap_or(value);
            serde_json::from_value(inner).map_err(|e| Error::json(p, e))?
        }
        None => SyntheticFixtureSpec::default(),
    };
    if let Some(v) = a.classes {
        spec.num_classes = v;
    }
    if let Some(v) = a.samples {
        spec.samples_per_class = v;
    }
    if let Some(v) = a.dim {
        spec.dim = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = seed_from_env()? {
        spec.seed = v;
    }
    let m = gen_fixture(&spec, &a.out)?;
    info!("fixture with {} classes written to {}", m.num_classes, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ProvenanceLine {
    row: usize,
    source_row: usize,
    class_index: usize,
    gamma: f64,
}

fn cmd_synth_fakes(a: SynthFakesArgs) -> Result<()> {
    let m = load_valid_manifest(&a.manifest)?;
    let hp = &m.hyperparameters;
    let mut set = m.load_embedding_set()?;
    if hp.pre_normalize {
        set = set.l2_normalized();
    }
    let alpha = a.alpha.unwrap_or(hp.alpha);
    let gammas = a.gammas.unwrap_or_else(|| hp.gammas.clone());
    let metric = a.metric.unwrap_or(hp.metric);
    let synth = generate_fakes(&set, alpha, &gammas, metric, hp.shrinkage)?;
    for s in &synth.skipped {
        warn!("row {} (class {}) skipped: {}", s.source_row, s.class_index, s.reason);
    }
    let batch = synth
        .batch
        .ok_or_else(|| Error::EmptyInput("no fake embeddings could be synthesized".into()))?;
    create_parent(&a.out)?;
    write_tensor(&batch.embeddings, &a.out)?;
    let lines: Vec<ProvenanceLine> = batch
        .provenance
        .iter()
        .enumerate()
        .map(|(row, p)| ProvenanceLine {
            row,
            source_row: p.source_row,
            class_index: p.class_index,
            gamma: p.gamma,
        })
        .collect();
    write_jsonl(a.out.with_extension("provenance.jsonl"), &lines)?;
    info!("{} fakes written to {}", lines.len(), a.out.display());
    Ok(())
}

fn cmd_gen_backgrounds(a: GenBackgroundsArgs) -> Result<()> {
    let m = load_valid_manifest(&a.manifest)?;
    let det_path = m
        .detections
        .as_ref()
        .ok_or_else(|| Error::InvalidManifest("manifest has no detections".into()))?;
    if m.images.is_none() {
        return Err(Error::InvalidManifest("manifest has no images directory".into()));
    }
    let spec = BlurSpec {
        kernel_size: a.kernel.unwrap_or(m.hyperparameters.kernel_size),
        beta_percent: a.beta.unwrap_or(m.hyperparameters.beta_percent),
    };
    let records: Vec<DetectionRecord> = read_jsonl(m.resolve(det_path))?;
    create_dir(&a.out)?;
    let decisions = records
        .par_iter()
        .map(|det| {
            let path = m.image_path(&det.image_id).expect("images directory checked");
            let img = ImageU8::load_png(&path)?;
            let (out, decision) = make_background(&img, det, &spec)?;
            if let Some(out) = out {
                out.save_png(a.out.join(format!("{}.png", det.image_id)))?;
            }
            Ok(decision)
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(a.out.join("decisions.jsonl"), &decisions)?;
    Ok(())
}

fn load_matrix(path: &Path) -> Result<Matrix> {
    Matrix::from_tensor(&read_tensor(path)?)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let m = load_valid_manifest(&a.manifest)?;
    let hp = &m.hyperparameters;
    let mut config = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(p, e))?
        }
        None => TrainConfig {
            lambda: hp.lambda,
            tau: hp.tau,
            schedule: hp.optimizer.clone(),
            seed: hp.seed,
            encoder_widths: vec![32],
            projection_dim: crate::trainer::PROJECTION_DIM,
        },
    };
    if let Some(seed) = seed_from_env()? {
        config.seed = seed;
    }
    let set = m.load_embedding_set()?;
    let mut training = TrainingSet::new(
        Matrix::from_tensor(set.embeddings())?,
        set.labels().to_vec(),
        set.num_classes(),
    )?;
    let extra = m
        .fake_embeddings
        .iter()
        .chain(&m.background_features)
        .map(|p| m.resolve(p))
        .chain(a.fakes.iter().cloned());
    for p in extra {
        training.add_fakes(&load_matrix(&p)?)?;
    }
    let (params, log) = train(&training, &config)?;
    create_parent(&a.out)?;
    save_checkpoint(&params, &a.out)?;
    log.write_csv(a.out.with_extension("log.csv"))?;
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let params = load_checkpoint(&a.params)?;
    let inputs = load_matrix(&a.features)?;
    let threshold = match (&a.id_features, a.method) {
        (Some(p), _) => Some(estimate_rectify(&params.features(&load_matrix(p)?)?, a.react_percentile)?),
        (None, ScoreMethod::React) => {
            return Err(Error::InvalidArgument("react scoring needs --id-features".into()));
        }
        (None, _) => None,
    };
    let scores = score_inputs(&params, &inputs, a.method, threshold.as_ref())?;
    let data: Vec<f32> = scores.iter().map(|&s| s as f32).collect();
    create_parent(&a.out)?;
    write_tensor(&TensorF32::new(vec![data.len()], data)?, &a.out)
}

/// Reads a score vector; `±∞` sentinels are allowed, NaN is not.
fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let t = read_tensor_with(path, Validation::Structural)?;
    if let Some((index, value)) = t.data().iter().enumerate().find(|(_, v)| v.is_nan()) {
        return Err(Error::NonFinite { index, value: *value });
    }
    Ok(t.data().iter().map(|&v| f64::from(v)).collect())
}

#[derive(Serialize)]
struct EvalInputs<'a> {
    id_scores: &'a Path,
    ood_scores: &'a BTreeMap<String, PathBuf>,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let named: BTreeMap<String, PathBuf> = a.ood_scores.into_iter().collect();
    let mut split = ScoredSplit {
        id_scores: read_scores(&a.id_scores)?,
        ..Default::default()
    };
    for (name, p) in &named {
        split.ood_scores.insert(name.clone(), read_scores(p)?);
    }
    let report = make_report(
        &split,
        &EvalInputs {
            id_scores: &a.id_scores,
            ood_scores: &named,
        },
    )?;
    if report.sentinels_replaced > 0 {
        info!("{} infinite scores clamped to the largest finite value", report.sentinels_replaced);
    }
    create_parent(&a.out)?;
    report.write_all(&a.out)?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn load_plan(p: Option<&Path>) -> Result<ExperimentPlan> {
    let mut plan = match p {
        Some(p) => ExperimentPlan::load(p)?,
        None => ExperimentPlan::default(),
    };
    plan.apply_seed_env()?;
    Ok(plan)
}

fn cmd_ablate(a: PlanArgs) -> Result<()> {
    let plan = load_plan(a.plan.as_deref())?;
    create_dir(&a.out)?;
    plan.save(a.out.join("plan.json"))?;
    let data = PreparedData::from_plan(&plan, Some(&a.out))?;
    let result = run_ablation(&data, &plan, Some(&a.out))?;
    print!("{}", result.to_markdown());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let plan = load_plan(a.plan.plan.as_deref())?;
    create_dir(&a.plan.out)?;
    plan.save(a.plan.out.join("plan.json"))?;
    let data = PreparedData::from_plan(&plan, Some(&a.plan.out))?;
    let curve = run_sweep(&data, &plan, a.axis, Some(&a.plan.out))?;
    print!("{}", curve.to_csv());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_paths() {
        assert_eq!(parse_named("svhn=a/b.fodf").unwrap(), ("svhn".into(), PathBuf::from("a/b.fodf")));
        assert!(parse_named("svhn").is_err());
        assert!(parse_named("=x").is_err());
    }

    #[test]
    fn cli_shape() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}

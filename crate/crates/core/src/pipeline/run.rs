use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::background::{make_background, BlurSpec, DecisionRecord, ImageU8};
use crate::config::Hyperparameters;
use crate::error::{Error, Result};
use crate::eval::{make_report, EvalReport, ScoredSplit};
use crate::fake_embed::generate_fakes;
use crate::matrix::Matrix;
use crate::scoring::{estimate_rectify, score_inputs, ScoreMethod};
use crate::tensor_io::{read_jsonl, read_tensor, write_jsonl, write_tensor, DetectionRecord, LabeledEmbeddingSet, Manifest};
use crate::trainer::{save_checkpoint, train, TrainConfig, TrainLog, TrainingSet};

use super::featurize::ImageFeaturizer;
use super::fixture::Fixture;
use super::plan::{ExperimentPlan, ModelShape, Stages, SweepAxis};

/// Background-image features plus the per-image gate decisions that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Backgrounds {
    pub features: Matrix,
    pub decisions: Vec<DecisionRecord>,
}

/// Blurs every gated image and featurizes the results, in input order.
pub fn build_backgrounds(
    items: &[(ImageU8, DetectionRecord)],
    spec: &BlurSpec,
    featurizer: &ImageFeaturizer,
) -> Result<Backgrounds> {
    let outputs = items
        .par_iter()
        .map(|(img, det)| make_background(img, det, spec))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut decisions = Vec::with_capacity(outputs.len());
    for (img, decision) in outputs {
        if let Some(img) = img {
            rows.push(featurizer.featurize(&img));
        }
        decisions.push(decision);
    }
    let features = if rows.is_empty() {
        Matrix::zeros(0, featurizer.dim())
    } else {
        Matrix::from_rows(&rows)?
    };
    Ok(Backgrounds { features, decisions })
}

/// Everything a run reads, loaded once and shared across runs.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub hyperparameters: Hyperparameters,
    pub train: LabeledEmbeddingSet,
    pub test_id: Matrix,
    pub test_ood: BTreeMap<String, Matrix>,
    pub backgrounds: Option<Backgrounds>,
}

fn normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

impl PreparedData {
    pub fn from_fixture(fixture: &Fixture) -> Result<Self> {
        let hp = fixture.spec.hyperparameters();
        let backgrounds = if fixture.images.is_empty() {
            None
        } else {
            let items: Vec<(ImageU8, DetectionRecord)> = fixture
                .images
                .iter()
                .map(|(_, img)| img.clone())
                .zip(fixture.detections.iter().cloned())
                .collect();
            let featurizer = ImageFeaturizer::new(fixture.train.dim(), hp.seed);
            Some(build_backgrounds(&items, &blur_spec(&hp), &featurizer)?)
        };
        Self {
            hyperparameters: hp,
            train: fixture.train.clone(),
            test_id: fixture.test_id.clone(),
            test_ood: fixture.test_ood.clone(),
            backgrounds,
        }
        .normalized_if_requested()
    }

    /// Loads a manifest with a test split. Background features come from
    /// `background_features` when given, otherwise from images + detections.
    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let hp = m.hyperparameters.clone();
        let train = m.load_embedding_set()?;
        let test = m
            .test
            .as_ref()
            .ok_or_else(|| Error::InvalidManifest("manifest has no test split".into()))?;
        let test_id = Matrix::from_tensor(&read_tensor(m.resolve(&test.id))?)?;
        let mut test_ood = BTreeMap::new();
        for (name, p) in &test.ood {
            test_ood.insert(name.clone(), Matrix::from_tensor(&read_tensor(m.resolve(p))?)?);
        }
        let backgrounds = if let Some(p) = &m.background_features {
            Some(Backgrounds {
                features: Matrix::from_tensor(&read_tensor(m.resolve(p))?)?,
                decisions: Vec::new(),
            })
        } else if let (Some(det), Some(_)) = (&m.detections, &m.images) {
            let records: Vec<DetectionRecord> = read_jsonl(m.resolve(det))?;
            let items = records
                .into_iter()
                .map(|d| {
                    let path = m.image_path(&d.image_id).expect("images directory set");
                    Ok((ImageU8::load_png(path)?, d))
                })
                .collect::<Result<Vec<_>>>()?;
            let featurizer = ImageFeaturizer::new(train.dim(), hp.seed);
            Some(build_backgrounds(&items, &blur_spec(&hp), &featurizer)?)
        } else {
            None
        };
        Self {
            hyperparameters: hp,
            train,
            test_id,
            test_ood,
            backgrounds,
        }
        .normalized_if_requested()
    }

    /// Loads from the plan's manifest, or generates its fixture (written to
    /// `out/fixture` when an output directory is given).
    pub fn from_plan(plan: &ExperimentPlan, out: Option<&Path>) -> Result<Self> {
        if let Some(m) = &plan.manifest {
            return Self::from_manifest(&Manifest::load(m)?);
        }
        let spec = plan
            .fixture
            .as_ref()
            .ok_or_else(|| Error::InvalidSpec("plan needs a manifest or a fixture spec".into()))?;
        let fixture = Fixture::generate(spec)?;
        if let Some(out) = out {
            fixture.write(out.join("fixture"))?;
        }
        Self::from_fixture(&fixture)
    }

    fn normalized_if_requested(mut self) -> Result<Self> {
        if self.hyperparameters.pre_normalize {
            self.train = self.train.l2_normalized();
            self.test_id = normalize_rows(&self.test_id);
            for m in self.test_ood.values_mut() {
                *m = normalize_rows(m);
            }
            if let Some(bg) = &mut self.backgrounds {
                bg.features = normalize_rows(&bg.features);
            }
        }
        if let Some(bg) = &self.backgrounds {
            if bg.features.rows() > 0 && bg.features.cols() != self.train.dim() {
                return Err(Error::DimMismatch(format!(
                    "background features have dimension {}, embeddings {}",
                    bg.features.cols(),
                    self.train.dim()
                )));
            }
        }
        Ok(self)
    }
}

fn blur_spec(hp: &Hyperparameters) -> BlurSpec {
    BlurSpec {
        kernel_size: hp.kernel_size,
        beta_percent: hp.beta_percent,
    }
}

/// One training run: stage toggles plus the swept hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSpec {
    pub stages: Stages,
    pub lambda: f64,
    pub tau: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl RunSpec {
    pub fn defaults(hp: &Hyperparameters, stages: Stages, seed: u64) -> Self {
        Self {
            stages,
            lambda: hp.lambda,
            tau: hp.tau,
            alpha: hp.alpha,
            seed,
        }
    }
}

/// What the report hash covers.
#[derive(Serialize)]
struct RunIdentity<'a> {
    run: &'a RunSpec,
    method: ScoreMethod,
    react_percentile: f64,
    model: &'a ModelShape,
    hyperparameters: &'a Hyperparameters,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub reports: Vec<(ScoreMethod, EvalReport)>,
    pub log: TrainLog,
    pub fake_count: usize,
    pub background_count: usize,
}

/// Trains on ID + the enabled fake sources and evaluates every score method.
/// With `out`, writes fakes, background features, checkpoint, log and reports there.
pub fn execute_run(
    data: &PreparedData,
    plan: &ExperimentPlan,
    spec: &RunSpec,
    out: Option<&Path>,
) -> Result<RunOutcome> {
    let hp = &data.hyperparameters;
    let c = data.train.num_classes();
    let id_inputs = Matrix::from_tensor(data.train.embeddings())?;
    let mut set = TrainingSet::new(id_inputs.clone(), data.train.labels().to_vec(), c)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut fake_count = 0;
    if spec.stages.sd_ood {
        let synth = generate_fakes(&data.train, spec.alpha, &hp.gammas, hp.metric, hp.shrinkage)?;
        for s in &synth.skipped {
            warn!("fake skipped for row {} (class {}): {}", s.source_row, s.class_index, s.reason);
        }
        if let Some(batch) = synth.batch {
            set.add_fakes(&Matrix::from_tensor(&batch.embeddings)?)?;
            fake_count = batch.provenance.len();
            if let Some(dir) = out {
                write_tensor(&batch.embeddings, dir.join("fakes.fodf"))?;
            }
        }
    }
    let mut background_count = 0;
    if spec.stages.bg_ood {
        let bg = data
            .backgrounds
            .as_ref()
            .ok_or_else(|| Error::InvalidManifest("bg_ood enabled but no background source".into()))?;
        set.add_fakes(&bg.features)?;
        background_count = bg.features.rows();
        if let Some(dir) = out {
            write_tensor(&bg.features.to_tensor()?, dir.join("background_features.fodf"))?;
            write_jsonl(dir.join("background_decisions.jsonl"), &bg.decisions)?;
        }
    }

    let config = TrainConfig {
        lambda: if spec.stages.supcon { spec.lambda } else { 0.0 },
        tau: spec.tau,
        schedule: hp.optimizer.clone(),
        seed: spec.seed,
        encoder_widths: plan.model.encoder_widths.clone(),
        projection_dim: plan.model.projection_dim,
    };
    let (params, log) = train(&set, &config)?;

    let threshold = estimate_rectify(&params.features(&id_inputs)?, plan.react_percentile)?;
    let mut reports = Vec::with_capacity(plan.score_methods.len());
    for &method in &plan.score_methods {
        let mut split = ScoredSplit {
            id_scores: score_inputs(&params, &data.test_id, method, Some(&threshold))?,
            ..Default::default()
        };
        for (name, m) in &data.test_ood {
            split
                .ood_scores
                .insert(name.clone(), score_inputs(&params, m, method, Some(&threshold))?);
        }
        let identity = RunIdentity {
            run: spec,
            method,
            react_percentile: plan.react_percentile,
            model: &plan.model,
            hyperparameters: hp,
        };
        let report = make_report(&split, &identity)?;
        if report.sentinels_replaced > 0 {
            info!("{} infinite {} scores clamped", report.sentinels_replaced, method.name());
        }
        if let Some(dir) = out {
            report.write_all(dir.join(format!("report-{}.csv", method.name())))?;
        }
        reports.push((method, report));
    }
    if let Some(dir) = out {
        log.write_csv(dir.join("train_log.csv"))?;
        save_checkpoint(&params, dir.join("params.fodf"))?;
    }
    Ok(RunOutcome {
        spec: *spec,
        reports,
        log,
        fake_count,
        background_count,
    })
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run_dir(out: Option<&Path>, parts: &[String]) -> Option<PathBuf> {
    out.map(|o| parts.iter().fold(o.to_path_buf(), |p, s| p.join(s)))
}

/// One ablation row: a stage subset under one score method, summarized over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub stages: Stages,
    pub method: ScoreMethod,
    pub per_seed: Vec<(u64, EvalReport)>,
    pub median_fpr95: f64,
    pub median_auroc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
}

impl AblationResult {
    pub fn row(&self, stages: Stages, method: ScoreMethod) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.stages == stages && r.method == method)
    }

    /// One line per (subset, method) with the medians over seeds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stages,supcon,bg_ood,sd_ood,method,seeds,median_fpr95,median_auroc\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.stages,
                u8::from(r.stages.supcon),
                u8::from(r.stages.bg_ood),
                u8::from(r.stages.sd_ood),
                r.method.name(),
                r.per_seed.len(),
                r.median_fpr95,
                r.median_auroc
            )
            .unwrap();
        }
        out
    }

    /// Ablation-table layout with check marks and percentages.
    pub fn to_markdown(&self) -> String {
        let mark = |b: bool| if b { "✓" } else { "" };
        let mut out = String::from("| L_SC | BG-OOD | SD-OOD | method | FPR95 ↓ | AUROC ↑ |\n|:-:|:-:|:-:|---|---:|---:|\n");
        for r in &self.rows {
            writeln!(
                out,
                "| {} | {} | {} | {} | {:.2} | {:.2} |",
                mark(r.stages.supcon),
                mark(r.stages.bg_ood),
                mark(r.stages.sd_ood),
                r.method.name(),
                100.0 * r.median_fpr95,
                100.0 * r.median_auroc
            )
            .unwrap();
        }
        out
    }
}

/// Runs every subset of the plan's stages for every seed, in parallel.
pub fn run_ablation(data: &PreparedData, plan: &ExperimentPlan, out: Option<&Path>) -> Result<AblationResult> {
    plan.validate()?;
    let subsets = plan.stages.power_set();
    let jobs: Vec<RunSpec> = subsets
        .iter()
        .flat_map(|&s| plan.seeds.iter().map(move |&seed| (s, seed)))
        .map(|(s, seed)| RunSpec::defaults(&data.hyperparameters, s, seed))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|spec| {
            let dir = run_dir(out, &[spec.stages.to_string(), format!("seed-{}", spec.seed)]);
            execute_run(data, plan, spec, dir.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &stages in &subsets {
        for (mi, &method) in plan.score_methods.iter().enumerate() {
            let per_seed: Vec<(u64, EvalReport)> = outcomes
                .iter()
                .filter(|o| o.spec.stages == stages)
                .map(|o| (o.spec.seed, o.reports[mi].1.clone()))
                .collect();
            let fpr: Vec<f64> = per_seed.iter().map(|(_, r)| r.average_fpr95).collect();
            let auc: Vec<f64> = per_seed.iter().map(|(_, r)| r.average_auroc).collect();
            rows.push(AblationRow {
                stages,
                method,
                median_fpr95: median(&fpr),
                median_auroc: median(&auc),
                per_seed,
            });
        }
    }
    let result = AblationResult { rows };
    if let Some(out) = out {
        let p = out.join("ablation.csv");
        fs::write(&p, result.to_csv()).map_err(|e| Error::io(&p, e))?;
        let p = out.join("ablation.md");
        fs::write(&p, result.to_markdown()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub fpr95: f64,
    pub auroc: f64,
}

/// Sensitivity curve for one axis, scored with the plan's first method.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub axis: SweepAxis,
    pub method: ScoreMethod,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},fpr95,auroc\n", self.axis);
        for p in &self.points {
            writeln!(out, "{},{},{}", p.value, p.fpr95, p.auroc).unwrap();
        }
        out
    }
}

/// Runs all enabled stages once per axis value and seed; every other
/// hyperparameter stays at its manifest value. Points are medians over seeds.
pub fn run_sweep(
    data: &PreparedData,
    plan: &ExperimentPlan,
    axis: SweepAxis,
    out: Option<&Path>,
) -> Result<SweepCurve> {
    plan.validate()?;
    let values = plan.sweep.values(axis);
    let jobs: Vec<RunSpec> = values
        .iter()
        .flat_map(|&v| plan.seeds.iter().map(move |&seed| (v, seed)))
        .map(|(v, seed)| {
            let mut spec = RunSpec::defaults(&data.hyperparameters, plan.stages, seed);
            match axis {
                SweepAxis::Lambda => spec.lambda = v,
                SweepAxis::Tau => spec.tau = v,
                SweepAxis::Alpha => spec.alpha = v,
            }
            spec
        })
        .collect();
    let sub = format!("sweep-{axis}");
    let outcomes = jobs
        .par_iter()
        .map(|spec| {
            let v = match axis {
                SweepAxis::Lambda => spec.lambda,
                SweepAxis::Tau => spec.tau,
                SweepAxis::Alpha => spec.alpha,
            };
            let dir = run_dir(out, &[sub.clone(), format!("{axis}-{v}"), format!("seed-{}", spec.seed)]);
            execute_run(data, plan, spec, dir.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;
    let n = plan.seeds.len();
    let points = values
        .iter()
        .zip(outcomes.chunks(n))
        .map(|(&value, runs)| {
            let fpr: Vec<f64> = runs.iter().map(|o| o.reports[0].1.average_fpr95).collect();
            let auc: Vec<f64> = runs.iter().map(|o| o.reports[0].1.average_auroc).collect();
            SweepPoint {
                value,
                fpr95: median(&fpr),
                auroc: median(&auc),
            }
        })
        .collect();
    let curve = SweepCurve {
        axis,
        method: plan.score_methods[0],
        points,
    };
    if let Some(out) = out {
        let p = out.join(format!("{sub}.csv"));
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        fs::write(&p, curve.to_csv()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}

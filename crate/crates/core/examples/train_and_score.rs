//! Trains on ID embeddings plus synthesized fakes, then scores the ID test set
//! and each OOD set with every method and prints the evaluation tables.
//!
//! ```bash
//! cargo run --release -p fodfom --example train_and_score
//! ```

use std::collections::BTreeMap;

use fodfom::eval::{make_report, ScoredSplit};
use fodfom::fake_embed::generate_fakes;
use fodfom::matrix::Matrix;
use fodfom::pipeline::{Fixture, SyntheticFixtureSpec};
use fodfom::scoring::{estimate_rectify, score_inputs, ScoreMethod};
use fodfom::trainer::{train, TrainConfig, TrainingSet};

fn main() -> fodfom::Result<()> {
    let fx = Fixture::generate(&SyntheticFixtureSpec {
        image_size: 0,
        ..Default::default()
    })?;
    let hp = fx.spec.hyperparameters();
    let c = fx.spec.num_classes;

    let mut set = TrainingSet::new(Matrix::from_tensor(fx.train.embeddings())?, fx.train.labels().to_vec(), c)?;
    if let Some(batch) = generate_fakes(&fx.train, hp.alpha, &hp.gammas, hp.metric, hp.shrinkage)?.batch {
        set.add_fakes(&Matrix::from_tensor(&batch.embeddings)?)?;
    }
    let config = TrainConfig {
        lambda: hp.lambda,
        tau: hp.tau,
        schedule: hp.optimizer.clone(),
        seed: 0,
        encoder_widths: vec![32],
        projection_dim: 128,
    };
    let (params, log) = train(&set, &config)?;
    let last = log.epochs.last().expect("at least one epoch");
    println!("trained {} rows for {} epochs, final CE {:.4}", set.len(), log.epochs.len(), last.ce);

    let id_train = Matrix::from_tensor(fx.train.embeddings())?;
    let threshold = estimate_rectify(&params.features(&id_train)?, 90.0)?;
    for method in ScoreMethod::ALL {
        let score = |x: &Matrix| score_inputs(&params, x, method, Some(&threshold));
        let mut ood_scores = BTreeMap::new();
        for (name, x) in &fx.test_ood {
            ood_scores.insert(name.clone(), score(x)?);
        }
        let split = ScoredSplit {
            id_scores: score(&fx.test_id)?,
            ood_scores,
        };
        println!("\n{}", method.name());
        print!("{}", make_report(&split, &(method.name(), &config))?.to_markdown());
    }
    Ok(())
}

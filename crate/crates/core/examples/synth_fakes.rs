//! Pushes each class's periphery outward from its mean and shows that the
//! fakes end up less similar to the mean than the rows they came from.
//!
//! ```bash
//! cargo run --release -p fodfom --example synth_fakes
//! ```

use fodfom::fake_embed::{class_means, cosine_similarity, generate_fakes, SelectionMetric};
use fodfom::pipeline::{Fixture, SyntheticFixtureSpec};

fn main() -> fodfom::Result<()> {
    let fx = Fixture::generate(&SyntheticFixtureSpec {
        image_size: 0,
        ..Default::default()
    })?;
    let hp = fx.spec.hyperparameters();
    let means = class_means(&fx.train)?;

    for metric in [SelectionMetric::Cosine, SelectionMetric::Euclidean, SelectionMetric::Mahalanobis] {
        let out = generate_fakes(&fx.train, hp.alpha, &hp.gammas, metric, hp.shrinkage)?;
        let Some(batch) = out.batch else {
            println!("{metric:?}: every row skipped");
            continue;
        };
        let avg = |rows: &mut dyn Iterator<Item = (usize, Vec<f64>)>| {
            let (n, s) = rows.fold((0, 0.0), |(n, s), (c, r)| (n + 1, s + cosine_similarity(&r, &means[c].mean)));
            s / f64::from(n)
        };
        let to64 = |r: &[f32]| r.iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
        let fake = avg(&mut batch.provenance.iter().enumerate().map(|(i, p)| (p.class_index, to64(batch.embeddings.row(i)))));
        let source = avg(&mut batch
            .provenance
            .iter()
            .map(|p| (p.class_index, to64(fx.train.row(p.source_row)))));
        println!(
            "{metric:?}: {} fakes, {} skipped, mean cosine to class mean {source:.3} -> {fake:.3}",
            batch.provenance.len(),
            out.skipped.len()
        );
    }
    Ok(())
}

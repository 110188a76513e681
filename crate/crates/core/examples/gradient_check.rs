//! Finite-difference check of the hand-written backward pass on random small nets,
//! for the cross-entropy term, the contrastive term and their sum.
//!
//! ```bash
//! cargo run --release -p fodfom --example gradient_check
//! ```

use fodfom::matrix::Matrix;
use fodfom::trainer::{check_gradients, kink_margin, Architecture, Batch, ModelParams, Term};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fodfom::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    while checked < 5 {
        let arch = Architecture {
            input_dim: 4,
            encoder_widths: vec![6, 5],
            num_classes: 3,
            projection_dim: 4,
        };
        let params = ModelParams::init(arch, &mut rng)?;
        let data = (0..8 * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let batch = Batch {
            features: Matrix::new(8, 4, data)?,
            labels: vec![0, 1, 2, 3, 0, 1, 2, 3],
        };
        // a step that crosses a ReLU kink would measure the kink, not the gradient
        if kink_margin(&params, &batch)? < 0.02 {
            continue;
        }
        for term in [Term::CrossEntropy, Term::SupCon, Term::Combined { lambda: 1.0 }] {
            for h in [1e-3, 1e-5] {
                let g = check_gradients(&params, &batch, term, 0.1, h, 1e-3)?;
                println!(
                    "net {checked} {term:?} h={h:e}: max rel err {:.2e} at {}[{}]",
                    g.max_rel_err, g.worst.0, g.worst.1
                );
            }
        }
        checked += 1;
    }
    Ok(())
}

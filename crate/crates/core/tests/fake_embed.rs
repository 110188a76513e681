mod common;

use fodfom::fake_embed::{
    class_means, class_statistics, generate_fakes, radial_step, select_periphery, synthesize_fakes,
    SelectionMetric,
};
use fodfom::tensor_io::{LabeledEmbeddingSet, TensorF32};
use fodfom::Error;
use proptest::prelude::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn vec_pair(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-100.0f64..100.0, d),
        prop::collection::vec(-100.0f64..100.0, d),
    )
}

fn geometry_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (1usize..64).prop_flat_map(|d| (vec_pair(d), 0.0f64..50.0).prop_map(|((t, m), g)| (t, m, g)))
}

/// Rows per class, with some rows duplicated so the tie rule is exercised.
fn labeled_set() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<usize>, usize)> {
    (1usize..4, 2usize..6).prop_flat_map(|(c, d)| {
        prop::collection::vec(
            (0..c, prop::collection::vec(-10.0f32..10.0, d), any::<bool>()),
            (c * (d + 3))..(c * (d + 3) + 40),
        )
        .prop_map(move |raw| {
            let mut rows: Vec<Vec<f32>> = Vec::new();
            let mut labels = Vec::new();
            // every class gets enough rows for a full-rank covariance
            for (i, (label, row, dup)) in raw.into_iter().enumerate() {
                let label = if i < c * (d + 3) { i % c } else { label };
                if dup && !rows.is_empty() && labels[rows.len() - 1] == label {
                    rows.push(rows[rows.len() - 1].clone());
                } else {
                    rows.push(row);
                }
                labels.push(label);
            }
            (rows, labels, c)
        })
    })
}

fn make_set(rows: &[Vec<f32>], labels: &[usize], c: usize) -> LabeledEmbeddingSet {
    let d = rows[0].len();
    let t = TensorF32::new(vec![rows.len(), d], rows.concat()).unwrap();
    LabeledEmbeddingSet::with_generic_names(t, labels.to_vec(), c).unwrap()
}

fn class_rows(rows: &[Vec<f32>], labels: &[usize], c: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
    let idx: Vec<usize> = (0..rows.len()).filter(|&i| labels[i] == c).collect();
    let data = idx.iter().map(|&i| rows[i].iter().map(|&v| f64::from(v)).collect()).collect();
    (idx, data)
}

const METRICS: [(SelectionMetric, u8); 3] = [
    (SelectionMetric::Cosine, 0),
    (SelectionMetric::Euclidean, 1),
    (SelectionMetric::Mahalanobis, 2),
];

proptest! {
    #[test]
    fn step_moves_exactly_gamma_outward((t, m, g) in geometry_case()) {
        prop_assume!(norm(&sub(&t, &m)) > 1e-6);
        let out = radial_step(&t, &m, g).unwrap();
        let before = norm(&sub(&t, &m));
        let after = norm(&sub(&out, &m));
        prop_assert!(((after - (before + g)) / (before + g)).abs() <= 1e-6);
        if g > 0.0 {
            let cos = common::cosine(&sub(&out, &m), &sub(&t, &m));
            prop_assert!(cos >= 1.0 - 1e-9, "cos {cos}");
        }
    }

    #[test]
    fn larger_gamma_escapes_further((t, m, g) in geometry_case(), extra in 0.01f64..10.0) {
        prop_assume!(norm(&sub(&t, &m)) > 1e-6);
        let near = radial_step(&t, &m, g).unwrap();
        let far = radial_step(&t, &m, g + extra).unwrap();
        prop_assert!(norm(&sub(&far, &m)) > norm(&sub(&near, &m)));
    }

    #[test]
    fn zero_gamma_is_identity((t, m, _g) in geometry_case()) {
        prop_assume!(norm(&sub(&t, &m)) > 0.0);
        prop_assert_eq!(radial_step(&t, &m, 0.0).unwrap(), t);
    }

    #[test]
    fn selection_matches_brute_force((rows, labels, c) in labeled_set(), alpha in 0.5f64..=100.0) {
        let set = make_set(&rows, &labels, c);
        let stats = class_statistics(&set, 0.1).unwrap();
        for (metric, kind) in METRICS {
            let sel = match select_periphery(&set, &stats, alpha, metric) {
                Err(Error::SingularCovariance { class, .. }) => {
                    // with shrinkage only a constant coordinate can make the matrix singular
                    let (_, data) = class_rows(&rows, &labels, class);
                    let constant = (0..data[0].len()).any(|j| data.iter().all(|r| r[j] == data[0][j]));
                    prop_assert!(constant);
                    continue;
                }
                other => other.unwrap(),
            };
            for s in &sel {
                let (idx, data) = class_rows(&rows, &labels, s.class_index);
                let ranking = common::periphery_ranking(&data, kind, 0.1);
                let k = common::periphery_k(idx.len(), alpha);
                let expected: Vec<usize> = ranking[..k].iter().map(|&(_, i)| idx[i]).collect();
                if s.selected_rows != expected {
                    // only a float-level near tie at the cut may differ
                    let gap = (ranking[k - 1].0 - ranking.get(k).map_or(f64::INFINITY, |r| r.0)).abs();
                    prop_assert!(gap <= 1e-9 * ranking[k - 1].0.abs().max(1.0),
                        "{metric}: got {:?} want {:?}", s.selected_rows, expected);
                }
                prop_assert_eq!(s.selected_rows.len(), k);
            }
        }
    }

    #[test]
    fn fake_count_and_soundness((rows, labels, c) in labeled_set(), alpha in 1.0f64..=100.0,
                                gammas in prop::collection::vec(0.0f64..5.0, 1..4)) {
        let set = make_set(&rows, &labels, c);
        let stats = class_means(&set).unwrap();
        let sel = select_periphery(&set, &stats, alpha, SelectionMetric::Cosine).unwrap();
        let out = synthesize_fakes(&set, &stats, &sel, &gammas).unwrap();
        let selected: usize = sel.iter().map(|s| s.selected_rows.len()).sum();
        let produced = out.batch.as_ref().map_or(0, |b| b.provenance.len());
        prop_assert_eq!(produced + out.skipped.len() * gammas.len(), selected * gammas.len());
        if let Some(batch) = &out.batch {
            for (i, p) in batch.provenance.iter().enumerate() {
                // every fake comes from a selected row of its own class
                let s = &sel[p.class_index];
                prop_assert!(s.selected_rows.contains(&p.source_row));
                prop_assert_eq!(labels[p.source_row], p.class_index);
                let t: Vec<f64> = rows[p.source_row].iter().map(|&v| f64::from(v)).collect();
                let want = radial_step(&t, &stats[p.class_index].mean, p.gamma).unwrap();
                for (a, b) in batch.embeddings.row(i).iter().zip(&want) {
                    prop_assert_eq!(*a, *b as f32);
                }
            }
        }
    }
}

#[test]
fn equal_to_mean_is_skipped() {
    // class 0 has a row exactly at its mean
    let rows = vec![vec![1.0f32, 1.0], vec![0.0, 0.0], vec![2.0, 2.0], vec![5.0, 5.0]];
    let set = make_set(&rows, &[0, 0, 0, 1], 2);
    let out = generate_fakes(&set, 100.0, &[1.0, 2.0], SelectionMetric::Euclidean, 0.0).unwrap();
    assert_eq!(out.skipped.len(), 2);
    assert!(out.skipped.iter().any(|s| s.source_row == 0));
    assert!(out.skipped.iter().any(|s| s.source_row == 3));
    assert_eq!(out.batch.unwrap().provenance.len(), 4);
}

#[test]
fn fake_order_is_class_then_selection_then_gamma() {
    let rows = vec![vec![1.0f32, 0.0], vec![3.0, 0.0], vec![0.0, 1.0], vec![0.0, 4.0]];
    let set = make_set(&rows, &[0, 0, 1, 1], 2);
    let batch = generate_fakes(&set, 100.0, &[0.5, 1.0], SelectionMetric::Euclidean, 0.0)
        .unwrap()
        .batch
        .unwrap();
    let order: Vec<(usize, usize, f64)> =
        batch.provenance.iter().map(|p| (p.class_index, p.source_row, p.gamma)).collect();
    // equal distances to the mean, so rows stay in index order
    assert_eq!(
        order,
        vec![(0, 0, 0.5), (0, 0, 1.0), (0, 1, 0.5), (0, 1, 1.0), (1, 2, 0.5), (1, 2, 1.0), (1, 3, 0.5), (1, 3, 1.0)]
    );
    assert_eq!(batch.embeddings.row(0), &[0.5f32, 0.0]);
    assert_eq!(batch.embeddings.row(3), &[4.0f32, 0.0]);
}

#[test]
fn mahalanobis_ignores_scale_of_a_stretched_axis() {
    // x is 10 times more spread than y; the y outlier is the periphery under
    // Mahalanobis but the x extreme wins under Euclidean.
    let mut rows = Vec::new();
    for i in 0..20 {
        let x = (i as f32 - 9.5) * 10.0;
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        rows.push(vec![x, y]);
    }
    rows.push(vec![0.0, 6.0]);
    let labels = vec![0; rows.len()];
    let set = make_set(&rows, &labels, 1);
    let stats = class_statistics(&set, 0.0).unwrap();
    let k1 = 100.0 / rows.len() as f64;
    let maha = select_periphery(&set, &stats, k1, SelectionMetric::Mahalanobis).unwrap();
    let eucl = select_periphery(&set, &stats, k1, SelectionMetric::Euclidean).unwrap();
    assert_eq!(maha[0].selected_rows, vec![20]);
    assert_ne!(eucl[0].selected_rows, vec![20]);
}

mod common;

use fodfom::background::{blur_box, make_background, BlurSpec, Decision, ImageU8};
use fodfom::tensor_io::{BoundingBox, DetectionRecord};
use proptest::prelude::*;

fn image_and_box() -> impl Strategy<Value = (ImageU8, BoundingBox)> {
    (1u32..=64, 1u32..=64, prop::sample::select(vec![1u8, 3])).prop_flat_map(|(w, h, ch)| {
        let n = (w * h) as usize * ch as usize;
        (
            prop::collection::vec(any::<u8>(), n),
            0..w,
            0..h,
            1..=w,
            1..=h,
        )
            .prop_map(move |(px, xa, ya, xb, yb)| {
                let (x0, x1) = (xa.min(xb - 1), xa.max(xb - 1) + 1);
                let (y0, y1) = (ya.min(yb - 1), ya.max(yb - 1) + 1);
                (ImageU8::new(w, h, ch, px).unwrap(), BoundingBox::new(x0, y0, x1, y1, 0.9))
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blur_matches_direct_window((img, b) in image_and_box(), k in prop::sample::select(vec![1u32, 2, 3, 5, 50])) {
        let fast = blur_box(&img, &b, k).unwrap();
        prop_assert_eq!(&fast, &common::naive_blur(&img, &b, k));
        let (lo, hi) = (-((k as i64 - 1) / 2), k as i64 / 2);
        for y in 0..img.height() {
            for x in 0..img.width() {
                for c in 0..img.channels() {
                    let inside = (b.x0..b.x1).contains(&x) && (b.y0..b.y1).contains(&y);
                    if !inside {
                        prop_assert_eq!(fast.get(x, y, c), img.get(x, y, c));
                        continue;
                    }
                    // a mean never leaves the range of its window
                    let mut mn = u8::MAX;
                    let mut mx = u8::MIN;
                    for yy in (y as i64 + lo).max(0)..=(y as i64 + hi).min(img.height() as i64 - 1) {
                        for xx in (x as i64 + lo).max(0)..=(x as i64 + hi).min(img.width() as i64 - 1) {
                            let v = img.get(xx as u32, yy as u32, c);
                            mn = mn.min(v);
                            mx = mx.max(v);
                        }
                    }
                    let v = fast.get(x, y, c);
                    prop_assert!(mn <= v && v <= mx);
                }
            }
        }
    }

    #[test]
    fn gate_is_strict((img, b) in image_and_box(), beta in 1.0f64..100.0) {
        let det = DetectionRecord { image_id: "x".into(), boxes: vec![b] };
        let (out, rec) = make_background(&img, &det, &BlurSpec { kernel_size: 3, beta_percent: beta }).unwrap();
        let total = u64::from(img.width()) * u64::from(img.height());
        let passes = ((b.area() * 100) as f64) < beta * total as f64;
        prop_assert_eq!(out.is_some(), passes);
        prop_assert_eq!(rec.decision == Decision::Emitted, passes);
    }
}

#[test]
fn boundary_fraction_is_skipped() {
    // 20 of 80 pixels is exactly 25%
    let img = ImageU8::filled(10, 8, 3, 7).unwrap();
    let det = DetectionRecord {
        image_id: "edge".into(),
        boxes: vec![BoundingBox::new(0, 0, 5, 4, 0.9)],
    };
    let spec = BlurSpec {
        kernel_size: 3,
        beta_percent: 25.0,
    };
    let (out, rec) = make_background(&img, &det, &spec).unwrap();
    assert!(out.is_none());
    assert_eq!(rec.decision, Decision::SkippedAreaGate);
    let spec = BlurSpec {
        beta_percent: 25.0001,
        ..spec
    };
    assert!(make_background(&img, &det, &spec).unwrap().0.is_some());
}

#[test]
fn decision_lines_are_stable_json() {
    let img = ImageU8::filled(4, 4, 1, 0).unwrap();
    let det = DetectionRecord {
        image_id: "img-1".into(),
        boxes: vec![BoundingBox::new(0, 0, 4, 4, 0.5)],
    };
    let (_, rec) = make_background(&img, &det, &BlurSpec::default()).unwrap();
    let line = serde_json::to_string(&rec).unwrap();
    assert!(line.contains("\"skipped: area gate\""), "{line}");
    assert!(line.contains("\"fraction\":1.0"), "{line}");
}

#[test]
fn png_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let px: Vec<u8> = (0..5 * 3 * 3).map(|i| (i * 11 % 256) as u8).collect();
    let img = ImageU8::new(5, 3, 3, px).unwrap();
    let path = dir.path().join("a.png");
    img.save_png(&path).unwrap();
    assert_eq!(ImageU8::load_png(&path).unwrap(), img);
}

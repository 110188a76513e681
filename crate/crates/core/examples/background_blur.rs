//! Blurs the detected foreground of a synthetic image and applies the area gate.
//! Writes before/after PNGs to the given directory (default: a temp dir).
//!
//! ```bash
//! cargo run -p fodfom --example background_blur [OUT_DIR]
//! ```

use fodfom::background::{make_background, BlurSpec, ImageU8};
use fodfom::tensor_io::{BoundingBox, DetectionRecord};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let out = std::env::args().nth(1).map_or_else(|| tmp.path().to_path_buf(), Into::into);
    std::fs::create_dir_all(&out)?;

    // checkerboard with a bright square in the middle
    let mut img = ImageU8::filled(64, 64, 3, 0)?;
    for y in 0..64 {
        for x in 0..64 {
            let v = if (x / 4 + y / 4) % 2 == 0 { 200 } else { 40 };
            for c in 0..3 {
                img.set(x, y, c, v);
            }
        }
    }
    for y in 20..40 {
        for x in 16..44 {
            img.set(x, y, 0, 255);
        }
    }
    img.save_png(out.join("input.png"))?;

    let spec = BlurSpec {
        kernel_size: 9,
        beta_percent: 50.0,
    };
    let cases = [
        ("small", vec![BoundingBox::new(16, 20, 44, 40, 0.8), BoundingBox::new(0, 0, 4, 4, 0.3)]),
        ("large", vec![BoundingBox::new(0, 0, 60, 60, 0.9)]),
        ("none", vec![]),
    ];
    for (name, boxes) in cases {
        let det = DetectionRecord {
            image_id: name.into(),
            boxes,
        };
        let (bg, record) = make_background(&img, &det, &spec)?;
        println!("{}", serde_json::to_string(&record)?);
        if let Some(bg) = bg {
            bg.save_png(out.join(format!("{name}.png")))?;
        }
    }
    println!("images in {}", out.display());
    Ok(())
}

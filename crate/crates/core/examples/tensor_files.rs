//! Writes and reads back the on-disk formats: a FODF tensor, caption and
//! detection JSONL, and a manifest that ties them together.
//!
//! ```bash
//! cargo run -p fodfom --example tensor_files
//! ```

use fodfom::tensor_io::{
    read_jsonl, read_tensor, validate_detections, write_jsonl, write_tensor, BoundingBox, CaptionRecord,
    DetectionRecord, TensorF32,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;

    let t = TensorF32::new(vec![2, 3], vec![0.5, -1.0, 2.25, 3.0, 0.0, f32::MIN_POSITIVE])?;
    let path = dir.path().join("x.fodf");
    write_tensor(&t, &path)?;
    let bytes = std::fs::read(&path)?;
    println!("{}: {} bytes, header {:02x?}", path.display(), bytes.len(), &bytes[..8]);
    assert_eq!(read_tensor(&path)?, t);

    let captions = vec![CaptionRecord {
        image_id: "img-0".into(),
        class_index: 1,
        blip_caption: "a dog on a sofa".into(),
    }];
    write_jsonl(dir.path().join("captions.jsonl"), &captions)?;
    let back: Vec<CaptionRecord> = read_jsonl(dir.path().join("captions.jsonl"))?;
    println!("captions: {back:?}");

    // the second box is out of bounds for a 32x32 image and gets reported
    let detections = vec![
        DetectionRecord {
            image_id: "img-0".into(),
            boxes: vec![BoundingBox::new(4, 4, 20, 24, 0.9)],
        },
        DetectionRecord {
            image_id: "img-1".into(),
            boxes: vec![BoundingBox::new(10, 10, 40, 12, 0.5)],
        },
    ];
    for d in validate_detections("detections.jsonl", &detections, |_| Some((32, 32))) {
        println!("diagnostic: {d}");
    }
    Ok(())
}

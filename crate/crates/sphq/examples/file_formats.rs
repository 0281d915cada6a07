//! The four binary container formats and their round-trip guarantees.
//!
//! ```bash
//! cargo run --example file_formats
//! ```

use sphq::data::{CodeMatrix, Codebooks, FeatureMatrix, LabelVector};
use sphq::io;

fn main() -> sphq::Result<()> {
    let dir = std::env::temp_dir().join("sphq_formats_demo");
    std::fs::create_dir_all(&dir).map_err(|e| sphq::Error::Io {
        path: dir.clone(),
        source: e,
    })?;

    // features: "SQFT" | version | n u64 | dim u32 | n*dim f32 LE
    let features = FeatureMatrix::new(
        3,
        4,
        vec![
            0.5, -1.25, 3.0, 0.0, 1.0, 2.0, -0.75, 4.5, -2.0, 0.125, 0.25, 1.0,
        ],
    )?;
    let f_path = dir.join("demo.sqft");
    io::save_features(&features, &f_path)?;
    assert_eq!(io::load_features(&f_path)?, features);
    println!(
        "features  {} ({} bytes)",
        f_path.display(),
        std::fs::metadata(&f_path).unwrap().len()
    );

    // labels: "SQLB" | version | n u64 | l u32 | n*u32 LE
    let labels = LabelVector::new(5, vec![0, 4, 2])?;
    let y_path = dir.join("demo.sqlb");
    io::save_labels(&labels, &y_path)?;
    assert_eq!(io::load_labels(&y_path)?, labels);
    println!(
        "labels    {} ({} bytes)",
        y_path.display(),
        std::fs::metadata(&y_path).unwrap().len()
    );

    // codes: "SQCD" | version | n u64 | m u32 | h u32 | n*m bytes
    // one byte per subindex, which is what pins h <= 256
    let codes = CodeMatrix::new(3, 2, 256, vec![0, 255, 17, 3, 128, 64])?;
    let c_path = dir.join("demo.sqcd");
    io::save_codes(&codes, &c_path)?;
    assert_eq!(io::load_codes(&c_path)?, codes);
    println!(
        "codes     {} ({} bytes)",
        c_path.display(),
        std::fs::metadata(&c_path).unwrap().len()
    );

    // codebooks: "SQCB" | version | m u32 | h u32 | p u32 | m*h*p f32 LE
    let books = Codebooks::new(
        2,
        2,
        3,
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5],
    )?;
    let b_path = dir.join("demo.sqcb");
    io::save_codebooks(&books, &b_path)?;
    assert_eq!(io::load_codebooks(&b_path)?, books);
    println!(
        "codebooks {} ({} bytes)",
        b_path.display(),
        std::fs::metadata(&b_path).unwrap().len()
    );

    // loaders name the byte offset of any malformed entry
    let mut bytes = std::fs::read(&f_path).unwrap();
    bytes[20..24].copy_from_slice(&f32::INFINITY.to_le_bytes());
    let bad = dir.join("bad.sqft");
    std::fs::write(&bad, &bytes).unwrap();
    match io::load_features(&bad) {
        Err(e) => println!("corrupt file rejected: {e}"),
        Ok(_) => unreachable!("corrupt file must not load"),
    }
    Ok(())
}

//! Bit-exact binary file formats for the data containers.
//!
//! Every format starts with a four-byte magic, a `u32` version and a shape
//! header, followed by a little-endian payload:
//!
//! ```text
//! features   "SQFT" | version u32 | n u64 | dim u32 | n*dim f32
//! labels     "SQLB" | version u32 | n u64 | l u32   | n u32
//! codes      "SQCD" | version u32 | n u64 | m u32 | h u32 | n*m u8
//! codebooks  "SQCB" | version u32 | m u32 | h u32 | p u32 | m*h*p f32
//! ```
//!
//! Reals are stored as 32-bit IEEE-754; loading promotes them to `f64` so a
//! save/load cycle of a loaded file reproduces the bytes exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{CodeMatrix, Codebooks, FeatureMatrix, LabelVector};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

const MAGIC_FEATURES: &[u8; 4] = b"SQFT";
const MAGIC_LABELS: &[u8; 4] = b"SQLB";
const MAGIC_CODES: &[u8; 4] = b"SQCD";
const MAGIC_CODEBOOKS: &[u8; 4] = b"SQCB";

/// Cursor over a fully loaded file that reports byte offsets in errors.
struct Reader<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path,
            bytes,
            pos: 0,
        })
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&[u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::format(
                self.path,
                self.pos as u64,
                format!("truncated payload while reading {what}"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got: [u8; 4] = self.take(4, "magic")?.try_into().unwrap();
        if &got != magic {
            return Err(Error::format(
                self.path,
                0,
                format!(
                    "bad magic: expected {:?}, got {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(&got)
                ),
            ));
        }
        Ok(())
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn read_u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn read_version(&mut self) -> Result<()> {
        let v = self.read_u32("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::format(
                self.path,
                4,
                format!("unsupported version {v}, expected {FORMAT_VERSION}"),
            ));
        }
        Ok(())
    }

    /// Read `count` f32 values, promoting to f64 and rejecting non-finite
    /// entries with the byte offset of the offending value.
    fn read_f32s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.pos;
        let raw = self.take(count * 4, what)?;
        let mut out = Vec::with_capacity(count);
        for (k, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(
                    self.path,
                    (start + 4 * k) as u64,
                    format!("non-finite entry in {what}"),
                ));
            }
            out.push(v as f64);
        }
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.path,
                self.pos as u64,
                format!(
                    "{} trailing bytes after payload",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn save_features(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + matrix.values().len() * 4);
    buf.extend_from_slice(MAGIC_FEATURES);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(matrix.n() as u64).to_le_bytes());
    buf.extend_from_slice(&(matrix.dim() as u32).to_le_bytes());
    push_f32s(&mut buf, matrix.values());
    write_file(path.as_ref(), &buf)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let mut r = Reader::open(path)?;
    r.expect_magic(MAGIC_FEATURES)?;
    r.read_version()?;
    let n = r.read_u64("n")? as usize;
    let dim = r.read_u32("dim")? as usize;
    let values = r.read_f32s(n * dim, "feature payload")?;
    r.finish()?;
    FeatureMatrix::new(n, dim, values)
}

pub fn save_labels(labels: &LabelVector, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + labels.n() * 4);
    buf.extend_from_slice(MAGIC_LABELS);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(labels.n() as u64).to_le_bytes());
    buf.extend_from_slice(&labels.num_classes().to_le_bytes());
    for &y in labels.labels() {
        buf.extend_from_slice(&y.to_le_bytes());
    }
    write_file(path.as_ref(), &buf)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    let mut r = Reader::open(path)?;
    r.expect_magic(MAGIC_LABELS)?;
    r.read_version()?;
    let n = r.read_u64("n")? as usize;
    let l = r.read_u32("l")?;
    let raw = r.take(n * 4, "label payload")?.to_vec();
    let labels: Vec<u32> = raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    r.finish()?;
    LabelVector::new(l, labels)
}

pub fn save_codes(codes: &CodeMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + codes.codes().len());
    buf.extend_from_slice(MAGIC_CODES);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(codes.n() as u64).to_le_bytes());
    buf.extend_from_slice(&(codes.m() as u32).to_le_bytes());
    buf.extend_from_slice(&(codes.h() as u32).to_le_bytes());
    buf.extend_from_slice(codes.codes());
    write_file(path.as_ref(), &buf)
}

pub fn load_codes(path: impl AsRef<Path>) -> Result<CodeMatrix> {
    let path = path.as_ref();
    let mut r = Reader::open(path)?;
    r.expect_magic(MAGIC_CODES)?;
    r.read_version()?;
    let n = r.read_u64("n")? as usize;
    let m = r.read_u32("m")? as usize;
    let h = r.read_u32("h")? as usize;
    let payload = r.take(n * m, "code payload")?.to_vec();
    r.finish()?;
    CodeMatrix::new(n, m, h, payload)
}

pub fn save_codebooks(books: &Codebooks, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + books.values().len() * 4);
    buf.extend_from_slice(MAGIC_CODEBOOKS);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(books.m() as u32).to_le_bytes());
    buf.extend_from_slice(&(books.h() as u32).to_le_bytes());
    buf.extend_from_slice(&(books.p() as u32).to_le_bytes());
    push_f32s(&mut buf, books.values());
    write_file(path.as_ref(), &buf)
}

pub fn load_codebooks(path: impl AsRef<Path>) -> Result<Codebooks> {
    let path = path.as_ref();
    let mut r = Reader::open(path)?;
    r.expect_magic(MAGIC_CODEBOOKS)?;
    r.read_version()?;
    let m = r.read_u32("m")? as usize;
    let h = r.read_u32("h")? as usize;
    let p = r.read_u32("p")? as usize;
    let values = r.read_f32s(m * h * p, "codebook payload")?;
    r.finish()?;
    Codebooks::new(m, h, p, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn zero_features_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("z.sqft");
        let m = FeatureMatrix::new(2, 3, vec![0.0; 6]).unwrap();
        save_features(&m, &path).unwrap();
        let back = load_features(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn truncated_features_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.sqft");
        let m = FeatureMatrix::new(2, 3, vec![1.0; 6]).unwrap();
        save_features(&m, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..20]).unwrap(); // header only
        match load_features(&path) {
            Err(Error::Format { reason, .. }) => {
                assert!(reason.contains("truncated payload"), "{reason}")
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.sqft");
        fs::write(&path, b"NOPE0000000000000000").unwrap();
        match load_features(&path) {
            Err(Error::Format { reason, .. }) => assert!(reason.contains("bad magic")),
            other => panic!("expected magic error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_entry_names_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("nan.sqft");
        let m = FeatureMatrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        save_features(&m, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        // second f32 of the payload starts at 20 + 4
        bytes[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        match load_features(&path) {
            Err(Error::Format { offset, reason, .. }) => {
                assert_eq!(offset, 24);
                assert!(reason.contains("non-finite"));
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn boundary_codes_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.sqcd");
        let c = CodeMatrix::new(1, 2, 256, vec![0, 255]).unwrap();
        save_codes(&c, &path).unwrap();
        assert_eq!(load_codes(&path).unwrap(), c);
    }

    #[test]
    fn small_codebooks_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("b.sqcb");
        let b = Codebooks::new(1, 2, 2, vec![1.0, -2.5, 0.25, 4.0]).unwrap();
        save_codebooks(&b, &path).unwrap();
        assert_eq!(load_codebooks(&path).unwrap(), b);
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("y.sqlb");
        let y = LabelVector::new(4, vec![0, 3, 1, 1]).unwrap();
        save_labels(&y, &path).unwrap();
        assert_eq!(load_labels(&path).unwrap(), y);
    }

    #[test]
    fn unwritable_path_errors() {
        let m = FeatureMatrix::new(1, 1, vec![1.0]).unwrap();
        match save_features(&m, "/nonexistent-dir/x.sqft") {
            Err(Error::Io { .. }) => {}
            other => panic!("expected i/o error, got {other:?}"),
        }
    }

    // File-level round trip: load(save(load(file))) is byte-identical. The
    // payload is f32 on disk, so containers built from f32-representable
    // values round-trip bit-exactly.
    proptest! {
        #[test]
        fn features_file_round_trip(vals in proptest::collection::vec(-1e6f32..1e6, 12)) {
            let dir = tempdir().unwrap();
            let p1 = dir.path().join("a.sqft");
            let p2 = dir.path().join("b.sqft");
            let m = FeatureMatrix::new(3, 4, vals.iter().map(|&v| v as f64).collect()).unwrap();
            save_features(&m, &p1).unwrap();
            let back = load_features(&p1).unwrap();
            prop_assert_eq!(&m, &back);
            save_features(&back, &p2).unwrap();
            prop_assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        }

        #[test]
        fn codes_file_round_trip(codes in proptest::collection::vec(0u8..16, 8)) {
            let dir = tempdir().unwrap();
            let p1 = dir.path().join("a.sqcd");
            let c = CodeMatrix::new(4, 2, 16, codes).unwrap();
            save_codes(&c, &p1).unwrap();
            prop_assert_eq!(load_codes(&p1).unwrap(), c);
        }
    }
}

//! Precomputed modal feature matrices in the `.fmat` binary format:
//! magic "FMAT1", u64 rows, u64 cols (little-endian), then rows·cols
//! 32-bit floats row-major.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::DenseMatrix;
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"FMAT1";

/// Per-modality raw item feature matrix E_i^m (|I|×d_m).
#[derive(Debug, Clone)]
pub struct ModalFeatureTable {
    pub modality: String,
    pub features: DenseMatrix,
}

pub fn load_modal_features(
    path: &Path,
    modality: &str,
    item_count: usize,
) -> Result<ModalFeatureTable> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic, not an FMAT1 file",
            path.display()
        )));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let rows = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf)?;
    let cols = u64::from_le_bytes(u64buf) as usize;
    if rows != item_count {
        return Err(Error::Data(format!(
            "{}: {} feature rows for {} items",
            path.display(),
            rows,
            item_count
        )));
    }
    if cols == 0 {
        return Err(Error::Data(format!("{}: zero feature dim", path.display())));
    }
    let mut values = Vec::with_capacity(rows * cols);
    let mut f32buf = [0u8; 4];
    for i in 0..rows * cols {
        r.read_exact(&mut f32buf).map_err(|_| {
            Error::Data(format!(
                "{}: truncated at value {} of {}",
                path.display(),
                i,
                rows * cols
            ))
        })?;
        let v = f32::from_le_bytes(f32buf) as f64;
        if !v.is_finite() {
            return Err(Error::Data(format!(
                "{}: non-finite value at index {}",
                path.display(),
                i
            )));
        }
        values.push(v);
    }
    Ok(ModalFeatureTable {
        modality: modality.to_string(),
        features: DenseMatrix::from_values(rows, cols, values)?,
    })
}

pub fn save_modal_features(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(m.rows as u64).to_le_bytes())?;
    w.write_all(&(m.cols as u64).to_le_bytes())?;
    for &v in &m.values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

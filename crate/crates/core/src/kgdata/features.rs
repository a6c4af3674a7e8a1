//! Per-entity modality feature vectors and the RVEC1 binary format.
//!
//! RVEC1 layout: 8-byte magic "RADDVEC1"; u32 LE entity_count, dim, flags
//! (bit 0 = presence mask included); entity_count presence bytes when
//! flagged (1 = present); then, for each present entity in id order, dim
//! f32 LE values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{RaddError, Result};

const MAGIC: &[u8; 8] = b"RADDVEC1";
const FLAG_PRESENCE_MASK: u32 = 1;

/// Raw feature vectors for one modality. Absent entities carry an explicit
/// flag; their storage rows are never read.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeatures {
    dim: usize,
    present: Vec<bool>,
    data: Vec<f32>, // n_entities x dim, zero-filled where absent
}

impl ModalityFeatures {
    pub fn new_absent(n_entities: usize, dim: usize) -> Self {
        ModalityFeatures {
            dim,
            present: vec![false; n_entities],
            data: vec![0.0; n_entities * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_entities(&self) -> usize {
        self.present.len()
    }

    pub fn n_present(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn is_present(&self, entity: usize) -> bool {
        self.present[entity]
    }

    pub fn set(&mut self, entity: usize, values: &[f32]) -> Result<()> {
        if values.len() != self.dim {
            return Err(RaddError::DimMismatch(format!(
                "feature vector length {} expected {}",
                values.len(),
                self.dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RaddError::NonFinite(format!("feature vector of entity {entity}")));
        }
        self.present[entity] = true;
        self.data[entity * self.dim..(entity + 1) * self.dim].copy_from_slice(values);
        Ok(())
    }

    /// The vector when present.
    pub fn get(&self, entity: usize) -> Option<&[f32]> {
        if self.present[entity] {
            Some(&self.data[entity * self.dim..(entity + 1) * self.dim])
        } else {
            None
        }
    }
}

/// Visual and textual feature stores for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeatureStore {
    pub visual: ModalityFeatures,
    pub textual: ModalityFeatures,
}

impl ModalityFeatureStore {
    /// A store with both modalities absent everywhere (structure-only runs).
    pub fn empty(n_entities: usize) -> Self {
        ModalityFeatureStore {
            visual: ModalityFeatures::new_absent(n_entities, 0),
            textual: ModalityFeatures::new_absent(n_entities, 0),
        }
    }
}

/// Writes one modality in the RVEC1 format. The presence mask is always
/// included so identical stores serialize to identical bytes.
pub fn write_rvec1(path: &Path, features: &ModalityFeatures) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| RaddError::io(path, e))?,
    );
    let werr = |e| RaddError::io(path, e);
    out.write_all(MAGIC).map_err(werr)?;
    out.write_all(&(features.n_entities() as u32).to_le_bytes())
        .map_err(werr)?;
    out.write_all(&(features.dim as u32).to_le_bytes()).map_err(werr)?;
    out.write_all(&FLAG_PRESENCE_MASK.to_le_bytes()).map_err(werr)?;
    for &p in &features.present {
        out.write_all(&[p as u8]).map_err(werr)?;
    }
    for (e, &p) in features.present.iter().enumerate() {
        if p {
            for &v in &features.data[e * features.dim..(e + 1) * features.dim] {
                out.write_all(&v.to_le_bytes()).map_err(werr)?;
            }
        }
    }
    Ok(())
}

/// Reads one modality, checking the header against `expected_count`.
pub fn load_features(path: &Path, expected_count: usize) -> Result<ModalityFeatures> {
    let mut file = std::io::BufReader::new(
        std::fs::File::open(path).map_err(|e| RaddError::io(path, e))?,
    );
    let bad = |reason: &str| RaddError::FeatureFile {
        path: path.into(),
        reason: reason.to_owned(),
    };
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic, not an RVEC1 file"));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |file: &mut dyn Read| -> Result<u32> {
        file.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let count = read_u32(&mut file)? as usize;
    let dim = read_u32(&mut file)? as usize;
    let flags = read_u32(&mut file)?;
    if count != expected_count {
        return Err(bad(&format!(
            "entity count {count} does not match expected {expected_count}"
        )));
    }
    let present: Vec<bool> = if flags & FLAG_PRESENCE_MASK != 0 {
        let mut mask = vec![0u8; count];
        file.read_exact(&mut mask).map_err(|_| bad("truncated presence mask"))?;
        mask.into_iter().map(|b| b != 0).collect()
    } else {
        vec![true; count]
    };
    let mut features = ModalityFeatures::new_absent(count, dim);
    let mut row = vec![0f32; dim];
    for e in 0..count {
        if !present[e] {
            continue;
        }
        for v in row.iter_mut() {
            let mut b = [0u8; 4];
            file.read_exact(&mut b).map_err(|_| bad("truncated payload"))?;
            *v = f32::from_le_bytes(b);
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(RaddError::NonFiniteFeature {
                path: path.into(),
                entity: e,
            });
        }
        features.set(e, &row)?;
    }
    let mut rest = [0u8; 1];
    if file.read(&mut rest).map_err(|e| RaddError::io(path, e))? != 0 {
        return Err(bad("trailing bytes after payload"));
    }
    Ok(features)
}

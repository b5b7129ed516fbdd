//! Fold directory layout:
//!
//! ```text
//! meta.json          schema, shapes, seed, fold table
//! modality_<m>.bin   little-endian f32, row-major [N, C_m, T_m]
//! labels.bin         little-endian i32 [N]
//! ids.bin            little-endian i64 [N]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FoldSpec, ModalityArray, MultimodalDataset};
use crate::error::{Error, Result};
use crate::model::ModalityShape;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub num_modalities: usize,
    pub num_samples: usize,
    pub num_classes: usize,
    pub modalities: Vec<ModalityShape>,
    pub seed: u64,
    #[serde(default)]
    pub folds: Vec<FoldSpec>,
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: PathBuf) -> Result<(PathBuf, Vec<u8>)> {
    match fs::read(&path) {
        Ok(b) => Ok((path, b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::format(path, 0, "file is missing")),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn check_len(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() != expected {
        let offset = bytes.len().min(expected) as u64;
        return Err(Error::format(
            path,
            offset,
            format!("expected {expected} bytes from header shapes, found {}", bytes.len()),
        ));
    }
    Ok(())
}

/// Writes the dataset plus an optional fold table.
pub fn save_dataset(dir: &Path, dataset: &MultimodalDataset, folds: &[FoldSpec], seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = dataset.len();
    for f in folds {
        if let Some(&bad) = f.train.iter().chain(&f.val).chain(&f.test).find(|&&j| j >= n) {
            return Err(Error::config(format!("fold {} references index {bad} >= {n}", f.fold_index)));
        }
    }
    let meta = DatasetMeta {
        schema_version: SCHEMA_VERSION,
        num_modalities: dataset.num_modalities(),
        num_samples: n,
        num_classes: dataset.num_classes(),
        modalities: dataset.shapes(),
        seed,
        folds: folds.to_vec(),
    };
    let json = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    write(dir.join("meta.json"), &json)?;
    for (m, arr) in dataset.modalities().iter().enumerate() {
        let bytes: Vec<u8> = arr.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        write(dir.join(format!("modality_{m}.bin")), &bytes)?;
    }
    let labels: Vec<u8> = dataset.labels().iter().flat_map(|&y| (y as i32).to_le_bytes()).collect();
    write(dir.join("labels.bin"), &labels)?;
    let ids: Vec<u8> = dataset.sample_ids().iter().flat_map(|v| v.to_le_bytes()).collect();
    write(dir.join("ids.bin"), &ids)
}

pub fn save_folds(dataset: &MultimodalDataset, folds: &[FoldSpec], dir: &Path, seed: u64) -> Result<()> {
    save_dataset(dir, dataset, folds, seed)
}

fn json_offset(text: &[u8], line: usize, column: usize) -> u64 {
    let mut offset = 0;
    for (i, l) in text.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)) as u64;
        }
        offset += l.len() + 1;
    }
    text.len() as u64
}

pub fn load_dataset(dir: &Path) -> Result<(MultimodalDataset, DatasetMeta)> {
    let (meta_path, text) = read(dir.join("meta.json"))?;
    let meta: DatasetMeta = serde_json::from_slice(&text)
        .map_err(|e| Error::format(&meta_path, json_offset(&text, e.line(), e.column()), e.to_string()))?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::format(
            &meta_path,
            0,
            format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", meta.schema_version),
        ));
    }
    if meta.modalities.len() != meta.num_modalities {
        return Err(Error::format(&meta_path, 0, "num_modalities disagrees with modality shape list"));
    }
    let n = meta.num_samples;

    let mut arrays = Vec::with_capacity(meta.num_modalities);
    for (m, shape) in meta.modalities.iter().enumerate() {
        let (path, bytes) = read(dir.join(format!("modality_{m}.bin")))?;
        check_len(&path, &bytes, n * shape.channels * shape.timesteps * 4)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        arrays.push(ModalityArray { channels: shape.channels, timesteps: shape.timesteps, data });
    }

    let (path, bytes) = read(dir.join("labels.bin"))?;
    check_len(&path, &bytes, n * 4)?;
    let mut labels = Vec::with_capacity(n);
    for (j, c) in bytes.chunks_exact(4).enumerate() {
        let y = i32::from_le_bytes(c.try_into().unwrap());
        if y < 0 || y as usize >= meta.num_classes {
            return Err(Error::format(&path, (j * 4) as u64, format!("label {y} outside {} classes", meta.num_classes)));
        }
        labels.push(y as u32);
    }

    let (path, bytes) = read(dir.join("ids.bin"))?;
    check_len(&path, &bytes, n * 8)?;
    let ids = bytes.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect();

    for f in &meta.folds {
        if let Some(&bad) = f.train.iter().chain(&f.val).chain(&f.test).find(|&&j| j >= n) {
            return Err(Error::format(&meta_path, 0, format!("fold {} references index {bad} >= {n}", f.fold_index)));
        }
    }
    let dataset = MultimodalDataset::new(arrays, labels, ids, meta.num_classes)
        .map_err(|e| Error::format(dir, 0, e.to_string()))?;
    Ok((dataset, meta))
}

/// `(train, val, test)` for fold `i` of a saved fold directory.
pub fn load_fold(dir: &Path, i: usize) -> Result<(MultimodalDataset, MultimodalDataset, MultimodalDataset)> {
    let (dataset, meta) = load_dataset(dir)?;
    let fold = meta
        .folds
        .iter()
        .find(|f| f.fold_index == i)
        .ok_or_else(|| Error::format(dir.join("meta.json"), 0, format!("no fold {i} in fold table")))?;
    Ok((dataset.subset(&fold.train)?, dataset.subset(&fold.val)?, dataset.subset(&fold.test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, make_folds, SyntheticSpec};

    fn sample() -> MultimodalDataset {
        generate_synthetic(&SyntheticSpec {
            modalities: 2,
            samples: 45,
            classes: 3,
            channels: 2,
            timesteps: 5,
            separability: 1.0,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_and_fold_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample();
        let folds = make_folds(d.len(), 7).unwrap();
        save_folds(&d, &folds, dir.path(), 7).unwrap();
        let (back, meta) = load_dataset(dir.path()).unwrap();
        assert_eq!(back, d);
        assert_eq!(meta.folds, folds);
        assert_eq!(meta.seed, 7);
        let (train, val, test) = load_fold(dir.path(), 3).unwrap();
        assert_eq!(val.len(), 4);
        assert_eq!(test.len(), 4);
        assert_eq!(train.len(), 37);
        assert_eq!(val, d.subset(&folds[3].val).unwrap());
    }

    #[test]
    fn modality_blob_layout_is_le_f32_row_major() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample();
        save_dataset(dir.path(), &d, &[], 0).unwrap();
        let bytes = fs::read(dir.path().join("modality_1.bin")).unwrap();
        let m = &d.modalities()[1];
        // sample 2, channel 1, timestep 3
        let flat = (2 * m.channels + 1) * m.timesteps + 3;
        let v = f32::from_le_bytes(bytes[flat * 4..flat * 4 + 4].try_into().unwrap());
        assert_eq!(v, m.data[flat]);
        let ids = fs::read(dir.path().join("ids.bin")).unwrap();
        assert_eq!(i64::from_le_bytes(ids[8..16].try_into().unwrap()), 1);
    }

    #[test]
    fn truncated_blob_is_rejected_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &sample(), &[], 0).unwrap();
        let p = dir.path().join("modality_0.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 6);
        fs::write(&p, &bytes).unwrap();
        match load_dataset(dir.path()).unwrap_err() {
            Error::Format { file, offset, .. } => {
                assert!(file.ends_with("modality_0.bin"));
                assert_eq!(offset, bytes.len() as u64);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_and_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let e = load_dataset(dir.path()).unwrap_err();
        assert_eq!(e.class(), "format-error");
        assert!(e.to_string().contains("meta.json"));

        save_dataset(dir.path(), &sample(), &[], 0).unwrap();
        fs::write(dir.path().join("meta.json"), b"{\n  \"schema_version\": 1,\n  oops").unwrap();
        match load_dataset(dir.path()).unwrap_err() {
            Error::Format { offset, .. } => assert!(offset > 20),
            e => panic!("unexpected {e}"),
        }

        save_dataset(dir.path(), &sample(), &[], 0).unwrap();
        fs::remove_file(dir.path().join("labels.bin")).unwrap();
        let e = load_dataset(dir.path()).unwrap_err();
        assert!(e.to_string().contains("labels.bin"), "{e}");
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &sample(), &[], 0).unwrap();
        let p = dir.path().join("labels.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes[8..12].copy_from_slice(&7i32.to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        match load_dataset(dir.path()).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 8),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_fold() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &sample(), &[], 0).unwrap();
        assert_eq!(load_fold(dir.path(), 0).unwrap_err().class(), "format-error");
    }
}

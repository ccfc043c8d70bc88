use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const MAGIC: &[u8; 8] = b"SLIMFEAT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 8 + 8;

/// Element type stored in a feature file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u32 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Sidecar metadata stored next to a feature file as `<file>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub dtype: Dtype,
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

impl FeatureMeta {
    pub fn new(dtype: Dtype) -> Self {
        Self {
            dtype,
            rows: 0,
            cols: 0,
            width: None,
            split: None,
            labels: None,
            extra: serde_json::Value::Null,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `data` row-major little-endian plus the JSON sidecar. `rows` and
/// `cols` in `meta` are overwritten from the matrix.
pub fn write_features(path: &Path, data: &Array2<f64>, meta: &FeatureMeta) -> Result<()> {
    let mut meta = meta.clone();
    meta.rows = data.nrows();
    meta.cols = data.ncols();
    if let Some(l) = &meta.labels {
        if l.len() != meta.rows {
            return Err(invalid!("{} labels for {} rows", l.len(), meta.rows));
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&meta.dtype.code().to_le_bytes()).map_err(io)?;
    w.write_all(&(meta.rows as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(meta.cols as u64).to_le_bytes()).map_err(io)?;
    for v in data.iter() {
        match meta.dtype {
            Dtype::F32 => w.write_all(&(*v as f32).to_le_bytes()),
            Dtype::F64 => w.write_all(&v.to_le_bytes()),
        }
        .map_err(io)?;
    }
    w.flush().map_err(io)?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

/// Reads a feature file; the sidecar is optional and only its descriptive
/// fields are used (shape and dtype come from the binary header).
pub fn read_features(path: &Path) -> Result<(Array2<f64>, FeatureMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a feature file (bad magic)"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported feature file version {version}")));
    }
    let dtype = match u32_at(12) {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(Error::format(path, format!("unknown dtype code {other}"))),
    };
    let rows = u64_at(16) as usize;
    let cols = u64_at(24) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(dtype.size()))
        .ok_or_else(|| Error::format(path, "shape overflows"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(Error::format(path, format!("expected {expected} data bytes, found {}", body.len())));
    }
    let values: Vec<f64> = match dtype {
        Dtype::F32 => body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        Dtype::F64 => body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    let data = Array2::from_shape_vec((rows, cols), values).expect("length checked");
    let side = sidecar_path(path);
    let mut meta = if side.exists() {
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?
    } else {
        FeatureMeta::new(dtype)
    };
    meta.dtype = dtype;
    meta.rows = rows;
    meta.cols = cols;
    if let Some(l) = &meta.labels {
        if l.len() != rows {
            return Err(Error::format(&side, format!("{} labels for {rows} rows", l.len())));
        }
    }
    Ok((data, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn roundtrip_both_dtypes() {
        let dir = tempfile::tempdir().unwrap();
        let data = array![[1.0, -2.5, 3.25], [0.1, 0.2, 0.3]];
        for dtype in [Dtype::F32, Dtype::F64] {
            let path = dir.path().join(format!("{dtype:?}.feat"));
            let mut meta = FeatureMeta::new(dtype);
            meta.labels = Some(vec![4, 7]);
            meta.width = Some(0.5);
            write_features(&path, &data, &meta).unwrap();
            let (back, m) = read_features(&path).unwrap();
            assert_eq!(m.rows, 2);
            assert_eq!(m.labels, Some(vec![4, 7]));
            let tol = if dtype == Dtype::F32 { 1e-6 } else { 0.0 };
            assert!((back - &data).iter().all(|v| v.abs() <= tol));
            let len = fs::metadata(&path).unwrap().len() as usize;
            assert_eq!(len, HEADER_LEN + 6 * dtype.size());
        }
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.feat");
        fs::write(&path, b"NOTAFEATFILE").unwrap();
        assert!(matches!(read_features(&path), Err(Error::Format { .. })));
        write_features(&path, &array![[1.0, 2.0]], &FeatureMeta::new(Dtype::F64)).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_features(&path), Err(Error::Format { .. })));
        assert!(matches!(read_features(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}

//! Frozen feature-matrix artifacts.
//!
//! Binary layout, little-endian: magic `TAPEFM1`, u64 row count, u64 column
//! count, then rows*cols f32 values row-major. A JSON sidecar at
//! `<path>.json` names the source ("orig" | "expl" | "pred"), the seed, and
//! the config hash that produced the matrix.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ioutil::write_atomic;
use crate::numeric::DenseMatrix;

pub const FEATURE_MAGIC: &[u8; 7] = b"TAPEFM1";

#[derive(Debug, Error)]
pub enum FeatureIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic, not a feature matrix file")]
    BadMagic { path: PathBuf },
    #[error("{path}: truncated, expected {expected} bytes of data, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: sidecar: {source}")]
    Sidecar {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("feature matrix has non-finite entries")]
    NonFinite,
    #[error("unknown feature source {0:?}")]
    UnknownSource(String),
}

/// Which text/prediction stream a feature matrix was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Orig,
    Expl,
    Pred,
}

impl FeatureSource {
    pub const ALL: [FeatureSource; 3] =
        [FeatureSource::Orig, FeatureSource::Expl, FeatureSource::Pred];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSource::Orig => "orig",
            FeatureSource::Expl => "expl",
            FeatureSource::Pred => "pred",
        }
    }
}

impl fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSource {
    type Err = FeatureIoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "orig" => Ok(FeatureSource::Orig),
            "expl" => Ok(FeatureSource::Expl),
            "pred" => Ok(FeatureSource::Pred),
            other => Err(FeatureIoError::UnknownSource(other.to_string())),
        }
    }
}

/// Provenance recorded next to every feature matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub source: FeatureSource,
    pub seed: u64,
    pub config_hash: String,
}

pub fn write_feature_matrix(
    path: &Path,
    matrix: &DenseMatrix,
    sidecar: &FeatureSidecar,
) -> Result<(), FeatureIoError> {
    matrix
        .check_finite("write_feature_matrix")
        .map_err(|_| FeatureIoError::NonFinite)?;
    let mut bytes = Vec::with_capacity(7 + 16 + matrix.data().len() * 4);
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&(matrix.rows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(matrix.cols() as u64).to_le_bytes());
    for v in matrix.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes).map_err(|e| FeatureIoError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let sidecar_path = sidecar_path(path);
    let body = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    write_atomic(&sidecar_path, body.as_bytes()).map_err(|e| FeatureIoError::Io {
        path: sidecar_path.clone(),
        source: e,
    })
}

pub fn read_feature_matrix(
    path: &Path,
) -> Result<(DenseMatrix, Option<FeatureSidecar>), FeatureIoError> {
    let bytes = fs::read(path).map_err(|e| FeatureIoError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if bytes.len() < 7 + 16 || &bytes[..7] != FEATURE_MAGIC {
        return Err(FeatureIoError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let rows = u64::from_le_bytes(bytes[7..15].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[15..23].try_into().expect("8 bytes")) as usize;
    let expected = rows * cols * 4;
    let data_bytes = &bytes[23..];
    if data_bytes.len() != expected {
        return Err(FeatureIoError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: data_bytes.len(),
        });
    }
    let data: Vec<f32> = data_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let matrix =
        DenseMatrix::from_vec(rows, cols, data).map_err(|_| FeatureIoError::NonFinite)?;

    let sc_path = sidecar_path(path);
    let sidecar = if sc_path.exists() {
        let body = fs::read_to_string(&sc_path).map_err(|e| FeatureIoError::Io {
            path: sc_path.clone(),
            source: e,
        })?;
        Some(
            serde_json::from_str(&body).map_err(|e| FeatureIoError::Sidecar {
                path: sc_path,
                source: e,
            })?,
        )
    } else {
        None
    };
    Ok((matrix, sidecar))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

//! Versioned JSON container for fitted models.
//!
//! ```json
//! {"format": "mvstack-model/1", "created_unix": 1700000000, "model": {...}}
//! ```
//!
//! Floats are written with enough digits to round-trip exactly, so a loaded
//! model predicts bit-identically to the one that was saved. Missing entries
//! of the stored Z matrices are written as `null`.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stacking::MvsModel;

pub const FORMAT: &str = "mvstack-model/1";

#[derive(Serialize, Deserialize)]
struct Container<M> {
    format: String,
    /// Seconds since the Unix epoch when the file was written.
    created_unix: u64,
    model: M,
}

pub fn to_string(model: &MvsModel) -> Result<String> {
    let created_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(serde_json::to_string_pretty(&Container {
        format: FORMAT.to_string(),
        created_unix,
        model,
    })?)
}

pub fn from_str(text: &str) -> Result<MvsModel> {
    #[derive(Deserialize)]
    struct Header {
        format: Option<String>,
    }
    let header: Header = serde_json::from_str(text)?;
    match header.format.as_deref() {
        Some(FORMAT) => {}
        Some(other) => {
            return Err(Error::Version(format!(
                "'{other}' (this build reads '{FORMAT}')"
            )))
        }
        None => {
            return Err(Error::Version(format!(
                "no format field (this build reads '{FORMAT}')"
            )))
        }
    }
    let c: Container<MvsModel> = serde_json::from_str(text)?;
    Ok(c.model)
}

pub fn save(model: &MvsModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_string(model)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<MvsModel> {
    from_str(&fs::read_to_string(path)?)
}

/// Serde helpers for an optional matrix that may contain NaN markers.
pub mod nan_matrix {
    use ndarray::Array2;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<Option<f64>>,
    }

    pub fn serialize<S: Serializer>(m: &Option<Array2<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref()
            .map(|m| Repr {
                rows: m.nrows(),
                cols: m.ncols(),
                data: m
                    .iter()
                    .map(|v| if v.is_nan() { None } else { Some(*v) })
                    .collect(),
            })
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Array2<f64>>, D::Error> {
        let Some(r) = Option::<Repr>::deserialize(d)? else {
            return Ok(None);
        };
        let data = r.data.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        Array2::from_shape_vec((r.rows, r.cols), data)
            .map(Some)
            .map_err(D::Error::custom)
    }
}

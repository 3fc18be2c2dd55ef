//! Corpus ingestion: the label index, class distribution stats and
//! clothing-to-gender derivation.
//!
//! The index is a comma-separated file with header columns `image_id`,
//! `clothing`, `gender` (Female or Male); each image id names a raster file
//! inside the corpus directory.

mod augment;
mod batch;
mod image;
mod split;

pub use augment::{augment, AugmentConfig};
pub use batch::{Batch, BatchConfig, BatchIter, DataSource};
pub use image::load_image;
pub use split::{stratified_split, SplitAssignment};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    /// Class index: alphabetical, Female = 0, Male = 1. The classifier's
    /// sigmoid output is the probability of index 1.
    pub fn index(self) -> usize {
        match self {
            Gender::Female => 0,
            Gender::Male => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "Female",
            Gender::Male => "Male",
        }
    }

    pub fn parse(s: &str) -> Option<Gender> {
        match s {
            "Female" => Some(Gender::Female),
            "Male" => Some(Gender::Male),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One record of the label index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexRow {
    pub image_id: String,
    pub clothing: String,
    pub gender: Gender,
}

/// Load and validate the label index.
pub fn load_index(path: &Path) -> Result<Vec<IndexRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let column = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Validation(format!("index file missing column '{name}'"))
        })
    };
    let id_col = column("image_id")?;
    let clothing_col = column("clothing")?;
    let gender_col = column("gender")?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_num = i + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = |col: usize, name: &str| -> Result<&str> {
            record.get(col).ok_or_else(|| {
                Error::Validation(format!("row {row_num}: missing '{name}' value"))
            })
        };
        let gender_raw = field(gender_col, "gender")?;
        let gender = Gender::parse(gender_raw).ok_or_else(|| {
            Error::Validation(format!("row {row_num}: unknown gender '{gender_raw}'"))
        })?;
        rows.push(IndexRow {
            image_id: field(id_col, "image_id")?.to_string(),
            clothing: field(clothing_col, "clothing")?.to_string(),
            gender,
        });
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Validation(format!("{}: {e}", path.display()))
    }
}

/// Per-gender counts and fractions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassDistribution {
    pub counts: [usize; 2],
}

impl ClassDistribution {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn count(&self, gender: Gender) -> usize {
        self.counts[gender.index()]
    }

    pub fn fraction(&self, gender: Gender) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.count(gender) as f64 / total as f64
        }
    }
}

pub fn class_distribution(rows: &[IndexRow]) -> ClassDistribution {
    let mut counts = [0usize; 2];
    for row in rows {
        counts[row.gender.index()] += 1;
    }
    ClassDistribution { counts }
}

/// Fill (or override) each row's gender from a clothing-to-gender mapping.
/// Every clothing value present must be mapped.
pub fn derive_gender(
    rows: &[IndexRow],
    mapping: &BTreeMap<String, Gender>,
) -> Result<Vec<IndexRow>> {
    rows.iter()
        .map(|row| {
            let gender = mapping.get(&row.clothing).copied().ok_or_else(|| {
                Error::Validation(format!(
                    "no gender mapping for clothing '{}'",
                    row.clothing
                ))
            })?;
            Ok(IndexRow {
                gender,
                ..row.clone()
            })
        })
        .collect()
}

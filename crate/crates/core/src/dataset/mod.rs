//! Labeled samples, the synthetic benchmark, and CSV storage.

mod benchmark;
mod csv_io;

use std::collections::{BTreeMap, BTreeSet};

pub use benchmark::{generate_benchmark, Benchmark, BenchmarkSpec, DomainTransform, Rotation, SOURCE_DOMAIN};
pub use csv_io::{load_csv, read_csv, save_csv, write_csv};

use crate::error::{Error, Result};
use crate::geometry::ClassId;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: u64,
    pub features: Vec<f64>,
    pub class_id: ClassId,
    pub domain: String,
}

/// Immutable collection of samples sharing one feature width.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataSet {
    samples: Vec<LabeledSample>,
}

impl DataSet {
    pub fn new(samples: Vec<LabeledSample>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        let width = samples.first().map(|s| s.features.len());
        for s in &samples {
            if Some(s.features.len()) != width {
                return Err(Error::Schema(format!(
                    "sample {} has {} features, expected {}",
                    s.id,
                    s.features.len(),
                    width.unwrap_or(0)
                )));
            }
            if !s.features.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(format!("sample {} has a non-finite feature", s.id)));
            }
            if !ids.insert(s.id) {
                return Err(Error::Schema(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature width, `None` when empty.
    pub fn dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.features.len())
    }

    pub fn classes(&self) -> BTreeSet<ClassId> {
        self.samples.iter().map(|s| s.class_id).collect()
    }

    pub fn class_counts(&self) -> BTreeMap<ClassId, usize> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            *out.entry(s.class_id).or_insert(0) += 1;
        }
        out
    }

    pub fn domains(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.domain.as_str()).collect()
    }
}

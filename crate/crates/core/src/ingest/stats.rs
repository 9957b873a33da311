//! Dataset summaries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{DatasetSchema, Layout};

/// Number of equal-width bins of `sqrt(w * h)` in the size histogram.
pub const SIZE_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_layouts: usize,
    pub n_components: usize,
    pub class_histogram: BTreeMap<String, u64>,
    /// `count_histogram[n]` = layouts with `n` components, `n in 0..=n_max`.
    pub count_histogram: Vec<u64>,
    /// Component sizes `sqrt(w * h)` binned over `[0, 1]`.
    pub size_histogram: Vec<u64>,
}

pub fn dataset_stats(layouts: &[Layout], schema: &DatasetSchema) -> Result<DatasetStats> {
    if layouts.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let mut class_histogram: BTreeMap<String, u64> = BTreeMap::new();
    let mut count_histogram = vec![0; schema.n_max + 1];
    let mut size_histogram = vec![0; SIZE_BINS];
    let mut n_components = 0;
    for l in layouts {
        l.validate(schema)?;
        count_histogram[l.len()] += 1;
        for c in &l.components {
            n_components += 1;
            *class_histogram.entry(schema.classes[c.class].clone()).or_default() += 1;
            let s = (c.bbox.w * c.bbox.h).sqrt();
            size_histogram[((s * SIZE_BINS as f64) as usize).min(SIZE_BINS - 1)] += 1;
        }
    }
    Ok(DatasetStats {
        n_layouts: layouts.len(),
        n_components,
        class_histogram,
        count_histogram,
        size_histogram,
    })
}

/// `train.jsonl` -> `train.stats.json`.
pub fn stats_path(dataset: &Path) -> PathBuf {
    let stem = dataset.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    dataset.with_file_name(format!("{stem}.stats.json"))
}

pub fn write_stats(dataset: &Path, stats: &DatasetStats) -> Result<PathBuf> {
    let path = stats_path(dataset);
    std::fs::write(&path, serde_json::to_string_pretty(stats)?)?;
    Ok(path)
}

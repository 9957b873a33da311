//! Conversion of external annotation dumps into canonical JSON Lines,
//! with filtering, deterministic splits and dataset statistics.
//!
//! Filter rules, applied in this order:
//! - `degenerate_box` (per component): box has no area after clipping to the canvas;
//! - `empty`: no component survived;
//! - `class_not_in_schema`: a component class outside the schema (for RICO, outside the top 13);
//! - `too_many_components`: more than `n_max` components.

pub mod adapters;
pub mod stats;
pub mod synth;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layout::{normalize, write_jsonl, AbsBox, DatasetSchema, Layout, N_MAX};

pub use stats::{dataset_stats, DatasetStats};
pub use synth::{synth, Profile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adapter {
    Rico,
    Publaynet,
    Magazine,
    Canonical,
}

/// Train/val/test fractions used when no official split is available.
pub const DEFAULT_RATIOS: [f64; 3] = [0.85, 0.05, 0.10];

/// Deterministic split from the SHA-256 of a stable identifier.
pub fn hash_split(id: &str, ratios: [f64; 3]) -> Split {
    let digest = Sha256::digest(id.as_bytes());
    let v = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    let u = v as f64 / 2f64.powi(64);
    let total = ratios[0] + ratios[1] + ratios[2];
    if u < ratios[0] / total {
        Split::Train
    } else if u < (ratios[0] + ratios[1]) / total {
        Split::Val
    } else {
        Split::Test
    }
}

/// A source layout before filtering: pixel boxes with class names.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLayout {
    pub id: String,
    pub canvas: [u32; 2],
    pub components: Vec<(String, AbsBox)>,
    /// Official split, when the source provides one.
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub input_layouts: usize,
    pub kept_layouts: usize,
    pub dropped_layouts: BTreeMap<String, usize>,
    pub dropped_components: BTreeMap<String, usize>,
    pub split_counts: BTreeMap<String, usize>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    pub schema: DatasetSchema,
    pub splits: BTreeMap<Split, Vec<Layout>>,
    pub report: IngestReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub ratios: [f64; 3],
    pub n_max: usize,
    /// Required by the canonical adapter when the source has no `schema.json`.
    pub schema: Option<DatasetSchema>,
    /// JSON object mapping `train`/`val`/`test` to lists of layout ids.
    pub split_manifest: Option<std::path::PathBuf>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            ratios: DEFAULT_RATIOS,
            n_max: N_MAX,
            schema: None,
            split_manifest: None,
        }
    }
}

fn clip(b: AbsBox, canvas: [u32; 2]) -> Option<AbsBox> {
    let (w, h) = (canvas[0] as f64, canvas[1] as f64);
    let x0 = b.x.max(0.0);
    let y0 = b.y.max(0.0);
    let x1 = (b.x + b.w).min(w);
    let y1 = (b.y + b.h).min(h);
    // A box must keep at least one millionth of the canvas on each axis to
    // survive six-decimal serialization.
    if !(x1 - x0 >= w * 1e-6 && y1 - y0 >= h * 1e-6) {
        return None;
    }
    Some(AbsBox {
        x: x0,
        y: y0,
        w: x1 - x0,
        h: y1 - y0,
    })
}

fn bump(map: &mut BTreeMap<String, usize>, key: &str) {
    *map.entry(key.to_string()).or_default() += 1;
}

/// Filter, normalize and split raw layouts against a schema.
pub fn process(mut raws: Vec<RawLayout>, schema: &DatasetSchema, ratios: [f64; 3]) -> Result<IngestOutput> {
    raws.sort_by(|a, b| a.id.cmp(&b.id));
    let mut report = IngestReport {
        input_layouts: raws.len(),
        ..Default::default()
    };
    let mut splits: BTreeMap<Split, Vec<Layout>> = Split::ALL.iter().map(|&s| (s, Vec::new())).collect();
    'layouts: for raw in raws {
        if raw.canvas[0] == 0 || raw.canvas[1] == 0 {
            bump(&mut report.dropped_layouts, "empty");
            continue;
        }
        let mut comps = Vec::with_capacity(raw.components.len());
        for (name, b) in &raw.components {
            match clip(*b, raw.canvas) {
                Some(c) => comps.push((name.as_str(), c)),
                None => bump(&mut report.dropped_components, "degenerate_box"),
            }
        }
        if comps.is_empty() {
            bump(&mut report.dropped_layouts, "empty");
            continue;
        }
        let mut indexed = Vec::with_capacity(comps.len());
        for (name, b) in comps {
            match schema.class_index(name) {
                Ok(i) => indexed.push((i, b)),
                Err(_) => {
                    bump(&mut report.dropped_layouts, "class_not_in_schema");
                    continue 'layouts;
                }
            }
        }
        if indexed.len() > schema.n_max {
            bump(&mut report.dropped_layouts, "too_many_components");
            continue;
        }
        let layout = normalize(raw.canvas, &indexed)?;
        layout.validate(schema)?;
        let split = raw.split.unwrap_or_else(|| hash_split(&raw.id, ratios));
        splits.get_mut(&split).expect("all splits present").push(layout);
        report.kept_layouts += 1;
    }
    for (s, v) in &splits {
        report.split_counts.insert(s.name().to_string(), v.len());
    }
    Ok(IngestOutput {
        schema: schema.clone(),
        splits,
        report,
    })
}

/// Most frequent canvas, ties broken by the smaller size.
pub fn modal_canvas<'a>(canvases: impl Iterator<Item = &'a [u32; 2]>) -> Option<[u32; 2]> {
    let mut counts: BTreeMap<[u32; 2], usize> = BTreeMap::new();
    for c in canvases {
        *counts.entry(*c).or_default() += 1;
    }
    counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(c, _)| c)
}

pub fn ingest(source: &Path, adapter: Adapter, opts: &IngestOptions) -> Result<IngestOutput> {
    let manifest = match &opts.split_manifest {
        Some(p) => Some(adapters::read_split_manifest(p)?),
        None => None,
    };
    let (mut raws, schema, notes) = match adapter {
        Adapter::Publaynet => adapters::publaynet(source, opts.n_max)?,
        Adapter::Rico => adapters::rico(source, opts.n_max)?,
        Adapter::Magazine => adapters::magazine(source, opts.n_max)?,
        Adapter::Canonical => adapters::canonical(source, opts.schema.as_ref())?,
    };
    if let Some(m) = manifest {
        for r in &mut raws {
            if let Some(s) = m.get(&r.id) {
                r.split = Some(*s);
            }
        }
    }
    let mut out = process(raws, &schema, opts.ratios)?;
    out.report.notes = notes;
    for (rule, n) in &out.report.dropped_layouts {
        log::info!("dropped {n} layouts: {rule}");
    }
    for (rule, n) in &out.report.dropped_components {
        log::info!("dropped {n} components: {rule}");
    }
    Ok(out)
}

/// Write `{train,val,test}.jsonl`, `schema.json`, `ingest_report.json`
/// and a `.stats.json` file next to every split.
pub fn write_dataset(dir: &Path, out: &IngestOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("schema.json"), serde_json::to_string_pretty(&out.schema)?)?;
    std::fs::write(dir.join("ingest_report.json"), serde_json::to_string_pretty(&out.report)?)?;
    for (split, layouts) in &out.splits {
        let path = dir.join(format!("{}.jsonl", split.name()));
        write_jsonl(&path, layouts, &out.schema)?;
        if !layouts.is_empty() {
            stats::write_stats(&path, &dataset_stats(layouts, &out.schema)?)?;
        }
    }
    Ok(())
}

pub fn read_schema(path: &Path) -> Result<DatasetSchema> {
    let text = std::fs::read_to_string(path)?;
    let schema: DatasetSchema = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    schema.validate()?;
    Ok(schema)
}

//! Aggregated metric reports.

use serde::{Deserialize, Serialize};

use super::critic::Critic;
use super::fid::fid_from_features;
use super::{alignment, docsim, overlap, piou, PIOU_RASTER};
use crate::error::{Error, Result};
use crate::layout::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub overlap: f64,
    pub piou: f64,
    pub alignment: f64,
    pub docsim: f64,
    pub fid: f64,
    pub n_layouts: usize,
}

impl MetricReport {
    pub const FIELDS: [&'static str; 5] = ["overlap", "piou", "alignment", "docsim", "fid"];

    pub fn values(&self) -> [f64; 5] {
        [self.overlap, self.piou, self.alignment, self.docsim, self.fid]
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Per-layout metrics averaged over `generated`; DocSim averaged over
/// `pairing` (generated index, reference index); FID of the two sets.
pub fn evaluate(
    generated: &[Layout],
    reference: &[Layout],
    critic: &Critic,
    pairing: &[(usize, usize)],
) -> Result<MetricReport> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    for &(g, r) in pairing {
        if g >= generated.len() || r >= reference.len() {
            return Err(Error::Shape(format!("pair ({g}, {r}) out of range")));
        }
    }
    let fid = fid_from_features(&critic.features(generated)?, &critic.features(reference)?)?;
    Ok(MetricReport {
        overlap: mean(generated.iter().map(overlap)),
        piou: mean(generated.iter().map(|l| piou(l, PIOU_RASTER))),
        alignment: mean(generated.iter().map(alignment)),
        docsim: mean(pairing.iter().map(|&(g, r)| docsim(&generated[g], &reference[r]))),
        fid,
        n_layouts: generated.len(),
    })
}

/// Mean and sample standard deviation of each field across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: Vec<MetricReport>,
    pub mean: [f64; 5],
    pub std: [f64; 5],
}

impl TrialSummary {
    pub fn new(trials: Vec<MetricReport>) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::Empty("trial list".into()));
        }
        let n = trials.len() as f64;
        let mut mean = [0.0; 5];
        let mut std = [0.0; 5];
        for k in 0..5 {
            mean[k] = trials.iter().map(|t| t.values()[k]).sum::<f64>() / n;
            if trials.len() > 1 {
                let ss: f64 = trials.iter().map(|t| (t.values()[k] - mean[k]).powi(2)).sum();
                std[k] = (ss / (n - 1.0)).sqrt();
            }
        }
        Ok(Self { trials, mean, std })
    }

    /// One CSV row per trial with a header.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["trial", "overlap", "piou", "alignment", "docsim", "fid", "n_layouts"])
            .map_err(|e| Error::Config(e.to_string()))?;
        for (i, t) in self.trials.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(t.values().iter().map(|v| v.to_string()));
            rec.push(t.n_layouts.to_string());
            w.write_record(&rec).map_err(|e| Error::Config(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

//! The conditioned-generation evaluation protocol: build conditions from a
//! reference set, generate, score, repeat over trials.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{ConditionSpec, Layout, SlotCondition};
use crate::metrics::critic::Critic;
use crate::metrics::report::{evaluate, TrialSummary};
use crate::sampler::{sample_component_count, DenoiseModel, Sampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionMode {
    Category,
    CategorySize,
    Unconditioned,
}

/// Conditions for one reference layout. With `half_pinned`, a random
/// `floor(n/2)` subset of components is additionally pinned completely.
/// Unconditioned specs take their size from `unconditioned_count`.
pub fn reference_condition<R: Rng + ?Sized>(
    reference: &Layout,
    mode: ConditionMode,
    half_pinned: bool,
    unconditioned_count: usize,
    rng: &mut R,
) -> ConditionSpec {
    let mut spec = match mode {
        ConditionMode::Category => ConditionSpec::category(reference),
        ConditionMode::CategorySize => ConditionSpec::category_size(reference),
        ConditionMode::Unconditioned => return ConditionSpec::unconditioned(unconditioned_count),
    };
    let n = reference.len();
    if half_pinned && n >= 2 {
        for i in sample_indices(rng, n, n / 2) {
            spec.slots[i] = SlotCondition::full(&reference.components[i]);
        }
    }
    spec
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolConfig {
    pub mode: ConditionMode,
    pub half_pinned: bool,
    pub trials: usize,
    pub seed: u64,
    /// Generation batch size.
    pub batch: usize,
}

/// Generate once per reference layout and score against the reference set,
/// `trials` times with independent seeds.
pub fn run_trials<M: DenoiseModel + ?Sized>(
    sampler: &Sampler<'_, M>,
    count_histogram: &[u64],
    references: &[Layout],
    critic: &Critic,
    cfg: &ProtocolConfig,
) -> Result<(TrialSummary, Vec<Vec<Layout>>)> {
    if references.is_empty() || cfg.trials == 0 {
        return Err(Error::Empty("references or trials".into()));
    }
    let mut reports = Vec::with_capacity(cfg.trials);
    let mut generated_sets = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let generated = generate_for_references(sampler, count_histogram, references, cfg, trial as u64)?;
        let pairing: Vec<(usize, usize)> = (0..references.len()).map(|i| (i, i)).collect();
        reports.push(evaluate(&generated, references, critic, &pairing)?);
        generated_sets.push(generated);
    }
    Ok((TrialSummary::new(reports)?, generated_sets))
}

pub fn generate_for_references<M: DenoiseModel + ?Sized>(
    sampler: &Sampler<'_, M>,
    count_histogram: &[u64],
    references: &[Layout],
    cfg: &ProtocolConfig,
    trial: u64,
) -> Result<Vec<Layout>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(trial);
    let mut conds = Vec::with_capacity(references.len());
    let mut seeds = Vec::with_capacity(references.len());
    for r in references {
        let count = if cfg.mode == ConditionMode::Unconditioned {
            sample_component_count(count_histogram, &mut rng)?
        } else {
            r.len()
        };
        conds.push(reference_condition(r, cfg.mode, cfg.half_pinned, count, &mut rng));
        seeds.push(rng.random());
    }
    let mut out = Vec::with_capacity(references.len());
    for (c, s) in conds.chunks(cfg.batch.max(1)).zip(seeds.chunks(cfg.batch.max(1))) {
        out.extend(sampler.generate_batch(c, s)?);
    }
    Ok(out)
}

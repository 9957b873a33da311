//! Procedural datasets with known structure.
//!
//! - `two-column-doc`: optional full-width title band, then two columns of
//!   stacked blocks separated by fixed gaps. Blocks never overlap and share
//!   their column's left and right edges.
//! - `grid`: an `r x c` tiling with uniform gaps; every cell shares its
//!   row's top/bottom and its column's left/right, so alignment is zero.
//! - `mobile-list`: toolbar, stacked full-width list items, optional
//!   bottom button.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::layout::{BBox, Component, DatasetSchema, Layout, N_MAX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    TwoColumnDoc,
    Grid,
    MobileList,
}

impl Profile {
    pub fn schema(self) -> DatasetSchema {
        let (name, classes, canvas): (&str, &[&str], [u32; 2]) = match self {
            Profile::TwoColumnDoc => ("synth-doc", &["text", "title", "figure", "list", "table"], [612, 792]),
            Profile::Grid => ("synth-grid", &["image", "text", "button"], [400, 400]),
            Profile::MobileList => ("synth-mobile", &["toolbar", "list-item", "button"], [360, 640]),
        };
        DatasetSchema::new(name, classes.iter().map(|s| s.to_string()).collect(), N_MAX, canvas).expect("static schema")
    }
}

const MARGIN: f64 = 0.08;
const GAP: f64 = 0.02;
/// Block classes of the document profile with their relative weights.
const DOC_BLOCKS: [(usize, f64); 5] = [(0, 0.55), (1, 0.10), (2, 0.15), (3, 0.10), (4, 0.10)];

fn weighted<R: Rng + ?Sized>(table: &[(usize, f64)], rng: &mut R) -> usize {
    let total: f64 = table.iter().map(|t| t.1).sum();
    let mut u = rng.random::<f64>() * total;
    for &(c, w) in table {
        if u < w {
            return c;
        }
        u -= w;
    }
    table[table.len() - 1].0
}

/// Split `[start, start + span)` into `count` stacked intervals separated by `GAP`.
fn stack<R: Rng + ?Sized>(start: f64, span: f64, count: usize, rng: &mut R) -> Vec<(f64, f64)> {
    let weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    let usable = span - GAP * (count as f64 - 1.0);
    let mut y = start;
    weights
        .iter()
        .map(|w| {
            let h = usable * w / total;
            let out = (y, h);
            y += h + GAP;
            out
        })
        .collect()
}

fn two_column<R: Rng + ?Sized>(rng: &mut R) -> Vec<Component> {
    let n = rng.random_range(3..=N_MAX);
    let mut comps = Vec::with_capacity(n);
    let mut top = MARGIN;
    let full = 1.0 - 2.0 * MARGIN;
    if rng.random::<f64>() < 0.6 {
        let h = rng.random_range(0.04..0.08);
        comps.push(Component::new(1, BBox::from_ltwh(MARGIN, top, full, h)));
        top += h + GAP;
    }
    let blocks = n - comps.len();
    let col_w = (full - 2.0 * GAP) / 2.0;
    let left_count = blocks.div_ceil(2);
    for (col, count) in [(0, left_count), (1, blocks - left_count)] {
        if count == 0 {
            continue;
        }
        let x = MARGIN + col as f64 * (col_w + 2.0 * GAP);
        for (y, h) in stack(top, 1.0 - MARGIN - top, count, rng) {
            comps.push(Component::new(weighted(&DOC_BLOCKS, rng), BBox::from_ltwh(x, y, col_w, h)));
        }
    }
    comps
}

fn grid<R: Rng + ?Sized>(rng: &mut R) -> Vec<Component> {
    let (rows, cols) = loop {
        let r = rng.random_range(1..=4);
        let c = rng.random_range(1..=3);
        if (2..=N_MAX).contains(&(r * c)) {
            break (r, c);
        }
    };
    let span = 1.0 - 2.0 * MARGIN;
    let w = (span - GAP * (cols as f64 - 1.0)) / cols as f64;
    let h = (span - GAP * (rows as f64 - 1.0)) / rows as f64;
    let mut comps = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let y = MARGIN + r as f64 * (h + GAP);
        for c in 0..cols {
            let x = MARGIN + c as f64 * (w + GAP);
            comps.push(Component::new(rng.random_range(0..3), BBox::from_ltwh(x, y, w, h)));
        }
    }
    comps
}

fn mobile_list<R: Rng + ?Sized>(rng: &mut R) -> Vec<Component> {
    let bar = 0.08;
    let mut comps = vec![Component::new(0, BBox::from_ltwh(0.0, 0.0, 1.0, bar))];
    let button = rng.random::<bool>();
    let items = rng.random_range(1..=N_MAX - 1 - button as usize);
    let bottom = if button { 0.86 } else { 0.98 };
    let item_h = ((bottom - bar - GAP) - GAP * (items as f64 - 1.0)) / items as f64;
    let item_h = item_h.min(0.12);
    for i in 0..items {
        let y = bar + GAP + i as f64 * (item_h + GAP);
        comps.push(Component::new(1, BBox::from_ltwh(0.04, y, 0.92, item_h)));
    }
    if button {
        comps.push(Component::new(2, BBox::from_ltwh(0.3, 0.89, 0.4, 0.07)));
    }
    comps
}

/// `n` layouts of a profile, deterministic in `seed`.
pub fn synth(profile: Profile, n: usize, seed: u64) -> Result<(DatasetSchema, Vec<Layout>)> {
    let schema = profile.schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layouts = (0..n)
        .map(|_| {
            let comps = match profile {
                Profile::TwoColumnDoc => two_column(&mut rng),
                Profile::Grid => grid(&mut rng),
                Profile::MobileList => mobile_list(&mut rng),
            };
            Layout::new(schema.canvas, comps)
        })
        .collect::<Vec<_>>();
    for l in &layouts {
        l.validate(&schema)?;
    }
    Ok((schema, layouts))
}

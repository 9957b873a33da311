//! Layout quality metrics and the feature critic used for FID.
//!
//! Overlap, pIOU and alignment are per-layout; DocSim compares a generated
//! layout with its conditioning reference; FID compares two sets through
//! critic features.

pub mod critic;
pub mod fid;
pub mod matching;
pub mod report;

pub use critic::{Critic, CriticConfig};
pub use fid::{frechet_distance, GaussianFit};
pub use matching::max_weight_matching;
pub use report::{evaluate, MetricReport, TrialSummary};

use crate::layout::{BBox, Layout};

/// Default pIOU raster resolution.
pub const PIOU_RASTER: usize = 256;
/// Weight of the size difference in the DocSim exponent.
pub const DOCSIM_SHAPE_WEIGHT: f64 = 2.0;

/// Sum of pairwise intersections over the sum of areas; 0 for fewer than
/// two components.
pub fn overlap(layout: &Layout) -> f64 {
    let boxes: Vec<&BBox> = layout.boxes().collect();
    if boxes.len() < 2 {
        return 0.0;
    }
    let total: f64 = boxes.iter().map(|b| b.area()).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut inter = 0.0;
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            inter += boxes[i].intersection_area(boxes[j]);
        }
    }
    inter / total
}

/// Pixels covered at least twice over pixels covered at least once, on a
/// `raster x raster` grid sampled at pixel centers.
pub fn piou(layout: &Layout, raster: usize) -> f64 {
    let r = raster as f64;
    let mut grid = vec![0u16; raster * raster];
    // A pixel is covered when its center lies in [left, right).
    let span = |lo: f64, hi: f64| {
        let a = ((lo * r - 0.5).ceil().max(0.0) as usize).min(raster);
        let b = ((hi * r - 0.5).ceil().max(0.0) as usize).min(raster);
        a..b
    };
    for b in layout.boxes() {
        let xs = span(b.left(), b.right());
        for y in span(b.top(), b.bottom()) {
            for c in &mut grid[y * raster + xs.start..y * raster + xs.end] {
                *c = c.saturating_add(1);
            }
        }
    }
    let once = grid.iter().filter(|&&c| c >= 1).count();
    let twice = grid.iter().filter(|&&c| c >= 2).count();
    if once == 0 {
        0.0
    } else {
        twice as f64 / once as f64
    }
}

fn features(b: &BBox) -> [f64; 6] {
    [b.left(), b.cx, b.right(), b.top(), b.cy, b.bottom()]
}

/// Mean over components of the smallest same-feature gap to any other
/// component; 0 for fewer than two components.
pub fn alignment(layout: &Layout) -> f64 {
    let feats: Vec<[f64; 6]> = layout.boxes().map(features).collect();
    let n = feats.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut best = f64::INFINITY;
        for j in 0..n {
            if i == j {
                continue;
            }
            for k in 0..6 {
                best = best.min((feats[i][k] - feats[j][k]).abs());
            }
        }
        total += best;
    }
    total / n as f64
}

/// Pair weight for DocSim; 0 across classes.
pub fn docsim_weight(a: &crate::layout::Component, b: &crate::layout::Component) -> f64 {
    if a.class != b.class {
        return 0.0;
    }
    let dc = ((a.bbox.cx - b.bbox.cx).powi(2) + (a.bbox.cy - b.bbox.cy).powi(2)).sqrt();
    let ds = (a.bbox.w - b.bbox.w).abs() + (a.bbox.h - b.bbox.h).abs();
    let alpha = a.bbox.area().min(b.bbox.area()).sqrt();
    alpha * 2f64.powf(-dc - DOCSIM_SHAPE_WEIGHT * ds)
}

/// Max-weight matching value of same-class pairs over `max(n_gen, n_ref)`.
pub fn docsim(generated: &Layout, reference: &Layout) -> f64 {
    let n = generated.len().max(reference.len());
    if n == 0 {
        return 0.0;
    }
    let w: Vec<Vec<f64>> = generated
        .components
        .iter()
        .map(|g| reference.components.iter().map(|r| docsim_weight(g, r)).collect())
        .collect();
    let (total, _) = max_weight_matching(&w);
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Component;

    fn lay(boxes: &[(usize, BBox)]) -> Layout {
        Layout::new([100, 100], boxes.iter().map(|&(c, b)| Component::new(c, b)).collect())
    }

    #[test]
    fn overlap_cases() {
        let a = BBox::new(0.25, 0.25, 0.2, 0.2);
        let b = BBox::new(0.75, 0.75, 0.2, 0.2);
        assert_eq!(overlap(&lay(&[(0, a), (0, b)])), 0.0);
        assert!((overlap(&lay(&[(0, a), (1, a)])) - 0.5).abs() < 1e-12);
        assert_eq!(overlap(&lay(&[(0, a)])), 0.0);
    }

    #[test]
    fn piou_cases() {
        let a = BBox::new(0.25, 0.25, 0.2, 0.2);
        let b = BBox::new(0.75, 0.75, 0.2, 0.2);
        assert_eq!(piou(&lay(&[(0, a), (0, b)]), 256), 0.0);
        assert_eq!(piou(&lay(&[(0, a), (0, a)]), 256), 1.0);
        assert_eq!(piou(&Layout::new([1, 1], vec![]), 256), 0.0);
        let p = BBox::new(0.25, 0.25, 0.5, 0.5);
        let q = BBox::new(0.5, 0.25, 0.5, 0.5);
        assert!((piou(&lay(&[(0, p), (1, q)]), 256) - 1.0 / 3.0).abs() <= 2.0 / 256.0);
    }

    #[test]
    fn alignment_cases() {
        let grid = lay(&[
            (0, BBox::from_ltwh(0.0, 0.0, 0.5, 0.5)),
            (0, BBox::from_ltwh(0.5, 0.0, 0.5, 0.5)),
            (0, BBox::from_ltwh(0.0, 0.5, 0.5, 0.5)),
            (0, BBox::from_ltwh(0.5, 0.5, 0.5, 0.5)),
        ]);
        assert_eq!(alignment(&grid), 0.0);
        let centers = lay(&[(0, BBox::new(0.5, 0.5, 0.2, 0.1)), (0, BBox::new(0.5, 0.5, 0.4, 0.3))]);
        assert_eq!(alignment(&centers), 0.0);
        // Offsets 0.05 on both axes; every same-type gap is at least 0.05.
        let off = lay(&[(0, BBox::new(0.3, 0.3, 0.2, 0.2)), (0, BBox::new(0.35, 0.35, 0.2, 0.2))]);
        assert!((alignment(&off) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn docsim_cases() {
        let l = lay(&[(0, BBox::new(0.3, 0.3, 0.2, 0.2)), (1, BBox::new(0.6, 0.7, 0.4, 0.1))]);
        let want = (0.04f64.sqrt() + 0.04f64.sqrt()) / 2.0;
        assert!((docsim(&l, &l) - want).abs() < 1e-12);
        let other = lay(&[(2, BBox::new(0.3, 0.3, 0.2, 0.2))]);
        assert_eq!(docsim(&l, &other), 0.0);
    }
}

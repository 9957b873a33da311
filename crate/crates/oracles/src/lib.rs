//! Slow reference implementations used only by tests.
//!
//! Everything here works on plain `Vec`s and shares no code with
//! `laydiff-core`, so a bug in one route cannot hide in the other.

pub type Mat = Vec<Vec<f64>>;

pub fn identity(n: usize) -> Mat {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let m = b[0].len();
    let inner = b.len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for k in 0..inner {
            for j in 0..m {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// `a^p` by repeated multiplication.
pub fn mat_pow(a: &Mat, p: usize) -> Mat {
    let mut out = identity(a.len());
    for _ in 0..p {
        out = mat_mul(&out, a);
    }
    out
}

/// Column-stochastic one-step kernel of the absorbing chain:
/// entry `[to][from]`, MASK is the last state.
pub fn absorbing_kernel(keep: f64, k: usize) -> Mat {
    let mut q = vec![vec![0.0; k + 1]; k + 1];
    for from in 0..=k {
        for to in 0..=k {
            q[to][from] = match (from == k, to == k, from == to) {
                (true, true, _) => 1.0,
                (true, false, _) => 0.0,
                (false, _, true) => keep,
                (false, true, false) => 1.0 - keep,
                _ => 0.0,
            };
        }
    }
    q
}

fn for_each_assignment(n: usize, states: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; n];
    loop {
        f(&idx);
        let mut pos = 0;
        loop {
            if pos == n {
                return;
            }
            idx[pos] += 1;
            if idx[pos] < states {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Per-slot marginals of `p(y_{s-1} | y_s)` by enumerating every joint
/// clean assignment and every joint previous state, with clean classes
/// weighted by `p0` (rows over the `k` real classes).
pub fn brute_force_reverse(y_s: &[usize], p0: &[Vec<f64>], s: usize, keep: f64, k: usize) -> Mat {
    let n = y_s.len();
    let step = absorbing_kernel(keep, k);
    let prev = mat_pow(&step, s - 1);
    let mut marg = vec![vec![0.0; k + 1]; n];
    let mut total = 0.0;
    for_each_assignment(n, k, |clean| {
        let prior: f64 = (0..n).map(|i| p0[i][clean[i]]).product();
        if prior == 0.0 {
            return;
        }
        for_each_assignment(n, k + 1, |before| {
            let mut w = prior;
            for i in 0..n {
                w *= prev[before[i]][clean[i]] * step[y_s[i]][before[i]];
            }
            if w == 0.0 {
                return;
            }
            total += w;
            for i in 0..n {
                marg[i][before[i]] += w;
            }
        });
    });
    for row in &mut marg {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    marg
}

/// Cosine noise level `cos^2(((t/T) + s) / (1 + s) * pi / 2)` normalized by
/// its value at `t = 0`, without any clipping.
pub fn cosine_alpha_bar(t: usize, steps: usize, offset: f64) -> f64 {
    let f = |t: f64| (((t / steps as f64) + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    f(t as f64) / f(0.0)
}

/// Mean and variance of `q(x_{t-1} | x_t, x_0)` for a scalar, from the
/// Gaussian product of `q(x_t | x_{t-1})` and `q(x_{t-1} | x_0)`.
pub fn gaussian_posterior(x_t: f64, x0: f64, ab_prev: f64, ab_t: f64) -> (f64, f64) {
    let a = ab_t / ab_prev;
    // Precision-weighted combination.
    let prec_prior = 1.0 / (1.0 - ab_prev);
    let prec_like = a / (1.0 - a);
    let var = 1.0 / (prec_prior + prec_like);
    let mean = var * (prec_prior * ab_prev.sqrt() * x0 + prec_like * x_t / a.sqrt());
    (mean, var)
}

/// Maximum total weight over all injective assignments of rows to columns.
pub fn brute_force_matching(w: &[Vec<f64>]) -> f64 {
    let rows = w.len();
    let cols = w.first().map_or(0, |r| r.len());
    if rows > cols {
        let t: Mat = (0..cols).map(|j| (0..rows).map(|i| w[i][j]).collect()).collect();
        return brute_force_matching(&t);
    }
    fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(w[row][j] + go(w, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(w, 0, &mut vec![false; cols])
}

/// Box as `(left, top, right, bottom)`.
pub type Rect = (f64, f64, f64, f64);

/// Exact area covered by at least one and at least two rectangles, by
/// coordinate compression.
pub fn coverage_areas(rects: &[Rect]) -> (f64, f64) {
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r.0, r.2]).collect();
    let mut ys: Vec<f64> = rects.iter().flat_map(|r| [r.1, r.3]).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (mut once, mut twice) = (0.0, 0.0);
    for xw in xs.windows(2) {
        for yw in ys.windows(2) {
            let (cx, cy) = ((xw[0] + xw[1]) / 2.0, (yw[0] + yw[1]) / 2.0);
            let hits = rects.iter().filter(|r| r.0 <= cx && cx < r.2 && r.1 <= cy && cy < r.3).count();
            let area = (xw[1] - xw[0]) * (yw[1] - yw[0]);
            if hits >= 1 {
                once += area;
            }
            if hits >= 2 {
                twice += area;
            }
        }
    }
    (once, twice)
}

/// Continuous pIOU: doubly covered area over covered area.
pub fn exact_piou(rects: &[Rect]) -> f64 {
    let (once, twice) = coverage_areas(rects);
    if once == 0.0 {
        0.0
    } else {
        twice / once
    }
}

/// Fréchet distance of two 1-D Gaussians.
pub fn frechet_1d(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    (m1 - m2).powi(2) + v1 + v2 - 2.0 * (v1 * v2).sqrt()
}

fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let mut m: Mat = a.iter().zip(identity(n)).map(|(r, e)| r.iter().copied().chain(e).collect()).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).expect("non-empty");
        m.swap(c, p);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                let pivot = m[c].clone();
                for (v, p) in m[r].iter_mut().zip(pivot) {
                    *v -= f * p;
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Matrix square root by Denman-Beavers iteration.
pub fn sqrtm_denman_beavers(a: &Mat, iters: usize) -> Mat {
    let mut y = a.clone();
    let mut z = identity(a.len());
    for _ in 0..iters {
        let yi = inverse(&y);
        let zi = inverse(&z);
        let ny = y.iter().zip(&zi).map(|(r, s)| r.iter().zip(s).map(|(a, b)| (a + b) / 2.0).collect()).collect();
        let nz = z.iter().zip(&yi).map(|(r, s)| r.iter().zip(s).map(|(a, b)| (a + b) / 2.0).collect()).collect();
        y = ny;
        z = nz;
    }
    y
}

pub fn trace(a: &Mat) -> f64 {
    (0..a.len()).map(|i| a[i][i]).sum()
}

/// Fréchet distance from means and covariances, taking the trace term
/// from the Denman-Beavers root of the (non-symmetric) product `S1 S2`.
pub fn frechet_general(m1: &[f64], s1: &Mat, m2: &[f64], s2: &Mat) -> f64 {
    let diff: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b).powi(2)).sum();
    let root = sqrtm_denman_beavers(&mat_mul(s1, s2), 60);
    diff + trace(s1) + trace(s2) - 2.0 * trace(&root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_power_is_stochastic() {
        let q = mat_pow(&absorbing_kernel(0.3, 3), 4);
        for from in 0..4 {
            let s: f64 = (0..4).map(|to| q[to][from]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!((q[1][1] - 0.3f64.powi(4)).abs() < 1e-15);
    }

    #[test]
    fn denman_beavers_squares_back() {
        let a = vec![vec![4.0, 1.0], vec![1.0, 3.0]];
        let r = sqrtm_denman_beavers(&a, 40);
        let back = mat_mul(&r, &r);
        for i in 0..2 {
            for j in 0..2 {
                assert!((back[i][j] - a[i][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn half_overlap_coverage() {
        let (once, twice) = coverage_areas(&[(0.0, 0.0, 0.5, 0.5), (0.25, 0.0, 0.75, 0.5)]);
        assert!((once - 0.375).abs() < 1e-12);
        assert!((twice - 0.125).abs() < 1e-12);
    }

    #[test]
    fn matching_small() {
        let w = vec![vec![1.0, 5.0], vec![4.0, 1.0], vec![0.0, 9.0]];
        assert_eq!(brute_force_matching(&w), 13.0);
    }

    #[test]
    fn posterior_matches_known_limit() {
        let (m, v) = gaussian_posterior(0.7, 0.2, 1.0 - 1e-12, 0.9);
        assert!((m - 0.2).abs() < 1e-9);
        assert!(v.abs() < 1e-9);
    }
}

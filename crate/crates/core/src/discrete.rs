//! Absorbing-state chain over component classes.
//!
//! Class index `k` (the number of real classes) is MASK. Each forward step
//! keeps a real class with probability `beta` and masks it otherwise; MASK
//! is never left.

use ndarray::{Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};

/// `q[[i, j]] = q(y_t = i | y_{t-1} = j)`; columns sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub q: Array2<f64>,
}

impl TransitionMatrix {
    pub fn num_real_classes(&self) -> usize {
        self.q.nrows() - 1
    }

    pub fn matmul(&self, other: &TransitionMatrix) -> TransitionMatrix {
        TransitionMatrix {
            q: self.q.dot(&other.q),
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("discrete beta {beta} outside (0, 1)")))
    }
}

fn absorbing(stay: f64, k: usize) -> TransitionMatrix {
    let mut q = Array2::zeros((k + 1, k + 1));
    for j in 0..k {
        q[[j, j]] = stay;
        q[[k, j]] = 1.0 - stay;
    }
    q[[k, k]] = 1.0;
    TransitionMatrix { q }
}

/// One-step transition matrix.
pub fn build_transition(beta: f64, k: usize) -> Result<TransitionMatrix> {
    check_beta(beta)?;
    if k == 0 {
        return Err(Error::Config("need at least one real class".into()));
    }
    Ok(absorbing(beta, k))
}

/// `Q^s` in closed form: stay probability `beta^s`.
pub fn cum_transition(beta: f64, k: usize, s: usize) -> Result<TransitionMatrix> {
    check_beta(beta)?;
    if k == 0 {
        return Err(Error::Config("need at least one real class".into()));
    }
    Ok(absorbing(beta.powf(s as f64), k))
}

/// Noised classes at discrete step `s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassState {
    pub y: Vec<usize>,
    pub s: usize,
}

/// Forward corruption: each class survives with probability `stay` (that is
/// `beta^s`), otherwise becomes `mask`. One uniform is drawn per slot.
pub fn q_sample_discrete<R: Rng + ?Sized>(y0: &[usize], s: usize, stay: f64, mask: usize, rng: &mut R) -> ClassState {
    let y = y0
        .iter()
        .map(|&c| {
            let u: f64 = rng.random();
            if s == 0 || u < stay {
                c
            } else {
                mask
            }
        })
        .collect();
    ClassState { y, s }
}

fn check_rows(p0_hat: &Array2<f64>, mask: usize) -> Result<()> {
    if p0_hat.ncols() != mask + 1 {
        return Err(Error::Shape(format!("expected {} columns, got {}", mask + 1, p0_hat.ncols())));
    }
    for (i, row) in p0_hat.rows().into_iter().enumerate() {
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Probability {
                row: i,
                reason: "negative or non-finite entry".into(),
            });
        }
        let total: f64 = row.sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Probability {
                row: i,
                reason: format!("sums to {total}"),
            });
        }
        if row[mask] > 1e-12 {
            return Err(Error::Probability {
                row: i,
                reason: "mass on MASK".into(),
            });
        }
    }
    Ok(())
}

/// Distribution of `y_{s-1}` given `y_s` and predicted clean-class
/// probabilities (`p0_hat` has `K + 1` columns with zero MASK mass).
///
/// Slots are independent under the factorized kernel, so the sum over
/// joint clean assignments reduces to a per-slot closed form.
pub fn reverse_posterior(y_s: &[usize], p0_hat: &Array2<f64>, s: usize, beta: f64) -> Result<Array2<f64>> {
    if s == 0 {
        return Err(Error::Config("reverse step needs s >= 1".into()));
    }
    check_beta(beta)?;
    if p0_hat.nrows() != y_s.len() {
        return Err(Error::Shape(format!("{} classes vs {} probability rows", y_s.len(), p0_hat.nrows())));
    }
    let mask = p0_hat.ncols().saturating_sub(1);
    check_rows(p0_hat, mask)?;
    let stay_prev = beta.powf(s as f64 - 1.0);
    let stay = stay_prev * beta;
    let unmask_weight = (stay_prev - stay) / (1.0 - stay);
    let mask_weight = (1.0 - stay_prev) / (1.0 - stay);
    let mut out = Array2::zeros(p0_hat.dim());
    for (i, &y) in y_s.iter().enumerate() {
        if y > mask {
            return Err(Error::Shape(format!("class index {y} exceeds MASK index {mask}")));
        }
        if y != mask {
            out[[i, y]] = 1.0;
            continue;
        }
        for k in 0..mask {
            out[[i, k]] = unmask_weight * p0_hat[[i, k]];
        }
        out[[i, mask]] = mask_weight;
    }
    Ok(out)
}

/// Draw an index from a probability row.
pub fn sample_categorical<R: Rng + ?Sized>(row: ArrayView1<'_, f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let total: f64 = row.sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if target < acc {
            return i;
        }
    }
    last_positive
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}

/// Append a zero MASK column to real-class probabilities.
pub fn with_mask_column(probs: &Array2<f64>) -> Array2<f64> {
    let (n, k) = probs.dim();
    let mut out = Array2::zeros((n, k + 1));
    out.slice_mut(ndarray::s![.., ..k]).assign(probs);
    out
}

/// Mean cross-entropy over slots not excluded (`true` = conditioned or
/// padding). Returns the loss and its gradient with respect to the logits.
pub fn class_loss(logits: &Array2<f64>, y0: &[usize], excluded: &[bool]) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if y0.len() != n || excluded.len() != n {
        return Err(Error::Shape(format!(
            "logits {n}x{k}, {} targets, {} mask entries",
            y0.len(),
            excluded.len()
        )));
    }
    let count = excluded.iter().filter(|m| !**m).count();
    let mut grad = Array2::zeros((n, k));
    if count == 0 {
        return Ok((0.0, grad));
    }
    let probs = softmax_rows(logits);
    let scale = 1.0 / count as f64;
    let mut total = 0.0;
    for i in 0..n {
        if excluded[i] {
            continue;
        }
        let y = y0[i];
        if y >= k {
            return Err(Error::Shape(format!("target class {y} is not one of the {k} real classes")));
        }
        let row = logits.row(i);
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
        for c in 0..k {
            grad[[i, c]] = scale * (probs[[i, c]] - if c == y { 1.0 } else { 0.0 });
        }
    }
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transition_entries() {
        let q = build_transition(0.15, 5).unwrap().q;
        assert_eq!(q[[2, 2]], 0.15);
        assert_eq!(q[[5, 2]], 0.85);
        assert_eq!(q[[5, 5]], 1.0);
        assert_eq!(q[[1, 2]], 0.0);
        for col in q.columns() {
            assert!((col.sum() - 1.0).abs() < 1e-12);
        }
        assert!(build_transition(1.0, 5).is_err());
        assert!(build_transition(0.0, 5).is_err());
    }

    #[test]
    fn near_one_beta_is_identity() {
        let q = build_transition(1.0 - 1e-15, 3).unwrap().q;
        let eye = Array2::<f64>::eye(4);
        assert!((&q - &eye).iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn cumulative_closed_form() {
        assert_eq!(cum_transition(0.15, 3, 0).unwrap().q, Array2::<f64>::eye(4));
        let q2 = cum_transition(0.15, 3, 2).unwrap().q;
        assert!((q2[[0, 0]] - 0.0225).abs() < 1e-15);
        let q10 = cum_transition(0.15, 3, 10).unwrap().q;
        assert!((q10[[1, 1]] - 5.7665e-9).abs() < 1e-12);
    }

    #[test]
    fn forward_sampling_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y0 = vec![0, 1, 2, 0];
        assert_eq!(q_sample_discrete(&y0, 0, 1.0, 3, &mut rng).y, y0);
        let masked = q_sample_discrete(&y0, 10, 0.15f64.powi(10), 3, &mut rng);
        assert!(masked.y.iter().all(|&c| c == 3));
    }

    #[test]
    fn forward_keep_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let y0 = vec![1usize; n];
        let kept = q_sample_discrete(&y0, 1, 0.15, 4, &mut rng).y.iter().filter(|&&c| c == 1).count();
        let rate = kept as f64 / n as f64;
        let se = (0.15 * 0.85 / n as f64).sqrt();
        assert!((rate - 0.15).abs() < 4.0 * se, "{rate}");
    }

    #[test]
    fn unmasked_slot_posterior_is_point_mass() {
        let p0 = array![[0.2, 0.3, 0.5, 0.0]];
        let post = reverse_posterior(&[1], &p0, 2, 0.15).unwrap();
        assert_eq!(post, array![[0.0, 1.0, 0.0, 0.0]]);
    }

    #[test]
    fn first_step_fully_unmasks() {
        let p0 = array![[0.2, 0.3, 0.5, 0.0]];
        let post = reverse_posterior(&[3], &p0, 1, 0.15).unwrap();
        assert_eq!(post[[0, 3]], 0.0);
        for k in 0..3 {
            assert!((post[[0, k]] - p0[[0, k]]).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_prediction_at_step_two() {
        let third = 1.0 / 3.0;
        let p0 = array![[third, third, third, 0.0]];
        let post = reverse_posterior(&[3], &p0, 2, 0.15).unwrap();
        for k in 0..3 {
            assert!((post[[0, k]] - 0.043478260869565216).abs() < 1e-12);
        }
        assert!((post[[0, 3]] - 0.8695652173913043).abs() < 1e-12);
    }

    #[test]
    fn rejects_malformed_rows() {
        assert!(reverse_posterior(&[3], &array![[0.5, 0.4, 0.0, 0.0]], 1, 0.15).is_err());
        assert!(reverse_posterior(&[3], &array![[0.5, 0.0, 0.0, 0.5]], 1, 0.15).is_err());
        assert!(reverse_posterior(&[3], &array![[1.5, -0.5, 0.0, 0.0]], 1, 0.15).is_err());
        assert!(reverse_posterior(&[3], &array![[1.0, 0.0, 0.0, 0.0]], 0, 0.15).is_err());
    }

    #[test]
    fn class_loss_examples() {
        let uniform = Array2::zeros((2, 5));
        let (l, _) = class_loss(&uniform, &[0, 3], &[false, false]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        let sharp = array![[50.0, 0.0, 0.0], [0.0, 0.0, 50.0]];
        let (l, _) = class_loss(&sharp, &[0, 2], &[false, false]).unwrap();
        assert!(l < 1e-20);
        let (l, g) = class_loss(&uniform, &[0, 3], &[true, true]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(class_loss(&uniform, &[0], &[false]).is_err());
    }

    #[test]
    fn class_loss_gradient() {
        let logits = array![[0.3, -1.0, 2.0], [0.5, 0.1, -0.2]];
        let (_, g) = class_loss(&logits, &[2, 0], &[false, false]).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut p = logits.clone();
                p[[i, j]] += h;
                let mut m = logits.clone();
                m[[i, j]] -= h;
                let fd = (class_loss(&p, &[2, 0], &[false, false]).unwrap().0
                    - class_loss(&m, &[2, 0], &[false, false]).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn categorical_sampling_respects_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let row = array![0.0, 1.0, 0.0];
        for _ in 0..100 {
            assert_eq!(sample_categorical(row.view(), &mut rng), 1);
        }
    }
}

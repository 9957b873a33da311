//! Gaussian chain over box coordinates: forward marginals, the reverse
//! posterior step, and the box regression loss.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::schedule::DiffusionSchedule;

/// A forward draw `x_t = sqrt(ab) x0 + sqrt(1 - ab) eps`.
#[derive(Debug, Clone)]
pub struct NoisedBoxes {
    pub x_t: Array2<f64>,
    pub t: usize,
    pub eps: Array2<f64>,
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Closed-form marginal `q(x_t | x_0)`.
pub fn q_sample<R: Rng + ?Sized>(
    schedule: &DiffusionSchedule,
    x0: &Array2<f64>,
    t: usize,
    rng: &mut R,
) -> Result<NoisedBoxes> {
    let eps = standard_normal(x0.nrows(), x0.ncols(), rng);
    q_sample_with(schedule, x0, t, eps)
}

/// Same as [`q_sample`] with the Gaussian draw supplied by the caller.
pub fn q_sample_with(schedule: &DiffusionSchedule, x0: &Array2<f64>, t: usize, eps: Array2<f64>) -> Result<NoisedBoxes> {
    schedule.check_step(t)?;
    if eps.dim() != x0.dim() {
        return Err(Error::Shape(format!("noise {:?} vs x0 {:?}", eps.dim(), x0.dim())));
    }
    let ab = schedule.alpha_bar[t];
    let x_t = x0 * ab.sqrt() + &eps * (1.0 - ab).sqrt();
    Ok(NoisedBoxes { x_t, t, eps })
}

/// Coefficients of `q(x_{t-1} | x_t, x_0)`: mean `c0 * x0 + ct * x_t` and
/// variance `var`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoefficients {
    pub c0: f64,
    pub ct: f64,
    pub var: f64,
}

pub fn posterior_coefficients(schedule: &DiffusionSchedule, t: usize) -> Result<PosteriorCoefficients> {
    schedule.check_step(t)?;
    let ab_t = schedule.alpha_bar[t];
    let ab_prev = schedule.alpha_bar[t - 1];
    let beta = schedule.beta[t];
    let alpha = schedule.alpha[t];
    let denom = 1.0 - ab_t;
    Ok(PosteriorCoefficients {
        c0: ab_prev.sqrt() * beta / denom,
        ct: alpha.sqrt() * (1.0 - ab_prev) / denom,
        var: beta * (1.0 - ab_prev) / denom,
    })
}

/// Posterior mean of `x_{t-1}` given `x_t` and a clean estimate.
pub fn posterior_mean(
    schedule: &DiffusionSchedule,
    x_t: &Array2<f64>,
    x0_hat: &Array2<f64>,
    t: usize,
) -> Result<Array2<f64>> {
    if x_t.dim() != x0_hat.dim() {
        return Err(Error::Shape(format!("x_t {:?} vs x0_hat {:?}", x_t.dim(), x0_hat.dim())));
    }
    let c = posterior_coefficients(schedule, t)?;
    Ok(x0_hat * c.c0 + x_t * c.ct)
}

/// One reverse step. At `t = 1` the mean is returned without noise.
pub fn posterior_sample<R: Rng + ?Sized>(
    schedule: &DiffusionSchedule,
    x_t: &Array2<f64>,
    x0_hat: &Array2<f64>,
    t: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let mean = posterior_mean(schedule, x_t, x0_hat, t)?;
    if t == 1 {
        return Ok(mean);
    }
    let sd = posterior_coefficients(schedule, t)?.var.sqrt();
    let noise = standard_normal(mean.nrows(), mean.ncols(), rng);
    Ok(mean + noise * sd)
}

/// Mean squared error over the coordinates not excluded by `excluded`
/// (`true` = conditioned or padding). Returns the loss and its gradient
/// with respect to `x0_hat`.
pub fn box_loss_coords(
    x0_hat: &Array2<f64>,
    x0: &Array2<f64>,
    excluded: &[[bool; 4]],
) -> Result<(f64, Array2<f64>)> {
    if x0_hat.dim() != x0.dim() || x0.ncols() != 4 || excluded.len() != x0.nrows() {
        return Err(Error::Shape(format!(
            "x0_hat {:?}, x0 {:?}, mask {}",
            x0_hat.dim(),
            x0.dim(),
            excluded.len()
        )));
    }
    let count = excluded.iter().flatten().filter(|m| !**m).count();
    let mut grad = Array2::zeros(x0.dim());
    if count == 0 {
        return Ok((0.0, grad));
    }
    let n = count as f64;
    let mut total = 0.0;
    for (i, row) in excluded.iter().enumerate() {
        for (j, &masked) in row.iter().enumerate() {
            if masked {
                continue;
            }
            let d = x0_hat[[i, j]] - x0[[i, j]];
            total += d * d;
            grad[[i, j]] = 2.0 * d / n;
        }
    }
    Ok((total / n, grad))
}

/// Slot-level form of [`box_loss_coords`].
pub fn box_loss(x0_hat: &Array2<f64>, x0: &Array2<f64>, excluded: &[bool]) -> Result<f64> {
    let coords: Vec<[bool; 4]> = excluded.iter().map(|&m| [m; 4]).collect();
    box_loss_coords(x0_hat, x0, &coords).map(|(l, _)| l)
}

use laydiff_core::continuous::{posterior_coefficients, posterior_sample, q_sample};
use laydiff_core::discrete::{cum_transition, q_sample_discrete, reverse_posterior};
use laydiff_core::schedule::{build_cosine_schedule, discrete_step_of, COSINE_OFFSET, DEFAULT_BETA_DISC};
use laydiff_oracles as oracle;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn alpha_bar_follows_cosine_curve() {
    let s = build_cosine_schedule(100).unwrap();
    for t in 0..100 {
        let expected = oracle::cosine_alpha_bar(t, 100, COSINE_OFFSET);
        assert!((s.alpha_bar[t] - expected).abs() <= 1e-12 * expected.max(1e-300), "t={t}");
    }
    assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
    assert!((s.alpha_bar[0] - 1.0).abs() < 1e-4);
    assert!(s.alpha_bar[100] < 0.01);
}

#[test]
fn cumulative_kernel_matches_matrix_power() {
    for k in [1, 2, 3, 5] {
        for s in 0..=10 {
            let closed = cum_transition(DEFAULT_BETA_DISC, k, s).unwrap();
            let power = oracle::mat_pow(&oracle::absorbing_kernel(DEFAULT_BETA_DISC, k), s);
            for i in 0..=k {
                for j in 0..=k {
                    assert!((closed.q[[i, j]] - power[i][j]).abs() < 1e-12, "k={k} s={s} ({i},{j})");
                }
            }
        }
    }
    let sched = build_cosine_schedule(100).unwrap();
    assert_eq!(sched.stay_bar[10], 0.15f64.powf(10.0));
}

fn positive_rows(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut p = Array2::zeros((n, k + 1));
    for i in 0..n {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        for c in 0..k {
            p[[i, c]] = raw[c] / total;
        }
    }
    p
}

#[test]
fn discrete_posterior_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in [2, 3] {
        for s in 1..=3 {
            for trial in 0..4 {
                let n = 2 + trial % 2;
                let p0 = positive_rows(n, k, &mut rng);
                let y_s: Vec<usize> = (0..n).map(|_| rng.random_range(0..=k)).collect();
                let closed = reverse_posterior(&y_s, &p0, s, DEFAULT_BETA_DISC).unwrap();
                let rows: Vec<Vec<f64>> = p0.rows().into_iter().map(|r| r.to_vec()).collect();
                let brute = oracle::brute_force_reverse(&y_s, &rows, s, DEFAULT_BETA_DISC, k);
                for i in 0..n {
                    assert!((closed.row(i).sum() - 1.0).abs() < 1e-9);
                    for c in 0..=k {
                        assert!((closed[[i, c]] - brute[i][c]).abs() < 1e-12, "k={k} s={s} y={y_s:?}");
                    }
                }
            }
        }
    }
}

#[test]
fn continuous_posterior_matches_gaussian_product() {
    let s = build_cosine_schedule(100).unwrap();
    for t in 2..=100 {
        let c = posterior_coefficients(&s, t).unwrap();
        let (mean, var) = oracle::gaussian_posterior(0.4, -0.7, s.alpha_bar[t - 1], s.alpha_bar[t]);
        assert!((c.c0 * -0.7 + c.ct * 0.4 - mean).abs() < 1e-9, "t={t}");
        assert!((c.var - var).abs() < 1e-9 * var.max(1.0), "t={t}");
    }
}

fn ks_normal(samples: &mut [f64], mean: f64, sd: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let cdf = |x: f64| 0.5 * (1.0 + erf((x - mean) / (sd * std::f64::consts::SQRT_2)));
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

// Abramowitz-Stegun 7.1.26, absolute error below 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

#[test]
fn forward_marginal_passes_ks() {
    let s = build_cosine_schedule(100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 4000;
    let x0 = Array2::from_elem((n, 1), 0.6);
    for t in [1, 25, 50, 90] {
        let noised = q_sample(&s, &x0, t, &mut rng).unwrap();
        let mut xs = noised.x_t.column(0).to_vec();
        let ab = oracle::cosine_alpha_bar(t, 100, COSINE_OFFSET);
        let d = ks_normal(&mut xs, ab.sqrt() * 0.6, (1.0 - ab).sqrt());
        // 1% critical value.
        assert!(d < 1.63 / (n as f64).sqrt(), "t={t} D={d}");
    }
}

#[test]
fn reverse_chain_marginals_match_forward() {
    let s = build_cosine_schedule(100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 10_000;
    let x0 = Array2::from_elem((n, 1), 0.3);
    let ab_t = s.alpha_bar[100];
    let mut x = q_sample(&s, &x0, 100, &mut rng).unwrap().x_t;
    for t in (1..=100).rev() {
        x = posterior_sample(&s, &x, &x0, t, &mut rng).unwrap();
        if t - 1 == 40 {
            let ab = s.alpha_bar[40];
            let mean = x.mean().unwrap();
            let var = x.var(1.0);
            let se = ((1.0 - ab) / n as f64).sqrt();
            assert!((mean - ab.sqrt() * 0.3).abs() < 4.0 * se);
            // Variance of a sample variance is about 2 var^2 / n.
            assert!((var - (1.0 - ab)).abs() < 4.0 * (2.0 / n as f64).sqrt() * (1.0 - ab));
        }
    }
    assert!(ab_t < 0.01);
    let mean = x.mean().unwrap();
    let sd = x.std(1.0);
    assert!((mean - 0.3).abs() <= 4.0 * sd / (n as f64).sqrt() + 1e-12);
}

#[test]
fn discrete_forward_survival_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y0 = vec![1usize; 20_000];
    for s in [1, 2, 3] {
        let stay = DEFAULT_BETA_DISC.powi(s as i32);
        let out = q_sample_discrete(&y0, s, stay, 4, &mut rng);
        let kept = out.y.iter().filter(|&&c| c == 1).count() as f64 / y0.len() as f64;
        assert!(out.y.iter().all(|&c| c == 1 || c == 4));
        assert!((kept - stay).abs() < 4.0 * (stay * (1.0 - stay) / y0.len() as f64).sqrt());
    }
}

proptest! {
    #[test]
    fn posterior_rows_are_distributions(k in 2usize..6, s in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p0 = positive_rows(4, k, &mut rng);
        let y_s: Vec<usize> = (0..4).map(|_| rng.random_range(0..=k)).collect();
        let post = reverse_posterior(&y_s, &p0, s, DEFAULT_BETA_DISC).unwrap();
        for (i, row) in post.rows().into_iter().enumerate() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            if y_s[i] < k {
                prop_assert_eq!(row[y_s[i]], 1.0);
            }
        }
    }

    #[test]
    fn discrete_step_advances_once_per_stride(t in 1usize..=1000) {
        let s = discrete_step_of(t);
        prop_assert!(s * 10 <= t && t < (s + 1) * 10);
        prop_assert_eq!(discrete_step_of(t - 1) + usize::from(t % 10 == 0), s);
    }
}

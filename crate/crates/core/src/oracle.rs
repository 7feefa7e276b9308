//! Monte-Carlo reference for the closed-form marginal likelihood, built on
//! constructive Wishart sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matrix::{spd_factor, SpdFactor, SymMatrix};
use crate::prior::NWPrior;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const CHUNK: usize = 8192;

/// Draws `W = Σ_{i=1..α} y_i y_iᵀ` with each `y_i` normal with mean zero
/// and precision `T₀`.
#[derive(Debug, Clone)]
pub struct WishartSampler {
    t0_factor: SpdFactor,
    dof: usize,
}

impl WishartSampler {
    pub fn new(t0: &SymMatrix, alpha: f64) -> Result<Self> {
        let n = t0.order();
        if alpha.fract() != 0.0 || alpha < n as f64 || alpha < 1.0 {
            return Err(Error::NonIntegerAlpha(alpha));
        }
        Ok(Self {
            t0_factor: spd_factor(t0)?,
            dof: alpha as usize,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SymMatrix {
        let n = self.t0_factor.order();
        let mut w = SymMatrix::zeros(n);
        let mut z = vec![0.0; n];
        for _ in 0..self.dof {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            // T₀ = L Lᵀ, so L⁻ᵀ z has covariance T₀⁻¹
            let y = self.t0_factor.solve_upper(&z);
            for i in 0..n {
                for j in i..n {
                    let s = w.get(i, j) + y[i] * y[j];
                    w.set(i, j, s);
                }
            }
        }
        w
    }
}

/// Log-domain Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    /// `ln` of the averaged data likelihood.
    pub estimate: f64,
    /// Standard error of `estimate` (delta method on the average).
    pub stderr: f64,
}

/// Averages the complete-data likelihood over draws from the normal-Wishart
/// prior: `W ~ Wishart(α, T₀)`, `m | W ~ N(μ₀, (νW)⁻¹)`. Requires integer
/// `α ≥ n`. Draws are split into fixed-size chunks seeded from `seed`, so
/// the result does not depend on thread scheduling.
pub fn mc_marginal_oracle(
    prior: &NWPrior,
    d: &Dataset,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let prior = prior.restrict_to(d.variables())?;
    let n = prior.dim();
    let sampler = WishartSampler::new(&prior.t0, prior.alpha)?;
    if samples == 0 {
        return Err(Error::EmptyInput);
    }
    if d.is_empty() || n == 0 {
        return Ok(McEstimate {
            estimate: 0.0,
            stderr: 0.0,
        });
    }
    let chunks = samples.div_ceil(CHUNK);
    let logs: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(samples - c * CHUNK);
            let sampler = &sampler;
            let prior = &prior;
            (0..count)
                .map(move |_| draw_log_likelihood(sampler, prior, d, &mut rng))
                .collect::<Vec<_>>()
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let k = scaled.len() as f64;
    let mean = scaled.iter().sum::<f64>() / k;
    let var = scaled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    Ok(McEstimate {
        estimate: max + mean.ln(),
        stderr: (var / k).sqrt() / mean,
    })
}

fn draw_log_likelihood(
    sampler: &WishartSampler,
    prior: &NWPrior,
    d: &Dataset,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let n = prior.dim();
    let w = sampler.sample(rng);
    let Ok(f) = spd_factor(&w) else {
        // singular draws have probability zero for α ≥ n
        return f64::NEG_INFINITY;
    };
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let offset = f.solve_upper(&z);
    let scale = prior.nu.sqrt();
    let mean: Vec<f64> = prior
        .mu0
        .iter()
        .zip(&offset)
        .map(|(m, o)| m + o / scale)
        .collect();
    let half_log_det = 0.5 * f.log_det();
    let mut total = 0.0;
    for case in d.cases() {
        // (x - m)ᵀ W (x - m) = |Lᵀ (x - m)|²
        let diff: Vec<f64> = case.iter().zip(&mean).map(|(x, m)| x - m).collect();
        let mut q = 0.0;
        for j in 0..n {
            let s: f64 = (j..n).map(|i| f.get(i, j) * diff[i]).sum();
            q += s * s;
        }
        total += -0.5 * n as f64 * LN_2PI + half_log_det - 0.5 * q;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bge::log_marginal_complete;

    #[test]
    fn wishart_mean_is_alpha_times_inverse_t0() {
        let t0 = SymMatrix::from_rows(&[[2.0, 0.5], [0.5, 1.0]]).unwrap();
        let s = WishartSampler::new(&t0, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 40_000;
        let mut acc = SymMatrix::zeros(2);
        for _ in 0..draws {
            acc = acc.add(&s.sample(&mut rng)).unwrap();
        }
        let mean = acc.scaled(1.0 / draws as f64);
        let expected = crate::matrix::invert_spd(&t0).unwrap().scaled(5.0);
        assert!(
            mean.max_abs_diff(&expected) < 0.05,
            "{mean:?} vs {expected:?}"
        );
    }

    #[test]
    fn rejects_fractional_or_small_alpha() {
        let t0 = SymMatrix::identity(3);
        assert!(matches!(
            WishartSampler::new(&t0, 4.5),
            Err(Error::NonIntegerAlpha(_))
        ));
        assert!(matches!(
            WishartSampler::new(&t0, 2.0),
            Err(Error::NonIntegerAlpha(_))
        ));
    }

    #[test]
    fn no_cases_gives_unit_density() {
        let p = NWPrior::unnamed(vec![0.0], SymMatrix::identity(1), 1.0, 2.0).unwrap();
        let d = Dataset::empty(vec!["x1".into()]).unwrap();
        let e = mc_marginal_oracle(&p, &d, 10, 0).unwrap();
        assert_eq!(e.estimate, 0.0);
    }

    #[test]
    fn toy_case_agrees_with_closed_form() {
        let p = NWPrior::unnamed(vec![0.0], SymMatrix::identity(1), 1.0, 2.0).unwrap();
        let d = Dataset::new(vec!["x1".into()], vec![vec![0.0]]).unwrap();
        let e = mc_marginal_oracle(&p, &d, 200_000, 11).unwrap();
        let exact = log_marginal_complete(&p, &d).unwrap();
        assert!(
            (e.estimate - exact).abs() < 3.0 * e.stderr + 1e-12,
            "{e:?} vs {exact}"
        );
        assert!(e.stderr < 0.01);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let p = NWPrior::unnamed(vec![0.0], SymMatrix::identity(1), 1.0, 2.0).unwrap();
        let d = Dataset::new(vec!["x1".into()], vec![vec![0.3], vec![-0.2]]).unwrap();
        let a = mc_marginal_oracle(&p, &d, 20_000, 5).unwrap();
        let b = mc_marginal_oracle(&p, &d, 20_000, 5).unwrap();
        assert_eq!(a, b);
    }
}

//! The BGe metric: normal-Wishart updates, closed-form marginal likelihood of
//! complete data, and the per-family decomposition used to score arbitrary
//! structures.
//!
//! Everything is kept in natural-log space; [`ln_to_sci`] converts to
//! base-10 scientific notation for display only.

use std::collections::HashMap;
use std::f64::consts::{LN_2, PI};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use serde::Serialize;
use sha2::{Digest, Sha256};
use statrs::function::gamma::ln_gamma;

use crate::dag::{bits, Dag};
use crate::dataset::{Dataset, SufficientStats};
use crate::error::{Error, Result};
use crate::matrix::{log_det, SymMatrix};
use crate::prior::{log_structure_prior, NWPrior, StructurePriorPolicy};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log of the Wishart normalizing constant
/// `c(n, α) = [2^(αn/2) π^(n(n-1)/4) Π_{i=1..n} Γ((α+1-i)/2)]⁻¹`.
pub fn log_c(n: usize, alpha: f64) -> Result<f64> {
    let nf = n as f64;
    let mut acc = alpha * nf / 2.0 * LN_2 + nf * (nf - 1.0) / 4.0 * PI.ln();
    for i in 1..=n {
        let arg = (alpha + 1.0 - i as f64) / 2.0;
        if !(arg > 0.0) {
            return Err(Error::Domain(format!(
                "gamma argument {arg} at n = {n}, alpha = {alpha}"
            )));
        }
        acc += ln_gamma(arg);
    }
    Ok(-acc)
}

/// Posterior normal-Wishart hyperparameters after `l` cases.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorNW {
    pub mu_l: Vec<f64>,
    pub t_l: SymMatrix,
    pub nu_l: f64,
    pub alpha_l: f64,
}

impl PosteriorNW {
    /// The posterior read as a prior for further cases.
    pub fn as_prior(&self, variables: Vec<String>) -> Result<NWPrior> {
        NWPrior::new(
            variables,
            self.mu_l.clone(),
            self.t_l.clone(),
            self.nu_l,
            self.alpha_l,
        )
    }
}

/// Conjugate update:
/// `μ_l = (ν μ₀ + l x̄)/(ν + l)`,
/// `T_l = T₀ + S + νl/(ν + l) (μ₀ - x̄)(μ₀ - x̄)ᵀ`,
/// `ν_l = ν + l`, `α_l = α + l`.
pub fn update_posterior(prior: &NWPrior, s: &SufficientStats) -> Result<PosteriorNW> {
    let n = prior.dim();
    for found in [s.mean.len(), s.scatter.order()] {
        if found != n {
            return Err(Error::DimensionMismatch { expected: n, found });
        }
    }
    let l = s.count as f64;
    let nu = prior.nu;
    let (mu_l, t_l) = if s.count == 0 {
        (prior.mu0.clone(), prior.t0.clone())
    } else {
        let mu_l = prior
            .mu0
            .iter()
            .zip(&s.mean)
            .map(|(m0, xb)| (nu * m0 + l * xb) / (nu + l))
            .collect();
        let diff: Vec<f64> = prior.mu0.iter().zip(&s.mean).map(|(a, b)| a - b).collect();
        let t_l = prior
            .t0
            .add(&s.scatter)?
            .add_outer(nu * l / (nu + l), &diff)?;
        (mu_l, t_l)
    };
    Ok(PosteriorNW {
        mu_l,
        t_l,
        nu_l: nu + l,
        alpha_l: prior.alpha + l,
    })
}

/// Log marginal likelihood of complete data summarized by `s`, for a prior
/// of matching dimension:
///
/// `-(nm/2) ln 2π + (n/2) ln(ν/(ν+m)) + ln c(n,α) - ln c(n,α+m)
///  + (α/2) ln|T₀| - ((α+m)/2) ln|T_m|`.
///
/// Zero variables or zero cases give 0 (a density of one).
pub fn log_marginal_from_stats(prior: &NWPrior, s: &SufficientStats) -> Result<f64> {
    let n = prior.dim();
    if n == 0 || s.count == 0 {
        if s.mean.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: s.mean.len(),
            });
        }
        return Ok(0.0);
    }
    let post = update_posterior(prior, s)?;
    let (nf, m) = (n as f64, s.count as f64);
    let (nu, alpha) = (prior.nu, prior.alpha);
    Ok(
        -nf * m / 2.0 * LN_2PI + nf / 2.0 * (nu / (nu + m)).ln() + log_c(n, alpha)?
            - log_c(n, alpha + m)?
            + alpha / 2.0 * log_det(&prior.t0)?
            - (alpha + m) / 2.0 * log_det(&post.t_l)?,
    )
}

/// Log marginal likelihood of `d` under the complete-network event. The
/// prior is restricted by name to the dataset's variables, so projected
/// datasets score against the matching block of `μ₀` and `T₀`.
pub fn log_marginal_complete(prior: &NWPrior, d: &Dataset) -> Result<f64> {
    let restricted = prior.restrict_to(d.variables())?;
    log_marginal_from_stats(&restricted, &d.stats())
}

/// Log predictive density of one case: the multivariate t written as
/// `(2π)^(-n/2) (ν/(ν+1))^(n/2) c(n,α)/c(n,α+1) |T₀|^(α/2) |T₁|^(-(α+1)/2)`.
pub fn log_predictive(prior: &NWPrior, case: &[f64]) -> Result<f64> {
    let n = prior.dim();
    if case.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: case.len(),
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let nu = prior.nu;
    let alpha = prior.alpha;
    let diff: Vec<f64> = prior.mu0.iter().zip(case).map(|(a, b)| a - b).collect();
    let t1 = prior.t0.add_outer(nu / (nu + 1.0), &diff)?;
    let nf = n as f64;
    Ok(
        -nf / 2.0 * LN_2PI + nf / 2.0 * (nu / (nu + 1.0)).ln() + log_c(n, alpha)?
            - log_c(n, alpha + 1.0)?
            + alpha / 2.0 * log_det(&prior.t0)?
            - (alpha + 1.0) / 2.0 * log_det(&t1)?,
    )
}

/// Cache key of one family term. The digest covers the dataset and the
/// prior hyperparameters it is scored under.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LocalScoreKey {
    pub child: String,
    pub parents: Vec<String>,
    pub dataset_digest: [u8; 32],
}

/// Thread-safe memo of family scores.
#[derive(Debug, Default)]
pub struct ScoreCache {
    map: RwLock<HashMap<LocalScoreKey, f64>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl ScoreCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &LocalScoreKey) -> Option<f64> {
        let v = self.map.read().expect("cache lock").get(key).copied();
        if v.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        }
        v
    }

    /// Inserts unless present; returns the stored value either way.
    pub fn insert_if_absent(&self, key: LocalScoreKey, value: f64) -> f64 {
        *self
            .map
            .write()
            .expect("cache lock")
            .entry(key)
            .or_insert(value)
    }

    pub fn get_or_try_insert(
        &self,
        key: LocalScoreKey,
        compute: impl FnOnce() -> Result<f64>,
    ) -> Result<f64> {
        if let Some(v) = self.get(&key) {
            return Ok(v);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = compute()?;
        Ok(self.insert_if_absent(key, v))
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

/// Scores structures over one dataset and prior, reusing family terms
/// through a shared cache. Subset statistics come from restricting the
/// full-data statistics.
#[derive(Debug)]
pub struct BgeScorer<'c> {
    variables: Vec<String>,
    prior: NWPrior,
    stats: SufficientStats,
    digest: [u8; 32],
    cache: &'c ScoreCache,
}

impl<'c> BgeScorer<'c> {
    pub fn new(d: &Dataset, prior: &NWPrior, cache: &'c ScoreCache) -> Result<Self> {
        let prior = prior.restrict_to(d.variables())?;
        let mut h = Sha256::new();
        h.update(d.digest());
        h.update(prior.nu.to_bits().to_le_bytes());
        h.update(prior.alpha.to_bits().to_le_bytes());
        for v in &prior.mu0 {
            h.update(v.to_bits().to_le_bytes());
        }
        for row in prior.t0.to_rows() {
            for v in row {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        Ok(Self {
            variables: d.variables().to_vec(),
            stats: d.stats(),
            prior,
            digest: h.finalize().into(),
            cache,
        })
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn prior(&self) -> &NWPrior {
        &self.prior
    }

    pub fn cache(&self) -> &ScoreCache {
        self.cache
    }

    /// Log marginal of the data restricted to `subset` (uncached).
    pub fn log_marginal_subset(&self, subset: &[usize]) -> Result<f64> {
        log_marginal_from_stats(&self.prior.restrict(subset)?, &self.stats.restrict(subset)?)
    }

    pub fn key(&self, child: usize, parents: u64) -> LocalScoreKey {
        let mut names: Vec<String> = bits(parents).map(|p| self.variables[p].clone()).collect();
        names.sort();
        LocalScoreKey {
            child: self.variables[child].clone(),
            parents: names,
            dataset_digest: self.digest,
        }
    }

    /// `ln ρ(D^{child ∪ parents}) - ln ρ(D^{parents})`, memoized.
    pub fn local_score(&self, child: usize, parents: u64) -> Result<f64> {
        let n = self.variables.len();
        if child >= n {
            return Err(Error::IndexOutOfRange {
                index: child,
                order: n,
            });
        }
        if parents & (1 << child) != 0 {
            return Err(Error::SelfLoop(self.variables[child].clone()));
        }
        if n < 64 && parents >> n != 0 {
            return Err(Error::IndexOutOfRange {
                index: 63 - parents.leading_zeros() as usize,
                order: n,
            });
        }
        self.cache.get_or_try_insert(self.key(child, parents), || {
            let ps: Vec<usize> = bits(parents).collect();
            let mut family = ps.clone();
            family.push(child);
            Ok(self.log_marginal_subset(&family)? - self.log_marginal_subset(&ps)?)
        })
    }

    /// Per-variable family terms and their sum.
    pub fn score_dag(&self, dag: &Dag) -> Result<(Vec<f64>, f64)> {
        if dag.variables() != self.variables.as_slice() {
            return Err(Error::VariableMismatch);
        }
        let terms = (0..dag.len())
            .map(|i| self.local_score(i, dag.parent_mask(i)))
            .collect::<Result<Vec<_>>>()?;
        let total = terms.iter().sum();
        Ok((terms, total))
    }
}

/// Family term for `child` given `parents`, by name.
pub fn local_score<S: AsRef<str>>(
    child: &str,
    parents: &[S],
    d: &Dataset,
    prior: &NWPrior,
    cache: &ScoreCache,
) -> Result<f64> {
    let scorer = BgeScorer::new(d, prior, cache)?;
    let c = d
        .index_of(child)
        .ok_or_else(|| Error::UnknownVariable(child.to_string()))?;
    let mask = d
        .indices_of(parents)?
        .into_iter()
        .fold(0u64, |m, p| m | 1 << p);
    if parents.iter().any(|p| p.as_ref() == child) {
        return Err(Error::SelfLoop(child.to_string()));
    }
    scorer.local_score(c, mask)
}

/// Score of one structure: log prior plus the sum of its family terms.
#[derive(Debug, Clone, Serialize)]
pub struct StructureScore {
    #[serde(skip)]
    pub dag: Dag,
    pub log_prior: f64,
    pub log_marginal: f64,
    pub local_terms: Vec<f64>,
}

impl StructureScore {
    pub fn log_score(&self) -> f64 {
        self.log_prior + self.log_marginal
    }
}

/// Scores `dag` against `d`. `dag` must be a member of `universe`, which
/// defines the structure prior.
pub fn score_structure(
    dag: &Dag,
    d: &Dataset,
    prior: &NWPrior,
    policy: StructurePriorPolicy,
    universe: &[Dag],
    cache: &ScoreCache,
) -> Result<StructureScore> {
    let dag = if dag.variables() == d.variables() {
        dag.clone()
    } else {
        dag.reindexed(d.variables())?
    };
    let universe: Vec<Dag> = universe
        .iter()
        .map(|u| {
            if u.variables() == d.variables() {
                Ok(u.clone())
            } else {
                u.reindexed(d.variables())
            }
        })
        .collect::<Result<_>>()?;
    let log_prior = log_structure_prior(policy, &dag, &universe)?;
    let scorer = BgeScorer::new(d, prior, cache)?;
    let (local_terms, log_marginal) = scorer.score_dag(&dag)?;
    Ok(StructureScore {
        dag,
        log_prior,
        log_marginal,
        local_terms,
    })
}

/// Normalized posterior probabilities of a set of scored structures.
pub fn posterior_over_set(scores: &[StructureScore]) -> Result<Vec<f64>> {
    normalize_log_weights(
        &scores
            .iter()
            .map(StructureScore::log_score)
            .collect::<Vec<_>>(),
    )
}

/// Max-shifted softmax.
pub fn normalize_log_weights(logs: &[f64]) -> Result<Vec<f64>> {
    if logs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Domain("non-finite log weight".into()));
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Renders a natural-log value as a base-10 number such as `3.5e-88`.
pub fn ln_to_sci(ln_value: f64) -> String {
    if !ln_value.is_finite() {
        return format!("{}", ln_value.exp());
    }
    let l10 = ln_value / std::f64::consts::LN_10;
    let mut exp = l10.floor();
    let mut mantissa = 10f64.powf(l10 - exp);
    if format!("{mantissa:.2}") == "10.00" {
        mantissa = 1.0;
        exp += 1.0;
    }
    format!("{mantissa:.2}e{}", exp as i64)
}

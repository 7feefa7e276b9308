//! Normal-Wishart hyperparameters elicited from a prior network, and
//! structure priors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dag::{partition_classes, Dag};
use crate::error::{Error, Result};
use crate::matrix::{spd_factor, submatrix, subvector, SymMatrix};
use crate::network::{read_text, GaussianNetwork, NetworkSpec};

/// A prior network together with the equivalent sample sizes for the mean
/// (`nu`) and for the precision (`alpha`).
#[derive(Debug, Clone)]
pub struct PriorSpec {
    pub prior_network: GaussianNetwork,
    pub nu: f64,
    pub alpha: f64,
}

/// Normal-Wishart hyperparameters: `m | W ~ N(mu0, (nu W)⁻¹)`,
/// `W ~ Wishart(alpha, t0)` with density proportional to
/// `|W|^((alpha-n-1)/2) exp(-tr(t0 W)/2)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NWPrior {
    pub variables: Vec<String>,
    pub mu0: Vec<f64>,
    pub t0: SymMatrix,
    pub nu: f64,
    pub alpha: f64,
}

impl NWPrior {
    /// Validates `t0` positive definite, `nu > 0` and `alpha > n - 1`.
    pub fn new(
        variables: Vec<String>,
        mu0: Vec<f64>,
        t0: SymMatrix,
        nu: f64,
        alpha: f64,
    ) -> Result<Self> {
        let n = variables.len();
        for found in [mu0.len(), t0.order()] {
            if found != n {
                return Err(Error::DimensionMismatch { expected: n, found });
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = variables.iter().find(|v| !seen.insert(v.as_str())) {
            return Err(Error::DuplicateVariableName(dup.clone()));
        }
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::NuNotPositive(nu));
        }
        if !(alpha > n as f64 - 1.0) || !alpha.is_finite() {
            return Err(Error::AlphaBelowDimension { alpha, n });
        }
        if n > 0 {
            spd_factor(&t0)?;
        }
        Ok(Self {
            variables,
            mu0,
            t0,
            nu,
            alpha,
        })
    }

    /// Same as [`NWPrior::new`] with variables named `x1..xn`.
    pub fn unnamed(mu0: Vec<f64>, t0: SymMatrix, nu: f64, alpha: f64) -> Result<Self> {
        let names = (1..=mu0.len()).map(|i| format!("x{i}")).collect();
        Self::new(names, mu0, t0, nu, alpha)
    }

    pub fn dim(&self) -> usize {
        self.variables.len()
    }

    /// Restriction of `mu0` and `t0` to the variables at `keep`; `nu` and
    /// `alpha` are left unchanged.
    pub fn restrict(&self, keep: &[usize]) -> Result<NWPrior> {
        Ok(NWPrior {
            variables: keep.iter().map(|&k| self.variables[k].clone()).collect(),
            mu0: subvector(&self.mu0, keep),
            t0: submatrix(&self.t0, keep)?,
            nu: self.nu,
            alpha: self.alpha,
        })
    }

    /// Restriction (or permutation) by variable name.
    pub fn restrict_to<S: AsRef<str>>(&self, names: &[S]) -> Result<NWPrior> {
        let keep = names
            .iter()
            .map(|n| {
                self.variables
                    .iter()
                    .position(|v| v == n.as_ref())
                    .ok_or_else(|| Error::UnknownVariable(n.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        self.restrict(&keep)
    }

    /// Reads either a prior-network file (network JSON plus `nu` and
    /// `alpha`) or a direct hyperparameter file with fields `variables`,
    /// `mu0`, `t0`, `nu`, `alpha`.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if value.get("t0").is_some() {
            let f: DirectPriorFile =
                serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
            let t0 = SymMatrix::from_rows(&f.t0)?;
            NWPrior::new(f.variables, f.mu0, t0, f.nu, f.alpha)
        } else {
            elicit(&PriorSpecFile::from_value(value)?.into_spec()?)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_text(path.as_ref())?)
    }
}

#[derive(Debug, Deserialize)]
struct DirectPriorFile {
    variables: Vec<String>,
    mu0: Vec<f64>,
    t0: Vec<Vec<f64>>,
    nu: f64,
    alpha: f64,
}

/// Prior-network file: the network format plus `nu` and `alpha`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorSpecFile {
    #[serde(flatten)]
    pub network: NetworkSpec,
    pub nu: f64,
    pub alpha: f64,
}

impl PriorSpecFile {
    fn from_value(value: serde_json::Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn into_spec(self) -> Result<PriorSpec> {
        Ok(PriorSpec {
            prior_network: self.network.to_network()?,
            nu: self.nu,
            alpha: self.alpha,
        })
    }
}

/// Turns a prior network into normal-Wishart hyperparameters: `mu0` is the
/// vector of network means and
/// `t0 = nu (alpha - n - 1) / (nu + 1) · Σ`, with `Σ` the covariance the
/// network implies.
pub fn elicit(spec: &PriorSpec) -> Result<NWPrior> {
    let net = &spec.prior_network;
    let n = net.len();
    if !(spec.nu > 0.0) || !spec.nu.is_finite() {
        return Err(Error::NuNotPositive(spec.nu));
    }
    if !(spec.alpha > n as f64 + 1.0) || !spec.alpha.is_finite() {
        return Err(Error::AlphaTooSmall {
            alpha: spec.alpha,
            n,
        });
    }
    let scale = spec.nu * (spec.alpha - n as f64 - 1.0) / (spec.nu + 1.0);
    let t0 = net.implied_covariance()?.scaled(scale);
    NWPrior::new(
        net.variables().to_vec(),
        net.params().means.clone(),
        t0,
        spec.nu,
        spec.alpha,
    )
}

/// Prior over structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructurePriorPolicy {
    /// Every labeled DAG equally likely.
    UniformStructures,
    /// Every equivalence class equally likely.
    #[default]
    UniformClasses,
}

impl StructurePriorPolicy {
    pub fn name(self) -> &'static str {
        match self {
            Self::UniformStructures => "uniform-structures",
            Self::UniformClasses => "uniform-classes",
        }
    }

    /// Log prior of any one structure on `n` variables when the universe is
    /// all DAGs on those variables, if the relevant count is known.
    pub fn log_uniform(self, n: usize) -> Option<f64> {
        match self {
            Self::UniformStructures => Some(-log_dag_count(n)),
            Self::UniformClasses => CLASS_COUNTS.get(n).map(|&c| -(c as f64).ln()),
        }
    }
}

impl std::str::FromStr for StructurePriorPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-structures" => Ok(Self::UniformStructures),
            "uniform-classes" => Ok(Self::UniformClasses),
            other => Err(Error::Parse(format!("unknown structure prior '{other}'"))),
        }
    }
}

/// Number of equivalence classes of DAGs on 0..=6 labeled nodes.
const CLASS_COUNTS: [u64; 7] = [1, 1, 2, 11, 185, 8782, 1_067_825];

/// `ln` of the number of labeled DAGs on `n` nodes, by Robinson's recurrence
/// `a(n) = Σ_k (-1)^(k+1) C(n,k) 2^(k(n-k)) a(n-k)`, evaluated in log space
/// once the counts leave the exact range of `u128`.
pub fn log_dag_count(n: usize) -> f64 {
    let mut exact: Vec<Option<u128>> = vec![Some(1)];
    let mut logs: Vec<f64> = vec![0.0];
    for m in 1..=n {
        let mut total: Option<i128> = Some(0);
        for k in 1..=m {
            let term = (|| {
                let c = binom_u128(m, k)?;
                let p = 1u128.checked_shl((k * (m - k)) as u32)?;
                if k * (m - k) >= 127 {
                    return None;
                }
                let a = exact[m - k]?;
                i128::try_from(c.checked_mul(p)?.checked_mul(a)?).ok()
            })();
            total = match (total, term) {
                (Some(t), Some(x)) => {
                    if k % 2 == 1 {
                        t.checked_add(x)
                    } else {
                        t.checked_sub(x)
                    }
                }
                _ => None,
            };
        }
        match total {
            Some(t) if t > 0 => {
                exact.push(Some(t as u128));
                logs.push((t as f64).ln());
            }
            _ => {
                exact.push(None);
                // Alternating sum is dominated by its k = 1 term's scale; sum
                // with signs after factoring out the largest magnitude.
                let terms: Vec<(f64, f64)> = (1..=m)
                    .map(|k| {
                        let lt = ln_binom(m, k)
                            + (k * (m - k)) as f64 * std::f64::consts::LN_2
                            + logs[m - k];
                        (if k % 2 == 1 { 1.0 } else { -1.0 }, lt)
                    })
                    .collect();
                let max = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = terms.iter().map(|(sgn, lt)| sgn * (lt - max).exp()).sum();
                logs.push(max + s.ln());
            }
        }
    }
    logs[n]
}

fn binom_u128(n: usize, k: usize) -> Option<u128> {
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(r)
}

fn ln_binom(n: usize, k: usize) -> f64 {
    (0..k)
        .map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln())
        .sum()
}

/// Log prior of `dag` within an explicit universe of structures. Under
/// `UniformClasses` every structure gets `-ln(#classes)`, so each class
/// carries one unit of prior mass regardless of its size.
pub fn log_structure_prior(
    policy: StructurePriorPolicy,
    dag: &Dag,
    universe: &[Dag],
) -> Result<f64> {
    if !universe.iter().any(|d| d == dag) {
        return Err(Error::DagNotInUniverse);
    }
    Ok(match policy {
        StructurePriorPolicy::UniformStructures => -(universe.len() as f64).ln(),
        StructurePriorPolicy::UniformClasses => -(partition_classes(universe)?.len() as f64).ln(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::enumerate_dags;
    use crate::network::GaussianParams;
    use std::collections::BTreeMap;

    const PRIOR: &str = include_str!("../../../data/worked_example_prior.json");

    fn worked_spec() -> PriorSpec {
        PriorSpecFile::from_json(PRIOR)
            .unwrap()
            .into_spec()
            .unwrap()
    }

    fn no_arc_spec(variances: &[f64], means: &[f64], nu: f64, alpha: f64) -> PriorSpec {
        let n = variances.len();
        let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let net = GaussianNetwork::new(
            Dag::empty(names).unwrap(),
            GaussianParams {
                means: means.to_vec(),
                cond_variances: variances.to_vec(),
                coefficients: vec![BTreeMap::new(); n],
            },
        )
        .unwrap();
        PriorSpec {
            prior_network: net,
            nu,
            alpha,
        }
    }

    #[test]
    fn worked_example_t0() {
        let p = elicit(&worked_spec()).unwrap();
        let a = 12.0 / 7.0;
        let expected = SymMatrix::from_rows(&[[a, 0.0, a], [0.0, a, a], [a, a, 3.0 * a]]).unwrap();
        assert!(p.t0.max_abs_diff(&expected) < 1e-12);
        assert_eq!(p.mu0, vec![0.1, -0.3, 0.2]);
        assert_eq!((p.nu, p.alpha), (6.0, 6.0));
        // printed values are rounded to one decimal
        let printed =
            SymMatrix::from_rows(&[[1.7, 0.0, 1.7], [0.0, 1.7, 1.7], [1.7, 1.7, 5.1]]).unwrap();
        assert!(p.t0.max_abs_diff(&printed) < 0.05);
    }

    #[test]
    fn small_elicitations() {
        let p = elicit(&no_arc_spec(&[1.0, 1.0], &[0.0, 0.0], 3.0, 5.0)).unwrap();
        assert_eq!(p.t0, SymMatrix::identity(2).scaled(1.5));
        let p = elicit(&no_arc_spec(&[2.0], &[0.0], 1.0, 4.0)).unwrap();
        assert!((p.t0.get(0, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn alpha_must_exceed_n_plus_one() {
        let err = elicit(&no_arc_spec(&[1.0, 1.0], &[0.0, 0.0], 1.0, 3.0)).unwrap_err();
        assert!(matches!(err, Error::AlphaTooSmall { .. }));
        assert!(err.to_string().contains("alpha must exceed n+1"));
        assert!(matches!(
            elicit(&no_arc_spec(&[1.0], &[0.0], 0.0, 4.0)),
            Err(Error::NuNotPositive(_))
        ));
    }

    #[test]
    fn elicitation_inverts_covariance_scaling() {
        let spec = worked_spec();
        let p = elicit(&spec).unwrap();
        let n = 3.0;
        let back = p.t0.scaled((p.nu + 1.0) / (p.nu * (p.alpha - n - 1.0)));
        let cov = spec.prior_network.implied_covariance().unwrap();
        assert!(back.max_abs_diff(&cov) < 1e-12);
    }

    #[test]
    fn shifting_means_only_moves_mu0() {
        let a = elicit(&no_arc_spec(&[1.0, 2.0], &[0.0, 0.0], 2.0, 6.0)).unwrap();
        let b = elicit(&no_arc_spec(&[1.0, 2.0], &[3.0, 3.0], 2.0, 6.0)).unwrap();
        assert_eq!(a.t0, b.t0);
        assert_eq!(b.mu0, vec![3.0, 3.0]);
    }

    #[test]
    fn direct_hyperparameters_allow_weaker_alpha() {
        let text = r#"{"variables":["x"],"mu0":[0],"t0":[[1]],"nu":1,"alpha":2}"#;
        let p = NWPrior::from_json(text).unwrap();
        assert_eq!(p.alpha, 2.0);
        let bad = r#"{"variables":["x"],"mu0":[0],"t0":[[1]],"nu":1,"alpha":0}"#;
        assert!(matches!(
            NWPrior::from_json(bad),
            Err(Error::AlphaBelowDimension { .. })
        ));
        let p = NWPrior::from_json(PRIOR).unwrap();
        assert!((p.t0.get(2, 2) - 36.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn restrict_by_name() {
        let p = elicit(&worked_spec()).unwrap();
        let r = p.restrict_to(&["x3", "x1"]).unwrap();
        assert_eq!(r.mu0, vec![0.2, 0.1]);
        assert!((r.t0.get(0, 0) - 36.0 / 7.0).abs() < 1e-12);
        assert!(p.restrict_to(&["zz"]).is_err());
    }

    #[test]
    fn structure_priors() {
        let universe = enumerate_dags(3).unwrap();
        for d in &universe {
            let lc =
                log_structure_prior(StructurePriorPolicy::UniformClasses, d, &universe).unwrap();
            assert!((lc + 11f64.ln()).abs() < 1e-15);
            let ls =
                log_structure_prior(StructurePriorPolicy::UniformStructures, d, &universe).unwrap();
            assert!((ls + 25f64.ln()).abs() < 1e-15);
        }
        let single = vec![universe[0].clone()];
        assert_eq!(
            log_structure_prior(StructurePriorPolicy::UniformClasses, &universe[0], &single)
                .unwrap(),
            0.0
        );
        assert!(matches!(
            log_structure_prior(StructurePriorPolicy::UniformClasses, &universe[3], &single),
            Err(Error::DagNotInUniverse)
        ));
    }

    #[test]
    fn dag_counts() {
        let known = [1u64, 1, 3, 25, 543, 29281, 3_781_503, 1_138_779_265];
        for (n, &c) in known.iter().enumerate() {
            assert!(
                (log_dag_count(n) - (c as f64).ln()).abs() < 1e-12,
                "n = {n}"
            );
        }
        for n in 0..=4 {
            let direct = if n == 0 {
                1
            } else {
                enumerate_dags(n).unwrap().len()
            };
            assert!((log_dag_count(n) - (direct as f64).ln()).abs() < 1e-12);
        }
        // large n stays finite and increasing
        let big: Vec<f64> = (10..40).map(log_dag_count).collect();
        assert!(big.windows(2).all(|w| w[1] > w[0] && w[1].is_finite()));
    }

    #[test]
    fn class_count_table_matches_enumeration() {
        for n in 1..=4 {
            let classes = partition_classes(&enumerate_dags(n).unwrap())
                .unwrap()
                .len();
            assert_eq!(classes as u64, CLASS_COUNTS[n]);
        }
        assert_eq!(StructurePriorPolicy::UniformClasses.log_uniform(7), None);
    }
}

//! Gaussian belief networks: linear-Gaussian conditionals on a DAG, their
//! precision-matrix form, and ancestral sampling.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dag::{topological_order_of, Dag};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matrix::{invert_spd, SymMatrix};

/// Means, conditional variances and arc coefficients of a network.
///
/// `coefficients[child]` maps each parent index of `child` to the slope of
/// the child on that parent. Absent arcs have coefficient zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub means: Vec<f64>,
    pub cond_variances: Vec<f64>,
    pub coefficients: Vec<BTreeMap<usize, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNetwork {
    dag: Dag,
    params: GaussianParams,
}

impl GaussianNetwork {
    pub fn new(dag: Dag, params: GaussianParams) -> Result<Self> {
        let n = dag.len();
        for (what, len) in [
            ("means", params.means.len()),
            ("variances", params.cond_variances.len()),
            ("coefficients", params.coefficients.len()),
        ] {
            if len != n {
                return Err(Error::InvalidNetwork(format!(
                    "{what}: expected {n} entries, found {len}"
                )));
            }
        }
        for (i, &v) in params.cond_variances.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NonPositiveVariance {
                    variable: dag.variables()[i].clone(),
                    value: v,
                });
            }
        }
        for child in 0..n {
            let keys: Vec<usize> = params.coefficients[child].keys().copied().collect();
            if keys != dag.parents(child) {
                return Err(Error::InvalidNetwork(format!(
                    "coefficients of '{}' do not match its parents",
                    dag.variables()[child]
                )));
            }
            if params.coefficients[child].values().any(|b| !b.is_finite()) {
                return Err(Error::InvalidNetwork("non-finite coefficient".into()));
            }
        }
        if params.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidNetwork("non-finite mean".into()));
        }
        Ok(Self { dag, params })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn params(&self) -> &GaussianParams {
        &self.params
    }

    pub fn variables(&self) -> &[String] {
        self.dag.variables()
    }

    pub fn len(&self) -> usize {
        self.dag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dag.is_empty()
    }

    /// Precision matrix in declared variable order.
    pub fn to_precision(&self) -> SymMatrix {
        let order = self.dag.topological_order();
        let n = order.len();
        let mut pos = vec![0; n];
        for (k, &v) in order.iter().enumerate() {
            pos[v] = k;
        }
        let rec = CompleteParams {
            order: order.clone(),
            variances: order
                .iter()
                .map(|&v| self.params.cond_variances[v])
                .collect(),
            coefficients: order
                .iter()
                .enumerate()
                .map(|(k, &child)| {
                    let mut b = vec![0.0; k];
                    for (&p, &c) in &self.params.coefficients[child] {
                        b[pos[p]] = c;
                    }
                    b
                })
                .collect(),
        };
        rec.precision()
    }

    pub fn implied_covariance(&self) -> Result<SymMatrix> {
        invert_spd(&self.to_precision())
    }

    /// Ancestral sampling in topological order.
    pub fn sample(&self, count: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let order = self.dag.topological_order();
        let n = self.len();
        let p = &self.params;
        let mut cases = Vec::with_capacity(count);
        for _ in 0..count {
            let mut x = vec![0.0; n];
            for &i in &order {
                let mean = p.means[i]
                    + p.coefficients[i]
                        .iter()
                        .map(|(&j, &b)| b * (x[j] - p.means[j]))
                        .sum::<f64>();
                let z: f64 = StandardNormal.sample(&mut rng);
                x[i] = mean + p.cond_variances[i].sqrt() * z;
            }
            cases.push(x);
        }
        Dataset::new(self.variables().to_vec(), cases).expect("finite samples")
    }

    pub fn to_spec(&self) -> NetworkSpec {
        let names = self.variables();
        NetworkSpec {
            variables: (0..self.len())
                .map(|i| VariableSpec {
                    name: names[i].clone(),
                    mean: Some(self.params.means[i]),
                    variance: Some(self.params.cond_variances[i]),
                    parents: self.params.coefficients[i]
                        .iter()
                        .map(|(&j, &b)| ParentSpec {
                            name: names[j].clone(),
                            coeff: Some(b),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Variances and coefficients of a complete network in a fixed variable
/// order. `variances[k]` and `coefficients[k]` belong to `order[k]`;
/// `coefficients[k][j]` is the slope on `order[j]` for `j < k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompleteParams {
    pub order: Vec<usize>,
    pub variances: Vec<f64>,
    pub coefficients: Vec<Vec<f64>>,
}

impl CompleteParams {
    /// Runs the recursion
    /// `W(k+1) = [[W(k) + b bᵀ/v, -b/v], [-bᵀ/v, 1/v]]` and maps the result
    /// back to variable indices.
    pub fn precision(&self) -> SymMatrix {
        let n = self.order.len();
        // w is built in recursion order, then permuted
        let mut w = SymMatrix::zeros(n);
        for k in 0..n {
            let v = self.variances[k];
            let b = &self.coefficients[k];
            for i in 0..k {
                for j in i..k {
                    let updated = w.get(i, j) + b[i] * b[j] / v;
                    w.set(i, j, updated);
                }
                w.set(i, k, -b[i] / v);
            }
            w.set(k, k, 1.0 / v);
        }
        let mut out = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                out.set(self.order[i], self.order[j], w.get(i, j));
            }
        }
        out
    }

    /// Variances listed by variable index rather than by recursion position.
    pub fn variances_by_variable(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.order.len()];
        for (k, &v) in self.order.iter().enumerate() {
            out[v] = self.variances[k];
        }
        out
    }
}

/// Inverse of the precision recursion for the complete network in `order`:
/// peel off the last variable (`v = 1/w_nn`, `b = -v w_{·n}`) and recurse on
/// `W - b bᵀ / v` restricted to the remaining block.
pub fn from_precision(w: &SymMatrix, order: &[usize]) -> Result<CompleteParams> {
    let n = w.order();
    if order.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: order.len(),
        });
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, order: n });
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::DuplicateIndex(i));
        }
    }
    let mut block = SymMatrix::from_fn(n, |i, j| w.get(order[i], order[j]));
    let mut variances = vec![0.0; n];
    let mut coefficients = vec![Vec::new(); n];
    for k in (0..n).rev() {
        let pivot = block.get(k, k);
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite { row: k, pivot });
        }
        let v = 1.0 / pivot;
        let b: Vec<f64> = (0..k).map(|i| -v * block.get(i, k)).collect();
        let mut next = SymMatrix::zeros(k);
        for i in 0..k {
            for j in i..k {
                next.set(i, j, block.get(i, j) - b[i] * b[j] / v);
            }
        }
        variances[k] = v;
        coefficients[k] = b;
        block = next;
    }
    Ok(CompleteParams {
        order: order.to_vec(),
        variances,
        coefficients,
    })
}

/// `ln |∂W/∂(v, B)| = -Σ (i+1) ln v_i`, with `v` in recursion order.
pub fn log_abs_jacobian(v: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (k, &vi) in v.iter().enumerate() {
        if !(vi > 0.0) {
            return Err(Error::NonPositiveVariance {
                variable: format!("#{}", k + 1),
                value: vi,
            });
        }
        total -= (k as f64 + 2.0) * vi.ln();
    }
    Ok(total)
}

/// On-disk network description: a list of variables with mean, conditional
/// variance and weighted parents. For structure-only files the numeric
/// fields may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub variables: Vec<VariableSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(default)]
    pub parents: Vec<ParentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeff: Option<f64>,
}

impl NetworkSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_text(path.as_ref())?)
    }

    pub fn names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    /// The structure alone; numeric fields are ignored.
    pub fn to_dag(&self) -> Result<Dag> {
        let names = self.names();
        let mut parents = Vec::with_capacity(names.len());
        for var in &self.variables {
            let mut ps = Vec::new();
            for p in &var.parents {
                let idx = names
                    .iter()
                    .position(|n| *n == p.name)
                    .ok_or_else(|| Error::UnknownVariable(p.name.clone()))?;
                if ps.contains(&idx) {
                    return Err(Error::InvalidNetwork(format!(
                        "'{}' lists parent '{}' twice",
                        var.name, p.name
                    )));
                }
                ps.push(idx);
            }
            parents.push(ps);
        }
        topological_order_of(&names, &parents)?;
        Dag::new(names, &parents)
    }

    /// Full network; every mean, variance and coefficient must be present.
    pub fn to_network(&self) -> Result<GaussianNetwork> {
        let dag = self.to_dag()?;
        let missing = |var: &str, field: &str| {
            Error::InvalidNetwork(format!("variable '{var}' is missing '{field}'"))
        };
        let mut params = GaussianParams {
            means: Vec::new(),
            cond_variances: Vec::new(),
            coefficients: Vec::new(),
        };
        for var in &self.variables {
            params
                .means
                .push(var.mean.ok_or_else(|| missing(&var.name, "mean"))?);
            params
                .cond_variances
                .push(var.variance.ok_or_else(|| missing(&var.name, "variance"))?);
            let mut coeffs = BTreeMap::new();
            for p in &var.parents {
                let j = dag.index_of(&p.name).expect("checked by to_dag");
                coeffs.insert(j, p.coeff.ok_or_else(|| missing(&var.name, "coeff"))?);
            }
            params.coefficients.push(coeffs);
        }
        GaussianNetwork::new(dag, params)
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

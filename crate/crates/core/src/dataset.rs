//! Complete continuous case tables and their sufficient statistics.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::SymMatrix;

/// `m` cases over `n` named continuous variables. Every cell is present and
/// finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    variables: Vec<String>,
    rows: usize,
    // row-major, rows * n
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(variables: Vec<String>, cases: Vec<Vec<f64>>) -> Result<Self> {
        check_names(&variables)?;
        let n = variables.len();
        let rows = cases.len();
        let mut values = Vec::with_capacity(rows * n);
        for (r, case) in cases.into_iter().enumerate() {
            if case.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: case.len(),
                });
            }
            for (c, v) in case.into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::MissingValue {
                        row: r,
                        column: variables[c].clone(),
                    });
                }
                values.push(v);
            }
        }
        Ok(Self {
            variables,
            rows,
            values,
        })
    }

    pub fn empty(variables: Vec<String>) -> Result<Self> {
        Self::new(variables, Vec::new())
    }

    /// Reads a comma-separated table with a header row of variable names.
    /// Lines starting with `#` are skipped.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let variables: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if variables.iter().any(String::is_empty) {
            return Err(Error::Parse("empty variable name in header".into()));
        }
        check_names(&variables)?;
        let mut cases = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Parse(e.to_string()))?;
            let mut case = Vec::with_capacity(variables.len());
            for (c, name) in variables.iter().enumerate() {
                let cell = record.get(c).unwrap_or("");
                if cell.is_empty() {
                    return Err(Error::MissingValue {
                        row: r,
                        column: name.clone(),
                    });
                }
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Parse(format!("row {r}, column '{name}': not a number: '{cell}'"))
                })?;
                case.push(v);
            }
            if record.len() > variables.len() {
                return Err(Error::Parse(format!(
                    "row {r} has {} cells, header has {}",
                    record.len(),
                    variables.len()
                )));
            }
            cases.push(case);
        }
        Self::new(variables, cases)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    /// Writes the table back out as CSV (header plus one row per case).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(&self.variables).map_err(io)?;
        for r in 0..self.len() {
            w.write_record(self.case(r).iter().map(|v| format!("{v}")))
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    /// Number of cases.
    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn case(&self, r: usize) -> &[f64] {
        let n = self.variables.len();
        &self.values[r * n..(r + 1) * n]
    }

    pub fn cases(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(move |r| self.case(r))
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.cases().map(|case| case[c]).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn indices_of<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.index_of(n.as_ref())
                    .ok_or_else(|| Error::UnknownVariable(n.as_ref().to_string()))
            })
            .collect()
    }

    /// Restricts (and reorders) the columns to `subset`.
    pub fn project<S: AsRef<str>>(&self, subset: &[S]) -> Result<Dataset> {
        let idx = self.indices_of(subset)?;
        let names: Vec<String> = subset.iter().map(|s| s.as_ref().to_string()).collect();
        check_names(&names)?;
        let values = self
            .cases()
            .flat_map(|case| idx.iter().map(move |&i| case[i]))
            .collect();
        Ok(Dataset {
            variables: names,
            rows: self.rows,
            values,
        })
    }

    /// Appends the cases of `other`, which must have the same columns.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.variables != other.variables {
            return Err(Error::VariableMismatch);
        }
        let cases = self
            .cases()
            .chain(other.cases())
            .map(<[f64]>::to_vec)
            .collect();
        Dataset::new(self.variables.clone(), cases)
    }

    /// Sample mean and scatter matrix, computed in two passes.
    pub fn stats(&self) -> SufficientStats {
        let n = self.n_vars();
        let m = self.len();
        let mut mean = vec![0.0; n];
        if m > 0 {
            for case in self.cases() {
                for (acc, v) in mean.iter_mut().zip(case) {
                    *acc += v;
                }
            }
            mean.iter_mut().for_each(|x| *x /= m as f64);
        }
        let mut scatter = SymMatrix::zeros(n);
        let mut centered = vec![0.0; n];
        for case in self.cases() {
            for k in 0..n {
                centered[k] = case[k] - mean[k];
            }
            for i in 0..n {
                for j in i..n {
                    let s = scatter.get(i, j) + centered[i] * centered[j];
                    scatter.set(i, j, s);
                }
            }
        }
        SufficientStats {
            count: m,
            mean,
            scatter,
        }
    }

    /// SHA-256 over the variable names and the bit patterns of every cell.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.variables.len() as u64).to_le_bytes());
        for v in &self.variables {
            h.update((v.len() as u64).to_le_bytes());
            h.update(v.as_bytes());
        }
        h.update((self.len() as u64).to_le_bytes());
        for v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().into()
    }
}

fn check_names(names: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::DuplicateVariableName(n.clone()));
        }
    }
    Ok(())
}

/// Count, sample mean and scatter matrix `Σ (x - x̄)(x - x̄)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub count: usize,
    pub mean: Vec<f64>,
    pub scatter: SymMatrix,
}

impl SufficientStats {
    /// Restriction to the variables at `keep`, in that order.
    pub fn restrict(&self, keep: &[usize]) -> Result<SufficientStats> {
        Ok(SufficientStats {
            count: self.count,
            mean: crate::matrix::subvector(&self.mean, keep),
            scatter: crate::matrix::submatrix(&self.scatter, keep)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::spd_factor;
    use proptest::prelude::*;

    const TABLE: &str = include_str!("../../../data/worked_example.csv");

    fn table() -> Dataset {
        Dataset::from_reader(TABLE.as_bytes()).unwrap()
    }

    #[test]
    fn loads_worked_example() {
        let d = table();
        assert_eq!(d.len(), 20);
        assert_eq!(d.n_vars(), 3);
        assert_eq!(d.variables(), ["x1", "x2", "x3"]);
        assert_eq!(d.case(0), [-0.78, -1.55, 0.11]);
        assert_eq!(d.case(19), [0.53, -0.93, -2.92]);
    }

    #[test]
    fn header_only_and_comments() {
        let d = Dataset::from_reader("# comment\na,b\r\n".as_bytes()).unwrap();
        assert_eq!(d.len(), 0);
        assert_eq!(d.variables(), ["a", "b"]);
        let d = Dataset::from_reader("a,b\r\n1,2e-1\r\n# x\n-3.5,4\n".as_bytes()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.case(0), [1.0, 0.2]);
    }

    #[test]
    fn missing_cells_are_rejected() {
        let err = Dataset::from_reader("a,b\n1,2\n3,\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingValue { row: 1, ref column } if column == "b"));
        let err = Dataset::from_reader("a,b\n1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingValue { row: 0, .. }));
        let err = Dataset::from_reader("a,b\n1,nan\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingValue { .. }));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            Dataset::from_reader("a,b\n1,x\n".as_bytes()),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            Dataset::from_reader("a,a\n1,2\n".as_bytes()),
            Err(Error::DuplicateVariableName(_))
        ));
        assert!(matches!(
            Dataset::from_reader("a,b\n1,2,3\n".as_bytes()),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn projection() {
        let d = table();
        let x2 = d.project(&["x2"]).unwrap();
        assert_eq!(x2.len(), 20);
        assert_eq!(&x2.column(0)[..2], &[-1.55, -3.04]);
        assert_eq!(d.project(&["x1", "x2", "x3"]).unwrap(), d);
        let none = d.project::<&str>(&[]).unwrap();
        assert_eq!(none.len(), 20);
        assert_eq!(none.n_vars(), 0);
        assert!(matches!(
            d.project(&["nope"]),
            Err(Error::UnknownVariable(_))
        ));
    }

    #[test]
    fn worked_example_mean() {
        let s = table().stats();
        assert_eq!(s.count, 20);
        let col_avg = table().column(0).iter().sum::<f64>() / 20.0;
        assert!((s.mean[0] - 0.5095).abs() < 1e-12);
        assert!((s.mean[0] - col_avg).abs() < 1e-15);
    }

    #[test]
    fn single_case_has_zero_scatter() {
        let d = Dataset::new(vec!["a".into(), "b".into()], vec![vec![1.0, 2.0]]).unwrap();
        let s = d.stats();
        assert_eq!(s.scatter, SymMatrix::zeros(2));
        assert_eq!(s.mean, vec![1.0, 2.0]);
        let e = Dataset::empty(vec!["a".into()]).unwrap().stats();
        assert_eq!(e.count, 0);
        assert_eq!(e.mean, vec![0.0]);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let d = table();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(Dataset::from_reader(buf.as_slice()).unwrap(), d);
    }

    fn random_data() -> impl Strategy<Value = Dataset> {
        (1usize..=4, 0usize..=12).prop_flat_map(|(n, m)| {
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, n), m).prop_map(
                move |cases| {
                    let names = (0..n).map(|i| format!("v{i}")).collect();
                    Dataset::new(names, cases).unwrap()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn projected_stats_equal_restricted_stats(d in random_data(), rev in any::<bool>()) {
            let mut keep: Vec<usize> = (0..d.n_vars()).step_by(2).collect();
            if rev { keep.reverse(); }
            let names: Vec<&str> = keep.iter().map(|&i| d.variables()[i].as_str()).collect();
            let a = d.project(&names).unwrap().stats();
            let b = d.stats().restrict(&keep).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn scatter_is_psd(d in random_data()) {
            let s = d.stats().scatter;
            let n = s.order();
            // shift by a tiny ridge so semidefinite inputs still factor
            let ridge = 1e-10 * (1.0 + s.diag().into_iter().fold(0.0, f64::max));
            let shifted = s.add(&SymMatrix::identity(n).scaled(ridge)).unwrap();
            prop_assert!(spd_factor(&shifted).is_ok());
        }

        #[test]
        fn stats_ignore_row_order(d in random_data()) {
            let mut cases: Vec<Vec<f64>> = d.cases().map(<[f64]>::to_vec).collect();
            cases.reverse();
            let r = Dataset::new(d.variables().to_vec(), cases).unwrap();
            let (a, b) = (d.stats(), r.stats());
            prop_assert_eq!(a.count, b.count);
            for (x, y) in a.mean.iter().zip(&b.mean) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!(a.scatter.max_abs_diff(&b.scatter) < 1e-9);
        }
    }
}

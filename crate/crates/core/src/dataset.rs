//! Datasets with disjoint train/calibration/test role assignment.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::RngStream;

/// Which split a data point belongs to. Each point has exactly one role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Calibration,
    Test,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Calibration => "calibration",
            Role::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "train" => Some(Role::Train),
            "calibration" => Some(Role::Calibration),
            "test" => Some(Role::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("inputs ({inputs}), targets ({targets}) and roles ({roles}) must have equal length")]
    LengthMismatch {
        inputs: usize,
        targets: usize,
        roles: usize,
    },
    #[error("point {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("inputs must be at least 1-dimensional")]
    ZeroDimension,
    #[error("non-finite value at point {index}")]
    NonFinite { index: usize },
    #[error("dataset must contain at least one point")]
    Empty,
    #[error("split fractions must be positive and sum to 1, got ({0}, {1}, {2})")]
    BadFractions(f64, f64, f64),
    #[error("too few points: splitting {n} points leaves the {role} partition empty")]
    TooFewPoints { n: usize, role: Role },
    #[error("csv: {0}")]
    Csv(String),
}

/// Input/target pairs with a per-point role label.
///
/// Invariants enforced at construction: uniform input dimension `d >= 1`,
/// equal lengths, all values finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    roles: Vec<Role>,
}

impl Dataset {
    pub fn new(
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        roles: Vec<Role>,
    ) -> Result<Self, DatasetError> {
        if inputs.len() != targets.len() || inputs.len() != roles.len() {
            return Err(DatasetError::LengthMismatch {
                inputs: inputs.len(),
                targets: targets.len(),
                roles: roles.len(),
            });
        }
        if inputs.is_empty() {
            return Err(DatasetError::Empty);
        }
        let dim = inputs[0].len();
        if dim == 0 {
            return Err(DatasetError::ZeroDimension);
        }
        for (index, x) in inputs.iter().enumerate() {
            if x.len() != dim {
                return Err(DatasetError::DimensionMismatch {
                    index,
                    got: x.len(),
                    expected: dim,
                });
            }
            if x.iter().any(|v| !v.is_finite()) || !targets[index].is_finite() {
                return Err(DatasetError::NonFinite { index });
            }
        }
        Ok(Self {
            inputs,
            targets,
            roles,
        })
    }

    /// Build a dataset with every point labeled `Train`.
    pub fn all_train(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self, DatasetError> {
        let roles = vec![Role::Train; inputs.len()];
        Self::new(inputs, targets, roles)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn role(&self, i: usize) -> Role {
        self.roles[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Iterate the `(input, target)` pairs carrying the given role.
    pub fn iter_role(&self, role: Role) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.inputs
            .iter()
            .zip(&self.targets)
            .zip(&self.roles)
            .filter(move |(_, r)| **r == role)
            .map(|((x, y), _)| (x.as_slice(), *y))
    }

    pub fn count_role(&self, role: Role) -> usize {
        self.roles.iter().filter(|r| **r == role).count()
    }

    /// Inputs and targets of one role, as owned vectors.
    pub fn role_points(&self, role: Role) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (x, y) in self.iter_role(role) {
            xs.push(x.to_vec());
            ys.push(y);
        }
        (xs, ys)
    }

    /// Reassign roles by a seeded shuffle.
    ///
    /// Calibration and test sizes are floor-rounded from their fractions;
    /// every remaining point goes to train, so calibration/test counts are
    /// exact for quantile arithmetic.
    pub fn split_roles(
        &self,
        fractions: (f64, f64, f64),
        rng: &mut RngStream,
    ) -> Result<Dataset, DatasetError> {
        let (f_train, f_cal, f_test) = fractions;
        let sum = f_train + f_cal + f_test;
        if f_train <= 0.0 || f_cal <= 0.0 || f_test <= 0.0 || (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::BadFractions(f_train, f_cal, f_test));
        }
        let n = self.len();
        if n < 3 {
            return Err(DatasetError::TooFewPoints {
                n,
                role: Role::Train,
            });
        }
        // The 1e-9 nudge keeps fractions like 1/3 from flooring one short.
        let n_cal = (n as f64 * f_cal + 1e-9).floor() as usize;
        let n_test = (n as f64 * f_test + 1e-9).floor() as usize;
        for (count, role) in [(n_cal, Role::Calibration), (n_test, Role::Test)] {
            if count == 0 {
                return Err(DatasetError::TooFewPoints { n, role });
            }
        }
        if n_cal + n_test >= n {
            return Err(DatasetError::TooFewPoints {
                n,
                role: Role::Train,
            });
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut roles = vec![Role::Train; n];
        for &i in &order[..n_cal] {
            roles[i] = Role::Calibration;
        }
        for &i in &order[n_cal..n_cal + n_test] {
            roles[i] = Role::Test;
        }
        Dataset::new(self.inputs.clone(), self.targets.clone(), roles)
    }

    /// Write as CSV with header `x_0,...,x_{d-1},y,role`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x_{j}")).collect();
        header.push("y".to_string());
        header.push("role".to_string());
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut record: Vec<String> = self.inputs[i].iter().map(|v| v.to_string()).collect();
            record.push(self.targets[i].to_string());
            record.push(self.roles[i].to_string());
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| DatasetError::Csv(e.to_string()))
    }

    pub fn write_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<(), DatasetError> {
        let file = std::fs::File::create(path).map_err(|e| DatasetError::Csv(e.to_string()))?;
        self.write_csv(file)
    }

    /// Read a CSV produced by [`Dataset::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DatasetError> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers().map_err(csv_err)?.clone();
        let n_cols = headers.len();
        if n_cols < 3 {
            return Err(DatasetError::Csv(format!(
                "expected at least 3 columns (x_0, y, role), got {n_cols}"
            )));
        }
        let dim = n_cols - 2;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut roles = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(csv_err)?;
            let parse = |s: &str| -> Result<f64, DatasetError> {
                s.parse::<f64>()
                    .map_err(|_| DatasetError::Csv(format!("row {line}: bad number {s:?}")))
            };
            let x: Result<Vec<f64>, _> = (0..dim).map(|j| parse(&record[j])).collect();
            inputs.push(x?);
            targets.push(parse(&record[dim])?);
            let role = Role::parse(&record[dim + 1]).ok_or_else(|| {
                DatasetError::Csv(format!("row {line}: unknown role {:?}", &record[dim + 1]))
            })?;
            roles.push(role);
        }
        Dataset::new(inputs, targets, roles)
    }

    pub fn read_csv_path<P: AsRef<Path>>(path: P) -> Result<Self, DatasetError> {
        let file = std::fs::File::open(path).map_err(|e| DatasetError::Csv(e.to_string()))?;
        Self::read_csv(file)
    }
}

fn csv_err(e: csv::Error) -> DatasetError {
    DatasetError::Csv(e.to_string())
}

//! JSON dump/load of solver instances; infinite bounds are written as `null`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::mip::{MipProblem, PwlConstraint};
use super::pwl::PwlApprox;
use super::qp::QpProblem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpDoc {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_in: Vec<Vec<f64>>,
    pub b_in: Vec<f64>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pwl_constraints: Vec<PwlDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlDoc {
    pub row: Vec<f64>,
    pub var: usize,
    pub scale: f64,
    pub rhs: f64,
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format(format!("{what}: every row needs {ncols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn bound_doc(v: &DVector<f64>) -> Vec<Option<f64>> {
    v.iter().map(|&b| b.is_finite().then_some(b)).collect()
}

impl QpDoc {
    pub fn from_qp(qp: &QpProblem) -> Self {
        Self {
            p: rows_of(&qp.p),
            q: qp.q.iter().copied().collect(),
            a_eq: rows_of(&qp.a_eq),
            b_eq: qp.b_eq.iter().copied().collect(),
            a_in: rows_of(&qp.a_in),
            b_in: qp.b_in.iter().copied().collect(),
            lower: bound_doc(&qp.lower),
            upper: bound_doc(&qp.upper),
            pwl_constraints: Vec::new(),
        }
    }

    pub fn from_mip(mip: &MipProblem) -> Self {
        let mut doc = Self::from_qp(&mip.base);
        doc.pwl_constraints = mip
            .constraints
            .iter()
            .map(|c| PwlDoc {
                row: c.row.iter().copied().collect(),
                var: c.var,
                scale: c.scale,
                rhs: c.rhs,
                breakpoints: c.pwl.breakpoints().to_vec(),
                values: c.pwl.values().to_vec(),
            })
            .collect();
        doc
    }

    pub fn to_qp(&self) -> Result<QpProblem> {
        let n = self.q.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Format("bounds must have one entry per variable".into()));
        }
        let qp = QpProblem {
            p: matrix_of(&self.p, n, "p")?,
            q: DVector::from_vec(self.q.clone()),
            a_eq: matrix_of(&self.a_eq, n, "a_eq")?,
            b_eq: DVector::from_vec(self.b_eq.clone()),
            a_in: matrix_of(&self.a_in, n, "a_in")?,
            b_in: DVector::from_vec(self.b_in.clone()),
            lower: DVector::from_iterator(n, self.lower.iter().map(|b| b.unwrap_or(f64::NEG_INFINITY))),
            upper: DVector::from_iterator(n, self.upper.iter().map(|b| b.unwrap_or(f64::INFINITY))),
        };
        qp.validate()
            .map_err(|e| Error::Format(format!("invalid QP dump: {e}")))?;
        Ok(qp)
    }

    pub fn to_mip(&self) -> Result<MipProblem> {
        let base = self.to_qp()?;
        let constraints = self
            .pwl_constraints
            .iter()
            .map(|c| {
                Ok(PwlConstraint {
                    row: DVector::from_vec(c.row.clone()),
                    var: c.var,
                    scale: c.scale,
                    rhs: c.rhs,
                    pwl: PwlApprox::from_values(c.breakpoints.clone(), c.values.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mip = MipProblem { base, constraints };
        mip.validate()
            .map_err(|e| Error::Format(format!("invalid MIP dump: {e}")))?;
        Ok(mip)
    }
}

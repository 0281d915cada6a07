//! Cyclic coordinate descent for L1-regularized least squares:
//! `min_x ||y - A x||^2 + l1_weight * ||x||_1`, optionally with a proximal
//! ridge `ridge * ||x - anchor||^2` that keeps unidentified coordinates
//! anchored.

use crate::error::{Error, Result};

/// Column access used by the solver. Implemented for explicit matrices and
/// for the implicit one-hot code design, whose columns are indicator
/// vectors.
pub trait DesignMatrix {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn column_norm_sq(&self, j: usize) -> f64;
    fn column_dot(&self, j: usize, v: &[f64]) -> f64;
    /// `v += scale * column_j`
    fn add_scaled_column(&self, j: usize, scale: f64, v: &mut [f64]);
}

/// Row-major dense design matrix.
pub struct DenseDesign<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    norms: Vec<f64>,
}

impl<'a> DenseDesign<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "design matrix",
                format!("{} values", rows * cols),
                format!("{}", data.len()),
            ));
        }
        let norms = (0..cols)
            .map(|j| (0..rows).map(|i| data[i * cols + j].powi(2)).sum())
            .collect();
        Ok(Self {
            data,
            rows,
            cols,
            norms,
        })
    }
}

impl DesignMatrix for DenseDesign<'_> {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn column_norm_sq(&self, j: usize) -> f64 {
        self.norms[j]
    }

    fn column_dot(&self, j: usize, v: &[f64]) -> f64 {
        v.iter()
            .enumerate()
            .map(|(i, vi)| self.data[i * self.cols + j] * vi)
            .sum()
    }

    fn add_scaled_column(&self, j: usize, scale: f64, v: &mut [f64]) {
        for (i, vi) in v.iter_mut().enumerate() {
            *vi += scale * self.data[i * self.cols + j];
        }
    }
}

/// Implicit one-hot design: column `(j, c)` is the indicator of points whose
/// `j`-th subindex equals `c`. Stored as per-column point lists so products
/// never materialize the `mh x n` matrix.
pub struct OneHotDesign {
    rows: usize,
    groups: Vec<Vec<u32>>,
}

impl OneHotDesign {
    pub fn from_codes(codes: &crate::data::CodeMatrix) -> Self {
        let (m, h) = (codes.m(), codes.h());
        let mut groups = vec![Vec::new(); m * h];
        for (i, row) in codes.rows().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                groups[j * h + c as usize].push(i as u32);
            }
        }
        Self {
            rows: codes.n(),
            groups,
        }
    }
}

impl DesignMatrix for OneHotDesign {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.groups.len()
    }

    fn column_norm_sq(&self, j: usize) -> f64 {
        self.groups[j].len() as f64
    }

    fn column_dot(&self, j: usize, v: &[f64]) -> f64 {
        self.groups[j].iter().map(|&i| v[i as usize]).sum()
    }

    fn add_scaled_column(&self, j: usize, scale: f64, v: &mut [f64]) {
        for &i in &self.groups[j] {
            v[i as usize] += scale;
        }
    }
}

fn soft_threshold(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub coefficients: Vec<f64>,
    pub sweeps: usize,
}

/// Exact per-coordinate soft-threshold updates, cycling until the largest
/// coefficient change in a sweep drops below `tol`. `kkt_stop`, when set,
/// also accepts a sweep once the stationarity violation falls below it;
/// the proximal ridge makes some directions so flat that coefficient
/// changes can stay above `tol` long after the solution is stationary.
#[allow(clippy::too_many_arguments)]
pub(crate) fn coordinate_descent<D: DesignMatrix>(
    design: &D,
    y: &[f64],
    l1_weight: f64,
    ridge: f64,
    anchor: Option<&[f64]>,
    init: Option<&[f64]>,
    tol: f64,
    max_sweeps: usize,
    kkt_stop: Option<f64>,
) -> Result<LassoSolution> {
    let cols = design.cols();
    if y.len() != design.rows() {
        return Err(Error::shape(
            "lasso targets",
            format!("{} rows", design.rows()),
            format!("{}", y.len()),
        ));
    }
    if l1_weight < 0.0 {
        return Err(Error::Invalid("l1_weight must be >= 0".into()));
    }
    let mut x = match init {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; cols],
    };
    let mut residual = y.to_vec();
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            design.add_scaled_column(j, -xj, &mut residual);
        }
    }

    let half_w = l1_weight / 2.0;
    for sweep in 1..=max_sweeps {
        let mut max_change: f64 = 0.0;
        for j in 0..cols {
            let nsq = design.column_norm_sq(j);
            let denom = nsq + ridge;
            if denom == 0.0 {
                // column carries no signal; only the L1 penalty acts
                if l1_weight > 0.0 {
                    x[j] = 0.0;
                }
                continue;
            }
            let q = anchor.map_or(0.0, |a| a[j]);
            let rho = design.column_dot(j, &residual) + nsq * x[j] + ridge * q;
            let new = soft_threshold(rho, half_w) / denom;
            let delta = new - x[j];
            if delta != 0.0 {
                design.add_scaled_column(j, -delta, &mut residual);
                x[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < tol {
            return Ok(LassoSolution {
                coefficients: x,
                sweeps: sweep,
            });
        }
        if let Some(threshold) = kkt_stop {
            if sweep % 16 == 0 && kkt_violation(design, y, &x, l1_weight, ridge, anchor) < threshold
            {
                return Ok(LassoSolution {
                    coefficients: x,
                    sweeps: sweep,
                });
            }
        }
    }
    let violation = kkt_violation(design, y, &x, l1_weight, ridge, anchor);
    Err(Error::NonConvergence {
        sweeps: max_sweeps,
        violation,
    })
}

/// Largest violation of the stationarity conditions at `x`: active
/// coordinates must satisfy `|correlation| = l1_weight / 2`, inactive ones
/// `|correlation| <= l1_weight / 2`.
pub fn kkt_violation<D: DesignMatrix>(
    design: &D,
    y: &[f64],
    x: &[f64],
    l1_weight: f64,
    ridge: f64,
    anchor: Option<&[f64]>,
) -> f64 {
    let mut residual = y.to_vec();
    for (j, &xj) in x.iter().enumerate().take(design.cols()) {
        if xj != 0.0 {
            design.add_scaled_column(j, -xj, &mut residual);
        }
    }
    let half_w = l1_weight / 2.0;
    let mut worst: f64 = 0.0;
    for j in 0..design.cols() {
        let q = anchor.map_or(0.0, |a| a[j]);
        let corr = design.column_dot(j, &residual) - ridge * (x[j] - q);
        let v = if x[j] != 0.0 {
            (corr - half_w * x[j].signum()).abs()
        } else {
            (corr.abs() - half_w).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Solve `min_x ||y - A x||^2 + l1_weight ||x||_1` for a dense row-major
/// design matrix.
pub fn lasso_solve(
    a: &[f64],
    rows: usize,
    cols: usize,
    y: &[f64],
    l1_weight: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<Vec<f64>> {
    let design = DenseDesign::new(a, rows, cols)?;
    let sol = coordinate_descent(
        &design, y, l1_weight, 0.0, None, None, tol, max_sweeps, None,
    )?;
    Ok(sol.coefficients)
}

//! Codebook updates for the alternating optimizer: the closed-form weighted
//! least-squares solve and the L1-regularized sparse variant.
//!
//! Both minimize `alpha ||Z - CB||^2 + gamma ||Phi - CB||^2` over the
//! codewords with codes fixed, which reduces to independent least-squares
//! problems per embedding dimension against the blended target
//! `W = (alpha Z + gamma Phi) / (alpha + gamma)`. A proximal ridge
//! `ridge ||C - C_prev||^2` keeps the (always rank-deficient) normal system
//! well posed and leaves unused codewords at their previous values.

use rayon::prelude::*;

use crate::data::{CodeMatrix, Codebooks};
use crate::error::{Error, Result};
use crate::lasso::{coordinate_descent, OneHotDesign};

const SPARSE_TOL: f64 = 1e-10;
const SPARSE_MAX_SWEEPS: usize = 100_000;
const KKT_STOP: f64 = 1e-9;

/// Entries with magnitude at or below this count as zero for sparsity
/// budgets.
pub const NNZ_THRESHOLD: f64 = 1e-8;

/// Blend embeddings and per-point centers into the least-squares target.
fn weighted_targets(
    z_matrix: &[f64],
    phi_rows: Option<&[f64]>,
    p: usize,
    alpha: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    if !z_matrix.len().is_multiple_of(p) {
        return Err(Error::shape(
            "codebook update",
            format!("multiple of p = {p} values"),
            format!("{}", z_matrix.len()),
        ));
    }
    let ag = alpha + gamma;
    if ag <= 0.0 {
        return Err(Error::Invalid(
            "codebook update needs alpha + gamma > 0".into(),
        ));
    }
    if gamma > 0.0 {
        let phis = phi_rows.ok_or(Error::MissingCenters)?;
        if phis.len() != z_matrix.len() {
            return Err(Error::shape(
                "per-point centers",
                format!("{}", z_matrix.len()),
                format!("{}", phis.len()),
            ));
        }
        Ok(z_matrix
            .iter()
            .zip(phis)
            .map(|(zi, pi)| (alpha * zi + gamma * pi) / ag)
            .collect())
    } else {
        Ok(z_matrix.to_vec())
    }
}

fn check_prev(prev: &Codebooks, codes: &CodeMatrix, n: usize) -> Result<()> {
    if codes.m() != prev.m() || codes.h() != prev.h() {
        return Err(Error::shape(
            "codes vs codebooks",
            format!("m={} h={}", prev.m(), prev.h()),
            format!("m={} h={}", codes.m(), codes.h()),
        ));
    }
    if codes.n() != n {
        return Err(Error::shape(
            "codes vs embeddings",
            format!("n={n}"),
            format!("n={}", codes.n()),
        ));
    }
    Ok(())
}

/// In-place Cholesky factorization; fails on non-positive pivots, which is
/// how a singular normal matrix surfaces when `ridge = 0`.
fn cholesky(a: &mut [f64], k: usize) -> Result<()> {
    for i in 0..k {
        for j in 0..=i {
            let mut sum = a[i * k + j];
            for t in 0..j {
                sum -= a[i * k + t] * a[j * k + t];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::SingularNormalMatrix);
                }
                a[i * k + i] = sum.sqrt();
            } else {
                a[i * k + j] = sum / a[j * k + j];
            }
        }
    }
    Ok(())
}

fn cholesky_solve_column(l: &[f64], k: usize, b: &mut [f64]) {
    // forward: L v = b
    for i in 0..k {
        let mut sum = b[i];
        for t in 0..i {
            sum -= l[i * k + t] * b[t];
        }
        b[i] = sum / l[i * k + i];
    }
    // backward: L^T x = v
    for i in (0..k).rev() {
        let mut sum = b[i];
        for t in i + 1..k {
            sum -= l[t * k + i] * b[t];
        }
        b[i] = sum / l[i * k + i];
    }
}

/// Closed-form codebook update: solves
/// `(B B^T + ridge I) C^T = B W^T + ridge C_prev^T`
/// with one shared factorization across the `p` per-dimension systems. The
/// products with `B` are scatter/gathers over code indices; the one-hot
/// matrix itself is never formed.
pub fn update_dense(
    z_matrix: &[f64],
    phi_rows: Option<&[f64]>,
    codes: &CodeMatrix,
    prev: &Codebooks,
    alpha: f64,
    gamma: f64,
    ridge: f64,
) -> Result<Codebooks> {
    let p = prev.p();
    let targets = weighted_targets(z_matrix, phi_rows, p, alpha, gamma)?;
    let n = targets.len() / p;
    check_prev(prev, codes, n)?;
    if ridge < 0.0 {
        return Err(Error::Invalid("ridge must be >= 0".into()));
    }

    let (m, h) = (prev.m(), prev.h());
    let mh = m * h;

    // normal matrix B B^T by co-occurrence counting
    let mut normal = vec![0.0; mh * mh];
    for row in codes.rows() {
        for (j, &c) in row.iter().enumerate() {
            let a = j * h + c as usize;
            for (j2, &c2) in row.iter().enumerate() {
                normal[a * mh + j2 * h + c2 as usize] += 1.0;
            }
        }
    }
    for a in 0..mh {
        normal[a * mh + a] += ridge;
    }

    // right-hand sides B W^T + ridge C_prev^T, one column per dimension
    let mut rhs = vec![0.0; mh * p];
    for (i, row) in codes.rows().enumerate() {
        let w = &targets[i * p..(i + 1) * p];
        for (j, &c) in row.iter().enumerate() {
            let out = &mut rhs[(j * h + c as usize) * p..(j * h + c as usize + 1) * p];
            for t in 0..p {
                out[t] += w[t];
            }
        }
    }
    if ridge > 0.0 {
        for (r, &q) in rhs.iter_mut().zip(prev.values()) {
            *r += ridge * q;
        }
    }

    cholesky(&mut normal, mh)?;
    let mut col = vec![0.0; mh];
    let mut out = vec![0.0; mh * p];
    for t in 0..p {
        for a in 0..mh {
            col[a] = rhs[a * p + t];
        }
        cholesky_solve_column(&normal, mh, &mut col);
        for a in 0..mh {
            out[a * p + t] = col[a];
        }
    }
    Codebooks::new(m, h, p, out)
}

/// Sparse codebook update: per-dimension Lasso
/// `min ||w^(t) - c B||^2 + l1_weight ||c||_1` via coordinate descent over
/// the implicit one-hot design, with the same proximal ridge as
/// [`update_dense`] so the two coincide at `l1_weight = 0`.
#[allow(clippy::too_many_arguments)]
pub fn update_sparse(
    z_matrix: &[f64],
    phi_rows: Option<&[f64]>,
    codes: &CodeMatrix,
    prev: &Codebooks,
    alpha: f64,
    gamma: f64,
    l1_weight: f64,
    ridge: f64,
) -> Result<Codebooks> {
    if l1_weight < 0.0 {
        return Err(Error::Invalid("l1_weight must be >= 0".into()));
    }
    if l1_weight == 0.0 {
        // unregularized limit: identical proximal problem, closed form
        return update_dense(z_matrix, phi_rows, codes, prev, alpha, gamma, ridge);
    }
    let p = prev.p();
    let targets = weighted_targets(z_matrix, phi_rows, p, alpha, gamma)?;
    let n = targets.len() / p;
    check_prev(prev, codes, n)?;

    let (m, h) = (prev.m(), prev.h());
    let mh = m * h;
    let design = OneHotDesign::from_codes(codes);

    let columns: Vec<Result<Vec<f64>>> = (0..p)
        .into_par_iter()
        .map(|t| {
            let y: Vec<f64> = (0..n).map(|i| targets[i * p + t]).collect();
            let anchor: Vec<f64> = (0..mh).map(|a| prev.values()[a * p + t]).collect();
            let sol = coordinate_descent(
                &design,
                &y,
                l1_weight,
                ridge,
                Some(&anchor),
                Some(&anchor),
                SPARSE_TOL,
                SPARSE_MAX_SWEEPS,
                Some(KKT_STOP),
            )?;
            Ok(sol.coefficients)
        })
        .collect();

    let mut out = vec![0.0; mh * p];
    for (t, col) in columns.into_iter().enumerate() {
        let col = col?;
        for a in 0..mh {
            out[a * p + t] = col[a];
        }
    }
    Codebooks::new(m, h, p, out)
}

/// Count of entries with magnitude above [`NNZ_THRESHOLD`].
pub fn count_nonzeros(books: &Codebooks) -> usize {
    books
        .values()
        .iter()
        .filter(|v| v.abs() > NNZ_THRESHOLD)
        .count()
}

/// Find an `l1_weight` whose sparse solution meets the nonzero budget
/// `target_nnz`, by bisection between zero and the weight that empties the
/// codebooks. Returns the smallest bracketing weight found whose solution
/// satisfies `nnz <= target_nnz`, stopping early once the count lands
/// within 10% below the budget.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_l1_weight(
    z_matrix: &[f64],
    phi_rows: Option<&[f64]>,
    codes: &CodeMatrix,
    prev: &Codebooks,
    alpha: f64,
    gamma: f64,
    target_nnz: usize,
    ridge: f64,
) -> Result<f64> {
    let p = prev.p();
    let budget = prev.m() * prev.h() * p;
    if target_nnz == 0 || target_nnz > budget {
        return Err(Error::Invalid(format!(
            "target_nnz must be in (0, m*h*p] = (0, {budget}], got {target_nnz}"
        )));
    }

    let nnz_at = |w: f64| -> Result<usize> {
        let books = update_sparse(z_matrix, phi_rows, codes, prev, alpha, gamma, w, ridge)?;
        Ok(count_nonzeros(&books))
    };

    if nnz_at(0.0)? <= target_nnz {
        return Ok(0.0);
    }

    // A weight of twice the largest column correlation zeroes every
    // coordinate, giving a guaranteed upper bracket.
    let targets = weighted_targets(z_matrix, phi_rows, p, alpha, gamma)?;
    let n = targets.len() / p;
    check_prev(prev, codes, n)?;
    let design = OneHotDesign::from_codes(codes);
    let mh = prev.m() * prev.h();
    let mut max_corr: f64 = 0.0;
    for t in 0..p {
        let y: Vec<f64> = (0..n).map(|i| targets[i * p + t]).collect();
        for a in 0..mh {
            use crate::lasso::DesignMatrix;
            let corr = design.column_dot(a, &y) + ridge * prev.values()[a * p + t];
            max_corr = max_corr.max(corr.abs());
        }
    }
    let mut hi = 2.0 * max_corr * (1.0 + 1e-9) + 1e-12;
    let mut hi_nnz = nnz_at(hi)?;
    if hi_nnz > target_nnz {
        return Err(Error::BracketFailure {
            target: target_nnz,
            lo: 0.0,
            hi,
        });
    }

    let lower_band = (target_nnz as f64 * 0.9).ceil() as usize;
    let mut lo = 0.0;
    for _ in 0..60 {
        if hi_nnz >= lower_band {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let mid_nnz = nnz_at(mid)?;
        if mid_nnz <= target_nnz {
            hi = mid;
            hi_nnz = mid_nnz;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Value of the codebook objective `alpha ||Z - CB||^2 + gamma ||Phi - CB||^2`
/// summed over all points.
pub fn codebook_objective(
    z_matrix: &[f64],
    phi_rows: Option<&[f64]>,
    codes: &CodeMatrix,
    books: &Codebooks,
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    let p = books.p();
    if gamma > 0.0 && phi_rows.is_none() {
        return Err(Error::MissingCenters);
    }
    let n = z_matrix.len() / p;
    check_prev(books, codes, n)?;
    let mut total = 0.0;
    for (i, row) in codes.rows().enumerate() {
        let recon = books.reconstruct(row);
        let z = &z_matrix[i * p..(i + 1) * p];
        total += alpha * crate::data::squared_distance(z, &recon);
        if let Some(phis) = phi_rows {
            if gamma > 0.0 {
                let phi = &phis[i * p..(i + 1) * p];
                total += gamma * crate::data::squared_distance(phi, &recon);
            }
        }
    }
    Ok(total)
}

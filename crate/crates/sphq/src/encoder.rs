//! Code assignment: per-point minimization of
//! `alpha ||z - sum_j C_j b_j||^2 + gamma ||phi - sum_j C_j b_j||^2`
//! by iterated conditional modes (ICM) wrapped in stochastic local search.
//!
//! Points are independent, so batches fan out across threads; identical
//! seeds produce identical codes regardless of scheduling.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::HyperParams;
use crate::data::{dot, squared_distance, CodeMatrix, Codebooks};
use crate::error::{Error, Result};

/// Knobs of the stochastic local search encoder.
#[derive(Debug, Clone, Copy)]
pub struct SlsParams {
    pub alpha: f64,
    pub gamma: f64,
    /// Number of local-search procedures; the first starts from the initial
    /// code, each later one from a perturbation of the current solution.
    pub rounds: usize,
    /// ICM passes per local search.
    pub icm_iters: usize,
    /// Subindex positions re-randomized per perturbation.
    pub k_perturb: usize,
}

impl SlsParams {
    pub fn from_hyper(hp: &HyperParams) -> Self {
        Self {
            alpha: hp.alpha,
            gamma: hp.gamma,
            rounds: hp.sls_rounds,
            icm_iters: hp.icm_iters,
            k_perturb: hp.effective_k(),
        }
    }

    /// Same search but with the center terms dropped, as used when encoding
    /// points whose classes were never seen in training.
    pub fn without_center_term(mut self) -> Self {
        self.gamma = 0.0;
        self
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Invalid("sls rounds must be >= 1".into()));
        }
        if self.k_perturb > m {
            return Err(Error::Invalid(format!(
                "k_perturb = {} exceeds m = {m}",
                self.k_perturb
            )));
        }
        if self.alpha < 0.0 || self.gamma < 0.0 {
            return Err(Error::Invalid("alpha and gamma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Exact value of the per-point encoding objective, computed naively from
/// the reconstruction. This is the reference the cached search path is
/// checked against.
pub fn subproblem_objective(
    z: &[f64],
    center: Option<&[f64]>,
    books: &Codebooks,
    code: &[u8],
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    if code.len() != books.m() {
        return Err(Error::shape(
            "code",
            format!("{} subindices", books.m()),
            format!("{}", code.len()),
        ));
    }
    if let Some(&bad) = code.iter().find(|&&c| (c as usize) >= books.h()) {
        return Err(Error::Invalid(format!(
            "subindex {bad} out of range for h = {}",
            books.h()
        )));
    }
    if gamma > 0.0 && center.is_none() {
        return Err(Error::MissingCenters);
    }
    let recon = books.reconstruct(code);
    let mut obj = alpha * squared_distance(z, &recon);
    if let Some(phi) = center {
        obj += gamma * squared_distance(phi, &recon);
    }
    Ok(obj)
}

/// Codebook-wide tables reused across all points of an encoding batch:
/// pairwise codeword inner products and codeword squared norms.
pub struct Encoder<'a> {
    books: &'a Codebooks,
    /// `(m*h) x (m*h)` symmetric Gram matrix of codewords.
    gram: Vec<f64>,
    /// Squared norm of each codeword (the Gram diagonal).
    norms: Vec<f64>,
}

impl<'a> Encoder<'a> {
    pub fn new(books: &'a Codebooks) -> Self {
        let mh = books.m() * books.h();
        let mut gram = vec![0.0; mh * mh];
        for a in 0..mh {
            let wa = books.codeword(a / books.h(), a % books.h());
            for b in a..mh {
                let wb = books.codeword(b / books.h(), b % books.h());
                let g = dot(wa, wb);
                gram[a * mh + b] = g;
                gram[b * mh + a] = g;
            }
        }
        let norms = (0..mh).map(|a| gram[a * mh + a]).collect();
        Self { books, gram, norms }
    }

    pub fn books(&self) -> &Codebooks {
        self.books
    }

    /// Greedy warm start: pick codewords one codebook at a time against the
    /// residual of the weighted target `(alpha z + gamma phi) / (alpha + gamma)`.
    pub fn greedy_init(
        &self,
        z: &[f64],
        center: Option<&[f64]>,
        alpha: f64,
        gamma: f64,
    ) -> Vec<u8> {
        let (m, h) = (self.books.m(), self.books.h());
        let ag = alpha + gamma;
        let mut residual: Vec<f64> = if ag > 0.0 {
            let phi = center.unwrap_or(z);
            z.iter()
                .zip(phi)
                .map(|(zi, pi)| (alpha * zi + gamma * pi) / ag)
                .collect()
        } else {
            z.to_vec()
        };
        let mut code = vec![0u8; m];
        for (j, slot) in code.iter_mut().enumerate() {
            let mut best = 0usize;
            let mut best_score = f64::INFINITY;
            for c in 0..h {
                let cw = self.books.codeword(j, c);
                let score = self.norms[j * h + c] - 2.0 * dot(&residual, cw);
                if score < best_score {
                    best_score = score;
                    best = c;
                }
            }
            *slot = best as u8;
            for (r, v) in residual.iter_mut().zip(self.books.codeword(j, best)) {
                *r -= v;
            }
        }
        code
    }

    fn point_state(
        &self,
        z: &[f64],
        center: Option<&[f64]>,
        alpha: f64,
        gamma: f64,
    ) -> PointState<'_, 'a> {
        let (m, h) = (self.books.m(), self.books.h());
        let mut tau = vec![0.0; m * h];
        let phi = center.unwrap_or(z);
        let weighted: Vec<f64> = z
            .iter()
            .zip(phi)
            .map(|(zi, pi)| alpha * zi + gamma * pi)
            .collect();
        for j in 0..m {
            for c in 0..h {
                tau[j * h + c] = dot(&weighted, self.books.codeword(j, c));
            }
        }
        let mut const_term = alpha * dot(z, z);
        if gamma > 0.0 {
            const_term += gamma * dot(phi, phi);
        }
        PointState {
            enc: self,
            alpha_gamma: alpha + gamma,
            tau,
            const_term,
        }
    }
}

/// Per-point scratch for the cached objective:
/// `obj(code) = const - 2 sum_j tau[j, c_j] + (alpha+gamma) ||r||^2`
/// with `||r||^2` expanded over the Gram table.
struct PointState<'e, 'a> {
    enc: &'e Encoder<'a>,
    alpha_gamma: f64,
    tau: Vec<f64>,
    const_term: f64,
}

impl PointState<'_, '_> {
    fn objective(&self, code: &[u8]) -> f64 {
        let (m, h) = (self.enc.books.m(), self.enc.books.h());
        let mh = m * h;
        let mut tau_sum = 0.0;
        let mut recon_sq = 0.0;
        for (j, &cj) in code.iter().enumerate() {
            let a = j * h + cj as usize;
            tau_sum += self.tau[a];
            for (j2, &cj2) in code.iter().enumerate() {
                recon_sq += self.enc.gram[a * mh + j2 * h + cj2 as usize];
            }
        }
        self.const_term - 2.0 * tau_sum + self.alpha_gamma * recon_sq
    }

    /// One cycle over all positions, setting each subindex to its
    /// conditional argmin (ties to the smallest index). Returns whether any
    /// subindex changed.
    fn icm_pass(&self, code: &mut [u8]) -> bool {
        let (m, h) = (self.enc.books.m(), self.enc.books.h());
        let mh = m * h;
        let mut changed = false;
        for t in 0..m {
            let mut best = usize::MAX;
            let mut best_score = f64::INFINITY;
            for c in 0..h {
                let a = t * h + c;
                let mut dot_fixed = 0.0;
                for (j, &cj) in code.iter().enumerate() {
                    if j != t {
                        dot_fixed += self.enc.gram[a * mh + j * h + cj as usize];
                    }
                }
                let score =
                    self.alpha_gamma * (2.0 * dot_fixed + self.enc.norms[a]) - 2.0 * self.tau[a];
                if score < best_score {
                    best_score = score;
                    best = c;
                }
            }
            if best as u8 != code[t] {
                code[t] = best as u8;
                changed = true;
            }
        }
        changed
    }

    fn local_search(&self, code: &mut [u8], icm_iters: usize) {
        for _ in 0..icm_iters {
            if !self.icm_pass(code) {
                break;
            }
        }
    }
}

impl<'a> Encoder<'a> {
    /// Encode one point by stochastic local search. `init` overrides the
    /// greedy warm start; the best code observed across all rounds wins.
    pub fn encode_point(
        &self,
        z: &[f64],
        center: Option<&[f64]>,
        params: &SlsParams,
        seed: u64,
        init: Option<&[u8]>,
    ) -> Result<Vec<u8>> {
        let (m, h) = (self.books.m(), self.books.h());
        params.validate(m)?;
        if z.len() != self.books.p() {
            return Err(Error::shape(
                "encode point",
                format!("p = {}", self.books.p()),
                format!("{}", z.len()),
            ));
        }
        if params.gamma > 0.0 && center.is_none() {
            return Err(Error::MissingCenters);
        }

        let state = self.point_state(z, center, params.alpha, params.gamma);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut current = match init {
            Some(c) => c.to_vec(),
            None => self.greedy_init(z, center, params.alpha, params.gamma),
        };
        // ICM never increases the objective, so after the first local search
        // the incumbent is already no worse than the starting code.
        state.local_search(&mut current, params.icm_iters);
        let mut best = current.clone();
        let mut best_obj = state.objective(&current);
        for _ in 1..params.rounds {
            for pos in index::sample(&mut rng, m, params.k_perturb) {
                current[pos] = rng.random_range(0..h) as u8;
            }
            state.local_search(&mut current, params.icm_iters);
            let obj = state.objective(&current);
            if obj < best_obj {
                best_obj = obj;
                best.copy_from_slice(&current);
            }
        }
        Ok(best)
    }
}

/// One full ICM cycle from the given code; convenience wrapper that builds
/// the codeword tables for a single call.
pub fn icm_pass(
    z: &[f64],
    center: Option<&[f64]>,
    books: &Codebooks,
    code: &[u8],
    alpha: f64,
    gamma: f64,
) -> Result<Vec<u8>> {
    // reuse the validation of the naive objective
    subproblem_objective(z, center, books, code, alpha, gamma)?;
    let enc = Encoder::new(books);
    let state = enc.point_state(z, center, alpha, gamma);
    let mut out = code.to_vec();
    state.icm_pass(&mut out);
    Ok(out)
}

/// Stochastic local search from the greedy warm start; see
/// [`Encoder::encode_point`] for the batched form.
#[allow(clippy::too_many_arguments)]
pub fn sls_encode(
    z: &[f64],
    center: Option<&[f64]>,
    books: &Codebooks,
    alpha: f64,
    gamma: f64,
    rounds: usize,
    icm_iters: usize,
    k_perturb: usize,
    seed: u64,
) -> Result<Vec<u8>> {
    let enc = Encoder::new(books);
    enc.encode_point(
        z,
        center,
        &SlsParams {
            alpha,
            gamma,
            rounds,
            icm_iters,
            k_perturb,
        },
        seed,
        None,
    )
}

/// Stable per-point seed derivation so that parallel and sequential batch
/// encodings agree.
pub fn point_seed(master: u64, index: u64) -> u64 {
    // splitmix64 over the master seed and point index
    let mut x = master ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Encode every row of `z_matrix` (`n x p`, row-major). `phi_rows` holds the
/// per-point class center, required whenever `gamma > 0`. `warm` seeds each
/// point's search from its previous code, which makes alternating
/// optimization monotone in the encoding step.
pub fn encode_batch(
    z_matrix: &[f64],
    phi_rows: Option<&[f64]>,
    books: &Codebooks,
    params: &SlsParams,
    master_seed: u64,
    warm: Option<&CodeMatrix>,
) -> Result<CodeMatrix> {
    let p = books.p();
    if !z_matrix.len().is_multiple_of(p) {
        return Err(Error::shape(
            "encode batch",
            format!("multiple of p = {p} values"),
            format!("{}", z_matrix.len()),
        ));
    }
    let n = z_matrix.len() / p;
    if params.gamma > 0.0 && phi_rows.is_none() {
        return Err(Error::MissingCenters);
    }
    if let Some(phis) = phi_rows {
        if phis.len() != n * p {
            return Err(Error::shape(
                "per-point centers",
                format!("{} values", n * p),
                format!("{}", phis.len()),
            ));
        }
    }
    if let Some(w) = warm {
        if w.n() != n || w.m() != books.m() || w.h() != books.h() {
            return Err(Error::shape(
                "warm-start codes",
                format!("n={} m={} h={}", n, books.m(), books.h()),
                format!("n={} m={} h={}", w.n(), w.m(), w.h()),
            ));
        }
    }

    let enc = Encoder::new(books);
    let rows: Vec<Vec<u8>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let z = &z_matrix[i * p..(i + 1) * p];
            let center = phi_rows.map(|phis| &phis[i * p..(i + 1) * p]);
            let init = warm.map(|w| w.row(i));
            enc.encode_point(z, center, params, point_seed(master_seed, i as u64), init)
        })
        .collect::<Result<_>>()?;

    let mut codes = Vec::with_capacity(n * books.m());
    for row in rows {
        codes.extend(row);
    }
    CodeMatrix::new(n, books.m(), books.h(), codes)
}

//! Sparse codebook learning: calibrate the L1 weight to a nonzero budget,
//! then serve queries through the sparse lookup-table fast path.
//!
//! ```bash
//! cargo run --release --example sparse_codebooks
//! ```

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sphq::codebooks::{calibrate_l1_weight, count_nonzeros, update_dense, update_sparse};
use sphq::data::{CodeMatrix, Codebooks};
use sphq::search::{build_lut, build_lut_sparse, rank_with_lut, SparseCodebooks};

fn main() -> sphq::Result<()> {
    let (n, m, h, p) = (400, 2, 16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let codes = CodeMatrix::new(
        n,
        m,
        h,
        (0..n * m).map(|_| rng.random_range(0..h) as u8).collect(),
    )?;
    let prev = Codebooks::new(m, h, p, vec![0.0; m * h * p])?;

    let dense = update_dense(&z, None, &codes, &prev, 1.0, 0.0, 1e-6)?;
    println!(
        "dense codebooks: {} of {} entries nonzero",
        count_nonzeros(&dense),
        m * h * p
    );

    // budget of h*p entries, half the total here
    let budget = h * p;
    let weight = calibrate_l1_weight(&z, None, &codes, &prev, 1.0, 0.0, budget, 1e-6)?;
    let sparse_books = update_sparse(&z, None, &codes, &prev, 1.0, 0.0, weight, 1e-6)?;
    println!(
        "calibrated l1 weight {weight:.5} -> {} nonzeros (budget {budget})",
        count_nonzeros(&sparse_books)
    );

    // the sparse LUT path must rank identically to the dense one
    let sparse = SparseCodebooks::from_dense(&sparse_books);
    let q: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();

    let t0 = Instant::now();
    let dense_lut = build_lut(&q, &sparse_books)?;
    let t_dense = t0.elapsed();
    let t0 = Instant::now();
    let sparse_lut = build_lut_sparse(&q, &sparse)?;
    let t_sparse = t0.elapsed();

    let a = rank_with_lut(&dense_lut, &codes, 10)?;
    let b = rank_with_lut(&sparse_lut, &codes, 10)?;
    assert_eq!(
        a.iter().map(|&(id, _)| id).collect::<Vec<_>>(),
        b.iter().map(|&(id, _)| id).collect::<Vec<_>>(),
    );
    println!("top-10 rankings agree; lut build {t_dense:?} dense vs {t_sparse:?} sparse");
    println!(
        "sparse path touches {} of {} codeword entries",
        sparse.nnz(),
        m * h * p
    );
    Ok(())
}

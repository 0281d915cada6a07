//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Run with `cargo test --test acceptance -- --nocapture`.

use std::collections::HashSet;
use std::panic::catch_unwind;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sphq::codebooks::{
    calibrate_l1_weight, codebook_objective, count_nonzeros, update_dense, update_sparse,
};
use sphq::config::{HyperParams, SgdSettings};
use sphq::data::{dot, norm, squared_distance, CodeMatrix, Codebooks, FeatureMatrix, LabelVector};
use sphq::embedder::{loss_and_grad, Batch, EmbedderParams, LossWeights};
use sphq::encoder::{encode_batch, sls_encode, subproblem_objective, SlsParams};
use sphq::eval::{average_precision, map_at, precision_recall_points, relevant_by_label};
use sphq::lasso::{kkt_violation, lasso_solve, DenseDesign};
use sphq::search::{adc_score, build_lut, build_lut_sparse, rank_with_lut, SparseCodebooks};
use sphq::synth::{generate, SynthOptions};
use sphq::trainer::{encode_database, fit};

fn report<F: FnOnce() + std::panic::UnwindSafe>(number: u32, name: &str, body: F) {
    let outcome = catch_unwind(body);
    match outcome {
        Ok(()) => println!("ACCEPTANCE {number:02} {name}: PASS"),
        Err(cause) => {
            println!("ACCEPTANCE {number:02} {name}: FAIL");
            std::panic::resume_unwind(cause);
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    let v = random_vec(rng, p, 1.0);
    let n = norm(&v).max(1e-9);
    v.into_iter().map(|x| x / n).collect()
}

fn random_books(rng: &mut ChaCha8Rng, m: usize, h: usize, p: usize) -> Codebooks {
    Codebooks::new(m, h, p, random_vec(rng, m * h * p, 1.0)).unwrap()
}

fn random_codes(rng: &mut ChaCha8Rng, n: usize, m: usize, h: usize) -> CodeMatrix {
    CodeMatrix::new(
        n,
        m,
        h,
        (0..n * m).map(|_| rng.random_range(0..h) as u8).collect(),
    )
    .unwrap()
}

// ---------------------------------------------------------------- 1

/// Central finite differences of the total batch loss against the analytic
/// gradient, probing every classifier bias plus a random subset of weight
/// coordinates.
fn max_fd_relative_error(
    params: &EmbedderParams,
    batch: &Batch<'_>,
    weights: LossWeights,
    rng: &mut ChaCha8Rng,
) -> f64 {
    const STEP: f64 = 1e-5;
    let (_, grad) = loss_and_grad(params, batch, weights).unwrap();
    let loss_at = |p: &EmbedderParams| loss_and_grad(p, batch, weights).unwrap().0.total;

    let n_w = params.w.len();
    let n_cls = params.w_cls.len();
    let mut coords: Vec<usize> = (0..params.b_cls.len()).map(|i| n_w + n_cls + i).collect();
    for _ in 0..30 {
        coords.push(rng.random_range(0..n_w + n_cls));
    }

    let mut worst: f64 = 0.0;
    for &c in &coords {
        let mut plus = params.clone();
        let mut minus = params.clone();
        let analytic = if c < n_w {
            plus.w[c] += STEP;
            minus.w[c] -= STEP;
            grad.w[c]
        } else if c < n_w + n_cls {
            plus.w_cls[c - n_w] += STEP;
            minus.w_cls[c - n_w] -= STEP;
            grad.w_cls[c - n_w]
        } else {
            plus.b_cls[c - n_w - n_cls] += STEP;
            minus.b_cls[c - n_w - n_cls] -= STEP;
            grad.b_cls[c - n_w - n_cls]
        };
        let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * STEP);
        if fd.abs() < 1e-10 && analytic.abs() < 1e-10 {
            continue;
        }
        worst = worst.max((fd - analytic).abs() / fd.abs().max(analytic.abs()));
    }
    worst
}

#[test]
fn acceptance_01_gradient_suite() {
    report(1, "gradient suite vs finite differences", || {
        let start = Instant::now();
        let (d, p, l, m, h) = (6, 4, 3, 2, 3);
        // isolate the softmax, quantization and center terms, then combine
        let configs = [
            (
                "softmax",
                LossWeights {
                    alpha: 0.0,
                    lambda: 0.0,
                    gamma: 0.0,
                },
            ),
            (
                "quantization",
                LossWeights {
                    alpha: 1.0,
                    lambda: 0.0,
                    gamma: 0.0,
                },
            ),
            (
                "center",
                LossWeights {
                    alpha: 0.0,
                    lambda: 1.0,
                    gamma: 0.0,
                },
            ),
            (
                "all",
                LossWeights {
                    alpha: 0.8,
                    lambda: 0.6,
                    gamma: 0.4,
                },
            ),
        ];
        for (name, weights) in configs {
            let mut r = rng(0xACC1 + weights.alpha.to_bits() % 97);
            for instance in 0..10 {
                let params = EmbedderParams::random(d, p, l, 1000 + instance);
                let features = FeatureMatrix::new(4, d, random_vec(&mut r, 4 * d, 1.0)).unwrap();
                let labels = LabelVector::new(
                    l as u32,
                    (0..4).map(|_| r.random_range(0..l as u32)).collect(),
                )
                .unwrap();
                let books = random_books(&mut r, m, h, p);
                let codes = random_codes(&mut r, 4, m, h);
                let centers =
                    sphq::data::CenterTable::new(l, p, random_vec(&mut r, l * p, 1.0)).unwrap();
                let batch = Batch {
                    features: &features,
                    labels: &labels,
                    indices: &[0, 1, 2, 3],
                    centers: Some(&centers),
                    codebooks: Some(&books),
                    codes: Some(&codes),
                };
                let err = max_fd_relative_error(&params, &batch, weights, &mut r);
                assert!(
                    err < 1e-4,
                    "{name} instance {instance}: max relative error {err:e}"
                );
            }
        }
        assert!(
            start.elapsed().as_secs_f64() < 10.0,
            "gradient suite too slow"
        );
    });
}

// ---------------------------------------------------------------- 2

fn exhaustive_minimum(z: &[f64], books: &Codebooks, alpha: f64) -> f64 {
    let (m, h) = (books.m(), books.h());
    let mut best = f64::INFINITY;
    for idx in 0..h.pow(m as u32) {
        let mut code = vec![0u8; m];
        let mut rem = idx;
        for j in (0..m).rev() {
            code[j] = (rem % h) as u8;
            rem /= h;
        }
        let obj = subproblem_objective(z, None, books, &code, alpha, 0.0).unwrap();
        best = best.min(obj);
    }
    best
}

#[test]
fn acceptance_02_encoding_oracle() {
    report(2, "SLS encoding vs exhaustive minimum", || {
        let start = Instant::now();
        let (m, h, p) = (2, 4, 8);
        let mut r = rng(0xACC2);
        let mut hits = 0;
        for instance in 0..100u64 {
            let books = random_books(&mut r, m, h, p);
            let z = random_unit(&mut r, p);
            let sls = sls_encode(&z, None, &books, 1.0, 0.0, 16, 3, 1, instance).unwrap();
            let icm_only = sls_encode(&z, None, &books, 1.0, 0.0, 1, 3, 0, instance).unwrap();
            let sls_obj = subproblem_objective(&z, None, &books, &sls, 1.0, 0.0).unwrap();
            let icm_obj = subproblem_objective(&z, None, &books, &icm_only, 1.0, 0.0).unwrap();
            assert!(
                sls_obj <= icm_obj + 1e-12,
                "instance {instance}: SLS {sls_obj} worse than ICM-only {icm_obj}"
            );
            let best = exhaustive_minimum(&z, &books, 1.0);
            if (sls_obj - best).abs() < 1e-9 {
                hits += 1;
            }
        }
        assert!(
            hits >= 80,
            "only {hits}/100 instances reached the exhaustive minimum"
        );
        assert!(
            start.elapsed().as_secs_f64() < 10.0,
            "encoding oracle too slow"
        );
    });
}

// ---------------------------------------------------------------- 3

fn explicit_least_squares_oracle(
    z: &[f64],
    codes: &CodeMatrix,
    prev: &Codebooks,
    ridge: f64,
) -> Codebooks {
    let (n, m, h, p) = (codes.n(), codes.m(), codes.h(), prev.p());
    let mh = m * h;
    let mut b = nalgebra::DMatrix::<f64>::zeros(mh, n);
    for (i, row) in codes.rows().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            b[(j * h + c as usize, i)] = 1.0;
        }
    }
    let w = nalgebra::DMatrix::from_row_slice(n, p, z);
    let prev_mat = nalgebra::DMatrix::from_row_slice(mh, p, prev.values());
    let a = &b * b.transpose() + nalgebra::DMatrix::identity(mh, mh) * ridge;
    let rhs = &b * w + prev_mat * ridge;
    let x = a.cholesky().expect("oracle factorization").solve(&rhs);
    let mut vals = vec![0.0; mh * p];
    for row in 0..mh {
        for t in 0..p {
            vals[row * p + t] = x[(row, t)];
        }
    }
    Codebooks::new(m, h, p, vals).unwrap()
}

#[test]
fn acceptance_03_codebook_oracle() {
    report(3, "dense codebook update vs least-squares oracle", || {
        let start = Instant::now();
        let (n, m, h, p) = (200, 2, 8, 4);
        let ridge = 1e-6;
        let mut r = rng(0xACC3);

        // elementwise agreement with the explicit-matrix solver
        for _ in 0..3 {
            let z = random_vec(&mut r, n * p, 1.0);
            let codes = random_codes(&mut r, n, m, h);
            let prev = random_books(&mut r, m, h, p);
            let ours = update_dense(&z, None, &codes, &prev, 1.0, 0.0, ridge).unwrap();
            let oracle = explicit_least_squares_oracle(&z, &codes, &prev, ridge);
            for (a, b) in ours.values().iter().zip(oracle.values()) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }

        // 20 alternations of (codebook update, encoding) never increase the
        // quantization objective
        let z = random_vec(&mut r, n * p, 1.0);
        let mut codes = random_codes(&mut r, n, m, h);
        let mut books = random_books(&mut r, m, h, p);
        let sls = SlsParams {
            alpha: 1.0,
            gamma: 0.0,
            rounds: 8,
            icm_iters: 3,
            k_perturb: 1,
        };
        let mut previous = codebook_objective(&z, None, &codes, &books, 1.0, 0.0).unwrap();
        for step in 0..20u64 {
            books = update_dense(&z, None, &codes, &books, 1.0, 0.0, ridge).unwrap();
            let after_books = codebook_objective(&z, None, &codes, &books, 1.0, 0.0).unwrap();
            assert!(
                after_books <= previous + 1e-9,
                "codebook update increased the objective at step {step}"
            );
            codes = encode_batch(&z, None, &books, &sls, step, Some(&codes)).unwrap();
            let after_codes = codebook_objective(&z, None, &codes, &books, 1.0, 0.0).unwrap();
            assert!(
                after_codes <= after_books + 1e-9,
                "encoding increased the objective at step {step}"
            );
            previous = after_codes;
        }
        assert!(
            start.elapsed().as_secs_f64() < 30.0,
            "codebook oracle too slow"
        );
    });
}

// ---------------------------------------------------------------- 4 and 5

#[test]
fn acceptance_04_adc_exactness_and_05_reconstruction_bound() {
    report(4, "ADC exactness and sparse/dense agreement", || {
        let mut r = rng(0xACC4);
        let (m, h, p) = (4, 8, 16);
        let mut bound_checked = 0usize;
        for _ in 0..10 {
            // sparse-ish codebooks so both LUT paths are exercised
            let vals: Vec<f64> = random_vec(&mut r, m * h * p, 1.0)
                .into_iter()
                .map(|v| {
                    if r.random_range(0.0..1.0) < 0.5 {
                        0.0
                    } else {
                        v
                    }
                })
                .collect();
            let books = Codebooks::new(m, h, p, vals).unwrap();
            let sparse = SparseCodebooks::from_dense(&books);
            let codes = random_codes(&mut r, 100, m, h);

            for _ in 0..10 {
                let z_q = random_unit(&mut r, p);
                let lut = build_lut(&z_q, &books).unwrap();
                for i in 0..codes.n() {
                    let code = codes.row(i);
                    let recon = books.reconstruct(code);
                    let direct = dot(&z_q, &recon);
                    assert!(
                        (adc_score(code, &lut) - direct).abs() < 1e-9,
                        "ADC mismatch beyond 1e-9"
                    );

                    // criterion 5: distance-reconstruction bound with unit query
                    let z = random_unit(&mut r, p);
                    let lhs = (dot(&z_q, &z) - dot(&z_q, &recon)).abs();
                    let rhs = squared_distance(&z, &recon).sqrt();
                    assert!(lhs <= rhs + 1e-12, "bound violated: {lhs} > {rhs}");
                    bound_checked += 1;
                }

                // rankings must agree exactly between the two LUT paths
                let lut_sparse = build_lut_sparse(&z_q, &sparse).unwrap();
                let dense_rank = rank_with_lut(&lut, &codes, codes.n()).unwrap();
                let sparse_rank = rank_with_lut(&lut_sparse, &codes, codes.n()).unwrap();
                let dense_ids: Vec<u64> = dense_rank.iter().map(|&(id, _)| id).collect();
                let sparse_ids: Vec<u64> = sparse_rank.iter().map(|&(id, _)| id).collect();
                assert_eq!(dense_ids, sparse_ids, "sparse and dense rankings differ");
            }
        }
        assert!(bound_checked >= 1000, "checked only {bound_checked} pairs");
        println!("ACCEPTANCE 05 distance-reconstruction bound: PASS");
    });
}

// ---------------------------------------------------------------- 6

#[test]
fn acceptance_06_lasso_suite() {
    report(
        6,
        "lasso least-squares limit, KKT, sparsity budgets",
        || {
            let mut r = rng(0xACC6);

            // l1 = 0 matches the normal-equations solution
            for _ in 0..5 {
                let k = 6;
                let mut a = vec![0.0; k * k];
                for i in 0..k {
                    for j in 0..k {
                        a[i * k + j] = r.random_range(-0.5..0.5) + if i == j { 2.5 } else { 0.0 };
                    }
                }
                let y = random_vec(&mut r, k, 1.0);
                let x = lasso_solve(&a, k, k, &y, 0.0, 1e-13, 50_000).unwrap();
                let am = nalgebra::DMatrix::from_row_slice(k, k, &a);
                let yv = nalgebra::DVector::from_column_slice(&y);
                let oracle = (am.transpose() * &am)
                    .cholesky()
                    .unwrap()
                    .solve(&(am.transpose() * yv));
                for j in 0..k {
                    assert!((x[j] - oracle[j]).abs() < 1e-6, "coordinate {j}");
                }
            }

            // KKT conditions at returned solutions
            for _ in 0..10 {
                let (rows, cols) = (20, 8);
                let a = random_vec(&mut r, rows * cols, 1.0);
                let y = random_vec(&mut r, rows, 1.0);
                let w = r.random_range(0.05..1.5);
                let x = lasso_solve(&a, rows, cols, &y, w, 1e-12, 100_000).unwrap();
                let design = DenseDesign::new(&a, rows, cols).unwrap();
                let violation = kkt_violation(&design, &y, &x, w, 0.0, None);
                assert!(violation < 1e-6, "KKT violation {violation:e}");
            }

            // sparsity budgets at desk scale h=16, p=16, m=2
            let (n, m, h, p) = (300, 2, 16, 16);
            let z = random_vec(&mut r, n * p, 1.0);
            let codes = random_codes(&mut r, n, m, h);
            let prev = random_books(&mut r, m, h, p);
            for eps in [h * p, h * p + p * p] {
                let weight =
                    calibrate_l1_weight(&z, None, &codes, &prev, 1.0, 0.0, eps, 1e-6).unwrap();
                let books = update_sparse(&z, None, &codes, &prev, 1.0, 0.0, weight, 1e-6).unwrap();
                let nnz = count_nonzeros(&books);
                assert!(
                    nnz <= eps,
                    "budget {eps}: got {nnz} nonzeros at weight {weight}"
                );
            }
        },
    );
}

// ---------------------------------------------------------------- 7

/// Margins frozen from the committed reference run (data seed 0xD5C, fit
/// seed 7): map@100 full 0.6387, ablation 0.5523, random 0.0151. The strict
/// orderings are the criterion; these floors pin the margins with headroom
/// for platform libm differences, which re-encoding amplifies.
const FULL_LOSS_MAP_FLOOR: f64 = 0.60;
const ABLATION_GAP_FLOOR: f64 = 0.04;
const RANDOM_GAP_FLOOR: f64 = 0.55;

struct RetrievalSetup {
    db_features: FeatureMatrix,
    db_labels: LabelVector,
    query_features: FeatureMatrix,
    query_labels: Vec<u32>,
}

fn desk_scale_data(seed: u64) -> RetrievalSetup {
    let (features, labels) = generate(&SynthOptions {
        n: 5500,
        classes: 10,
        dim: 64,
        noise: 0.35,
        seed,
    })
    .unwrap();
    let p = features.dim();
    let split = 5000;
    let db_values: Vec<f64> = features.values()[..split * p].to_vec();
    let q_values: Vec<f64> = features.values()[split * p..].to_vec();
    RetrievalSetup {
        db_features: FeatureMatrix::new(split, p, db_values).unwrap(),
        db_labels: LabelVector::new(10, labels.labels()[..split].to_vec()).unwrap(),
        query_features: FeatureMatrix::new(features.n() - split, p, q_values).unwrap(),
        query_labels: labels.labels()[split..].to_vec(),
    }
}

fn desk_scale_hp() -> HyperParams {
    HyperParams {
        alpha: 1.0,
        lambda: 0.05,
        gamma: 0.2,
        zeta: 0.5,
        k_perturb: 2,
        m: 4,
        h: 16,
        p: 16,
        sgd: SgdSettings {
            learning_rate: 0.03,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 128,
            epochs_per_round: 3,
        },
        rounds: 4,
        sls_rounds: 6,
        icm_iters: 2,
        ridge: 1e-6,
        sparsity_eps: None,
        stop_threshold: None,
    }
}

fn map_for_model(
    setup: &RetrievalSetup,
    params: &EmbedderParams,
    books: &Codebooks,
    codes: &CodeMatrix,
    r_cutoff: usize,
) -> f64 {
    let rankings: Vec<Vec<u64>> = (0..setup.query_features.n())
        .map(|q| {
            let z_q = params.embed(setup.query_features.row(q)).unwrap();
            let lut = build_lut(&z_q, books).unwrap();
            rank_with_lut(&lut, codes, r_cutoff)
                .unwrap()
                .into_iter()
                .map(|(id, _)| id)
                .collect()
        })
        .collect();
    map_at(&rankings, &setup.query_labels, &setup.db_labels, r_cutoff).unwrap()
}

#[test]
fn acceptance_07_end_to_end_retrieval_ordering() {
    report(7, "full loss beats ablation and random codes", || {
        let start = Instant::now();
        let setup = desk_scale_data(0xD5C);
        let hp_full = desk_scale_hp();
        let seed = 7;

        let full = fit(&setup.db_features, &setup.db_labels, &hp_full, seed).unwrap();
        let map_full = map_for_model(&setup, &full.params, &full.codebooks, &full.codes, 100);

        // ablation: quantization only, no center or discriminative terms
        let hp_ablation = HyperParams {
            lambda: 0.0,
            gamma: 0.0,
            ..desk_scale_hp()
        };
        let ablation = fit(&setup.db_features, &setup.db_labels, &hp_ablation, seed).unwrap();
        let map_ablation = map_for_model(
            &setup,
            &ablation.params,
            &ablation.codebooks,
            &ablation.codes,
            100,
        );

        // random codes under the full model's embedder and codebooks
        let mut r = rng(0xACC7);
        let random = random_codes(&mut r, setup.db_features.n(), hp_full.m, hp_full.h);
        let map_random = map_for_model(&setup, &full.params, &full.codebooks, &random, 100);

        println!(
            "  map@100 full {map_full:.4}, ablation {map_ablation:.4}, random {map_random:.4}"
        );
        assert!(
            map_full > map_ablation,
            "full loss ({map_full:.4}) must beat the ablation ({map_ablation:.4})"
        );
        assert!(
            map_full > map_random,
            "full loss ({map_full:.4}) must beat random codes ({map_random:.4})"
        );
        assert!(
            map_full >= FULL_LOSS_MAP_FLOOR,
            "map {map_full:.4} under reference floor"
        );
        assert!(map_full - map_ablation >= ABLATION_GAP_FLOOR);
        assert!(map_full - map_random >= RANDOM_GAP_FLOOR);
        assert!(
            start.elapsed().as_secs_f64() < 300.0,
            "end-to-end run too slow"
        );
    });
}

// ---------------------------------------------------------------- 8

/// Floor from the committed reference run (seed 0xC20, fit seed 17):
/// cross-domain map@100 0.3172 vs random baseline 0.1269.
const CROSS_DOMAIN_MAP_FLOOR: f64 = 0.25;

#[test]
fn acceptance_08_cross_domain_mode() {
    report(8, "cross-domain encoding of held-out classes", || {
        let (features, labels) = generate(&SynthOptions {
            n: 3000,
            classes: 10,
            dim: 64,
            noise: 0.2,
            seed: 0xC20,
        })
        .unwrap();
        let p = features.dim();

        // train on classes 0..6, hold out 7..9
        let mut train_vals = Vec::new();
        let mut train_labels = Vec::new();
        let mut held_vals = Vec::new();
        let mut held_labels = Vec::new();
        for i in 0..features.n() {
            let y = labels.label(i);
            if y < 7 {
                train_vals.extend_from_slice(features.row(i));
                train_labels.push(y);
            } else {
                held_vals.extend_from_slice(features.row(i));
                held_labels.push(y - 7);
            }
        }
        let train_features = FeatureMatrix::new(train_labels.len(), p, train_vals).unwrap();
        let train_label_vec = LabelVector::new(7, train_labels).unwrap();

        // split held-out classes into database and queries
        let n_held = held_labels.len();
        let n_query = n_held / 5;
        let n_db = n_held - n_query;
        let db_features = FeatureMatrix::new(n_db, p, held_vals[..n_db * p].to_vec()).unwrap();
        let db_labels = LabelVector::new(3, held_labels[..n_db].to_vec()).unwrap();
        let query_features =
            FeatureMatrix::new(n_query, p, held_vals[n_db * p..].to_vec()).unwrap();
        let query_labels = held_labels[n_db..].to_vec();

        let hp = HyperParams {
            rounds: 3,
            ..desk_scale_hp()
        };
        let out = fit(&train_features, &train_label_vec, &hp, 17).unwrap();

        // cross-domain encoding drops the center term and needs no labels
        let codes = encode_database(
            &db_features,
            &out.params,
            &out.codebooks,
            None,
            None,
            &hp,
            true,
            23,
        )
        .unwrap();

        let setup = RetrievalSetup {
            db_features,
            db_labels,
            query_features,
            query_labels,
        };
        let map_cross = map_for_model(&setup, &out.params, &out.codebooks, &codes, 100);

        let mut r = rng(0xACC8);
        let random = random_codes(&mut r, setup.db_features.n(), hp.m, hp.h);
        let map_random = map_for_model(&setup, &out.params, &out.codebooks, &random, 100);

        println!("  cross-domain map@100 {map_cross:.4}, random baseline {map_random:.4}");
        assert!(
            map_cross > map_random,
            "cross-domain ({map_cross:.4}) must beat random codes ({map_random:.4})"
        );
        assert!(map_cross >= CROSS_DOMAIN_MAP_FLOOR);
    });
}

// ---------------------------------------------------------------- 9

#[test]
fn acceptance_09_evaluation_oracle() {
    report(9, "AP/MAP/PR vs independent naive scorer", || {
        let mut r = rng(0xACC9);
        let n = 40u64;
        for _ in 0..50 {
            let mut ids: Vec<u64> = (0..n).collect();
            for i in (1..ids.len()).rev() {
                let j = r.random_range(0..=i);
                ids.swap(i, j);
            }
            let relevant: HashSet<u64> =
                (0..n).filter(|_| r.random_range(0.0..1.0) < 0.3).collect();
            if relevant.is_empty() {
                continue;
            }
            let cutoff = r.random_range(1..=n as usize);

            // naive scorer: recount precision from scratch at every rank
            let mut naive_ap = 0.0;
            for rank in 1..=cutoff.min(ids.len()) {
                if relevant.contains(&ids[rank - 1]) {
                    let hits = ids[..rank]
                        .iter()
                        .filter(|id| relevant.contains(id))
                        .count();
                    naive_ap += hits as f64 / rank as f64;
                }
            }
            naive_ap /= relevant.len().min(cutoff) as f64;
            assert_eq!(average_precision(&ids, &relevant, cutoff), naive_ap);

            let pr = precision_recall_points(&ids, &relevant);
            for (rank, &(rec, prec)) in pr.iter().enumerate() {
                let hits = ids[..=rank]
                    .iter()
                    .filter(|id| relevant.contains(id))
                    .count();
                assert_eq!(prec, hits as f64 / (rank + 1) as f64);
                assert_eq!(rec, hits as f64 / relevant.len() as f64);
            }
        }

        // MAP over labeled rankings vs the same naive scorer
        let db = LabelVector::new(5, (0..60).map(|_| r.random_range(0..5)).collect()).unwrap();
        let mut rankings = Vec::new();
        let mut qlabels = Vec::new();
        for _ in 0..10 {
            let mut ids: Vec<u64> = (0..60).collect();
            for i in (1..ids.len()).rev() {
                let j = r.random_range(0..=i);
                ids.swap(i, j);
            }
            rankings.push(ids);
            qlabels.push(r.random_range(0..5));
        }
        let got = map_at(&rankings, &qlabels, &db, 25).unwrap();
        let mut naive = 0.0;
        for (ranked, &y) in rankings.iter().zip(&qlabels) {
            let relevant = relevant_by_label(&db, y);
            let mut ap = 0.0;
            for rank in 1..=25 {
                if relevant.contains(&ranked[rank - 1]) {
                    let hits = ranked[..rank]
                        .iter()
                        .filter(|id| relevant.contains(id))
                        .count();
                    ap += hits as f64 / rank as f64;
                }
            }
            naive += ap / relevant.len().min(25) as f64;
        }
        naive /= rankings.len() as f64;
        assert_eq!(got, naive);
    });
}

// ---------------------------------------------------------------- 10

#[test]
fn acceptance_10_pipeline_determinism() {
    report(10, "byte-identical pipeline outputs across runs", || {
        let bin = env!("CARGO_BIN_EXE_sphq");
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();

        let run_pipeline = |tag: &str| {
            let sub = root.join(tag);
            std::fs::create_dir_all(&sub).unwrap();
            let features = sub.join("features.sqft");
            let labels = sub.join("labels.sqlb");
            let model = sub.join("model");
            let codes = sub.join("codes.sqcd");
            let results = sub.join("results.csv");
            let metrics = sub.join("metrics.csv");
            let json = sub.join("metrics.json");

            let run = |args: &[&str]| {
                let out = std::process::Command::new(bin)
                    .args(args)
                    .output()
                    .expect("spawn sphq");
                assert!(
                    out.status.success(),
                    "command {args:?} failed: {}",
                    String::from_utf8_lossy(&out.stderr)
                );
            };

            run(&[
                "synth",
                "--n",
                "400",
                "--classes",
                "5",
                "--dim",
                "16",
                "--noise",
                "0.2",
                "--seed",
                "11",
                "--features-out",
                features.to_str().unwrap(),
                "--labels-out",
                labels.to_str().unwrap(),
            ]);
            run(&[
                "train",
                "--features",
                features.to_str().unwrap(),
                "--labels",
                labels.to_str().unwrap(),
                "--out-dir",
                model.to_str().unwrap(),
                "--seed",
                "13",
                "--threads",
                "2",
                "--p",
                "8",
                "--m",
                "2",
                "--h",
                "8",
                "--rounds",
                "2",
                "--epochs-per-round",
                "2",
                "--sls-rounds",
                "4",
                "--learning-rate",
                "0.05",
            ]);
            run(&[
                "encode",
                "--features",
                features.to_str().unwrap(),
                "--labels",
                labels.to_str().unwrap(),
                "--artifacts",
                model.to_str().unwrap(),
                "--out",
                codes.to_str().unwrap(),
                "--seed",
                "17",
            ]);
            run(&[
                "search",
                "--queries",
                features.to_str().unwrap(),
                "--artifacts",
                model.to_str().unwrap(),
                "--codes",
                codes.to_str().unwrap(),
                "-k",
                "10",
                "--out",
                results.to_str().unwrap(),
                "--threads",
                "2",
            ]);
            run(&[
                "eval",
                "--results",
                results.to_str().unwrap(),
                "--query-labels",
                labels.to_str().unwrap(),
                "--db-labels",
                labels.to_str().unwrap(),
                "--codes",
                codes.to_str().unwrap(),
                "--r",
                "10",
                "--metrics-out",
                metrics.to_str().unwrap(),
                "--json-out",
                json.to_str().unwrap(),
            ]);
            (codes, results, metrics, json)
        };

        let (c1, r1, m1, j1) = run_pipeline("a");
        let (c2, r2, m2, j2) = run_pipeline("b");
        for (a, b, what) in [
            (&c1, &c2, "code files"),
            (&r1, &r2, "search results"),
            (&m1, &m2, "metrics csv"),
            (&j1, &j2, "metrics json"),
        ] {
            let ba = std::fs::read(a).unwrap();
            let bb = std::fs::read(b).unwrap();
            assert_eq!(ba, bb, "{what} differ between identical runs");
        }
    });
}

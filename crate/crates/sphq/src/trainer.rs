//! Alternating optimization of the four-term objective: SGD on the
//! embedder, damped center updates, the codebook solve and re-encoding,
//! with per-round loss bookkeeping.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codebooks::{calibrate_l1_weight, codebook_objective, update_dense, update_sparse};
use crate::config::HyperParams;
use crate::data::{CenterTable, CodeMatrix, Codebooks, FeatureMatrix, LabelVector};
use crate::embedder::{
    class_mean_centers, loss_and_grad, softmax_loss, update_centers, Batch, EmbedderParams,
    LossBreakdown, LossWeights, Velocity,
};
use crate::encoder::{encode_batch, point_seed, SlsParams};
use crate::error::{Error, Result};

/// Per-round trace entry. Loss terms are dataset means; the three
/// `quantizer_*` fields record `alpha L_Q + gamma L_D` around the codebook
/// and encoding blocks of that round (embedder and centers frozen).
#[derive(Debug, Clone, Copy)]
pub struct RoundRecord {
    pub round: usize,
    pub softmax: f64,
    pub quantization: f64,
    pub center: f64,
    pub discriminative: f64,
    pub total: f64,
    pub quantizer_before_codebook_update: f64,
    pub quantizer_after_codebook_update: f64,
    pub quantizer_after_encode: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: EmbedderParams,
    pub centers: CenterTable,
    pub codebooks: Codebooks,
    pub codes: CodeMatrix,
    pub trace: Vec<RoundRecord>,
}

fn gather_phi_rows(centers: &CenterTable, labels: &LabelVector) -> Vec<f64> {
    let p = centers.p();
    let mut out = Vec::with_capacity(labels.n() * p);
    for &y in labels.labels() {
        out.extend_from_slice(centers.center(y as usize));
    }
    out
}

fn seeded_shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
}

/// Dataset-mean loss terms under the current state.
fn dataset_losses(
    params: &EmbedderParams,
    features: &FeatureMatrix,
    labels: &LabelVector,
    centers: &CenterTable,
    books: &Codebooks,
    codes: &CodeMatrix,
    hp: &HyperParams,
) -> Result<LossBreakdown> {
    let n = features.n();
    let mut softmax = 0.0;
    let mut quant = 0.0;
    let mut center = 0.0;
    let mut disc = 0.0;
    for i in 0..n {
        let z = params.embed(features.row(i))?;
        let y = labels.label(i) as usize;
        softmax += softmax_loss(params, &z, labels.label(i));
        let recon = books.reconstruct(codes.row(i));
        quant += crate::data::squared_distance(&z, &recon);
        let phi = centers.center(y);
        center += crate::data::squared_distance(&z, phi);
        disc += crate::data::squared_distance(phi, &recon);
    }
    let scale = 1.0 / n as f64;
    Ok(LossBreakdown::combine(
        softmax * scale,
        quant * scale,
        center * scale,
        disc * scale,
        hp.alpha,
        hp.lambda,
        hp.gamma,
    ))
}

fn quantizer_mean(
    z_matrix: &[f64],
    phi_rows: Option<&[f64]>,
    codes: &CodeMatrix,
    books: &Codebooks,
    hp: &HyperParams,
) -> Result<f64> {
    let n = codes.n() as f64;
    Ok(codebook_objective(z_matrix, phi_rows, codes, books, hp.alpha, hp.gamma)? / n)
}

/// Random valid code matrix used to seed the first codebook solve.
fn random_codes(n: usize, m: usize, h: usize, seed: u64) -> CodeMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = (0..n * m).map(|_| rng.random_range(0..h) as u8).collect();
    CodeMatrix::new(n, m, h, codes).expect("random codes are valid")
}

/// Codebook block: dense closed form, or the Lasso path with the weight
/// calibrated to the configured nonzero budget.
fn codebook_block(
    z_matrix: &[f64],
    phi_rows: Option<&[f64]>,
    codes: &CodeMatrix,
    prev: &Codebooks,
    hp: &HyperParams,
) -> Result<Codebooks> {
    match hp.sparsity_eps {
        None => update_dense(
            z_matrix, phi_rows, codes, prev, hp.alpha, hp.gamma, hp.ridge,
        ),
        Some(eps) => {
            let weight = calibrate_l1_weight(
                z_matrix, phi_rows, codes, prev, hp.alpha, hp.gamma, eps, hp.ridge,
            )?;
            update_sparse(
                z_matrix, phi_rows, codes, prev, hp.alpha, hp.gamma, weight, hp.ridge,
            )
        }
    }
}

/// Train the full model by alternating optimization.
///
/// Each round runs (1) SGD epochs on the embedder, (2) center updates per
/// mini-batch, (3) the codebook update, (4) re-encoding warm-started from
/// the previous codes. With `alpha = gamma = 0` the quantizer blocks are
/// skipped and this degenerates to softmax(+center) training.
pub fn fit(
    features: &FeatureMatrix,
    labels: &LabelVector,
    hp: &HyperParams,
    seed: u64,
) -> Result<TrainOutcome> {
    hp.validate()?;
    if features.n() != labels.n() {
        return Err(Error::shape(
            "features vs labels",
            format!("n = {}", features.n()),
            format!("n = {}", labels.n()),
        ));
    }
    let n = features.n();
    let d = features.dim();
    let l = labels.num_classes() as usize;
    let quantizer_active = hp.alpha > 0.0 || hp.gamma > 0.0;
    let centers_active = hp.lambda > 0.0 || hp.gamma > 0.0;

    let mut params = EmbedderParams::random(d, hp.p, l, point_seed(seed, 0x01));
    let mut z_matrix = params.embed_all(features)?;
    let mut centers = class_mean_centers(&z_matrix, labels, hp.p)?;

    // one dense solve from a random valid assignment initializes the
    // codebooks; encoding then aligns the codes with them
    let zero_books = Codebooks::new(hp.m, hp.h, hp.p, vec![0.0; hp.m * hp.h * hp.p])?;
    let init_codes = random_codes(n, hp.m, hp.h, point_seed(seed, 0x02));
    let phi_rows = gather_phi_rows(&centers, labels);
    let phi_opt = if hp.gamma > 0.0 {
        Some(phi_rows.as_slice())
    } else {
        None
    };
    // with alpha = gamma = 0 the blended target is undefined; initialize the
    // unused codebooks from the plain quantization objective instead
    let (init_alpha, init_gamma) = if quantizer_active {
        (hp.alpha, hp.gamma)
    } else {
        (1.0, 0.0)
    };
    let mut books = update_dense(
        &z_matrix,
        phi_opt,
        &init_codes,
        &zero_books,
        init_alpha,
        init_gamma,
        hp.ridge,
    )?;
    let sls = SlsParams::from_hyper(hp);
    let mut codes = encode_batch(
        &z_matrix,
        phi_opt,
        &books,
        &sls,
        point_seed(seed, 0x03),
        None,
    )?;

    let weights = LossWeights {
        alpha: hp.alpha,
        lambda: hp.lambda,
        gamma: hp.gamma,
    };
    let mut trace = Vec::with_capacity(hp.rounds);
    let mut prev_total: Option<f64> = None;

    for round in 0..hp.rounds {
        // (1) SGD on the embedder, quantizer state fixed
        let mut velocity = Velocity::zeros(&params);
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..hp.sgd.epochs_per_round {
            let mut rng = ChaCha8Rng::seed_from_u64(point_seed(
                seed,
                0x1000 + (round as u64) * 64 + epoch as u64,
            ));
            seeded_shuffle(&mut order, &mut rng);
            for chunk in order.chunks(hp.sgd.batch_size) {
                let batch = Batch {
                    features,
                    labels,
                    indices: chunk,
                    centers: Some(&centers),
                    codebooks: Some(&books),
                    codes: Some(&codes),
                };
                let (loss, grad) = loss_and_grad(&params, &batch, weights)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("round {round} training loss"),
                    });
                }
                crate::embedder::sgd_step(&mut params, &grad, &hp.sgd, &mut velocity)?;
            }
        }
        z_matrix = params.embed_all(features)?;

        // (2) damped center updates, one pass of mini-batches
        if centers_active {
            let mut rng = ChaCha8Rng::seed_from_u64(point_seed(seed, 0x2000 + round as u64));
            seeded_shuffle(&mut order, &mut rng);
            for chunk in order.chunks(hp.sgd.batch_size) {
                let p = hp.p;
                let mut zs = Vec::with_capacity(chunk.len() * p);
                let mut recons = Vec::with_capacity(chunk.len() * p);
                let mut batch_labels = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    zs.extend_from_slice(&z_matrix[i * p..(i + 1) * p]);
                    if hp.gamma > 0.0 {
                        recons.extend(books.reconstruct(codes.row(i)));
                    }
                    batch_labels.push(labels.label(i));
                }
                let recon_opt = if hp.gamma > 0.0 {
                    Some(recons.as_slice())
                } else {
                    None
                };
                update_centers(
                    &mut centers,
                    &zs,
                    recon_opt,
                    &batch_labels,
                    hp.lambda,
                    hp.gamma,
                    hp.zeta,
                )?;
            }
        }

        // (3) codebooks and (4) codes, with embedder and centers frozen
        let phi_rows = gather_phi_rows(&centers, labels);
        let phi_opt = if hp.gamma > 0.0 {
            Some(phi_rows.as_slice())
        } else {
            None
        };
        let (q_before, q_mid, q_after) = if quantizer_active {
            let before = quantizer_mean(&z_matrix, phi_opt, &codes, &books, hp)?;
            books = codebook_block(&z_matrix, phi_opt, &codes, &books, hp)?;
            let mid = quantizer_mean(&z_matrix, phi_opt, &codes, &books, hp)?;
            codes = encode_batch(
                &z_matrix,
                phi_opt,
                &books,
                &sls,
                point_seed(seed, 0x3000 + round as u64),
                Some(&codes),
            )?;
            let after = quantizer_mean(&z_matrix, phi_opt, &codes, &books, hp)?;
            (before, mid, after)
        } else {
            (0.0, 0.0, 0.0)
        };

        let losses = dataset_losses(&params, features, labels, &centers, &books, &codes, hp)?;
        if !losses.is_finite() {
            return Err(Error::NonFinite {
                context: format!("round {round} loss trace"),
            });
        }
        trace.push(RoundRecord {
            round,
            softmax: losses.softmax,
            quantization: losses.quantization,
            center: losses.center,
            discriminative: losses.discriminative,
            total: losses.total,
            quantizer_before_codebook_update: q_before,
            quantizer_after_codebook_update: q_mid,
            quantizer_after_encode: q_after,
        });

        if let Some(threshold) = hp.stop_threshold {
            if let Some(prev) = prev_total {
                let rel = (prev - losses.total).abs() / prev.abs().max(1e-12);
                if rel < threshold {
                    break;
                }
            }
            prev_total = Some(losses.total);
        }
    }

    Ok(TrainOutcome {
        params,
        centers,
        codebooks: books,
        codes,
        trace,
    })
}

/// Embed and encode a database with a trained model. In cross-domain mode
/// the center-dependent term is dropped (`gamma = 0`), so no labels are
/// needed and unseen classes encode cleanly.
#[allow(clippy::too_many_arguments)]
pub fn encode_database(
    features: &FeatureMatrix,
    params: &EmbedderParams,
    books: &Codebooks,
    centers: Option<&CenterTable>,
    labels: Option<&LabelVector>,
    hp: &HyperParams,
    cross_domain: bool,
    seed: u64,
) -> Result<CodeMatrix> {
    let z_matrix = params.embed_all(features)?;
    let sls = SlsParams::from_hyper(hp);
    if cross_domain || hp.gamma == 0.0 {
        return encode_batch(
            &z_matrix,
            None,
            books,
            &sls.without_center_term(),
            seed,
            None,
        );
    }
    let (centers, labels) = match (centers, labels) {
        (Some(c), Some(l)) => (c, l),
        _ => return Err(Error::MissingCenters),
    };
    if labels.n() != features.n() {
        return Err(Error::shape(
            "labels vs features",
            format!("n = {}", features.n()),
            format!("n = {}", labels.n()),
        ));
    }
    if let Some(&bad) = labels.labels().iter().find(|&&y| (y as usize) >= centers.l()) {
        return Err(Error::shape(
            "labels vs trained centers",
            format!("class < {}", centers.l()),
            format!("class {bad}"),
        ));
    }
    let phi_rows = gather_phi_rows(centers, labels);
    encode_batch(&z_matrix, Some(&phi_rows), books, &sls, seed, None)
}

pub fn trace_to_csv(trace: &[RoundRecord]) -> String {
    let mut out = String::from(
        "round,softmax,quantization,center,discriminative,total,\
         quantizer_before_codebook_update,quantizer_after_codebook_update,quantizer_after_encode\n",
    );
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.round,
            r.softmax,
            r.quantization,
            r.center,
            r.discriminative,
            r.total,
            r.quantizer_before_codebook_update,
            r.quantizer_after_codebook_update,
            r.quantizer_after_encode,
        ));
    }
    out
}

const EMBEDDER_FILE: &str = "embedder.sqft";
const CLASSIFIER_FILE: &str = "classifier.sqft";
const CENTERS_FILE: &str = "centers.sqft";
const CODEBOOKS_FILE: &str = "codebooks.sqcb";
const TRAIN_CODES_FILE: &str = "train_codes.sqcd";
const MODEL_CONFIG_FILE: &str = "model.cfg";
const LOSS_TRACE_FILE: &str = "loss_trace.csv";

/// Trained model artifacts as stored on disk. The embedder weights and the
/// classifier (`W_cls` with the bias as last column) reuse the feature-file
/// format.
pub struct Artifacts {
    pub params: EmbedderParams,
    pub centers: CenterTable,
    pub codebooks: Codebooks,
    pub hp: HyperParams,
}

pub fn save_artifacts(
    dir: impl AsRef<Path>,
    outcome: &TrainOutcome,
    hp: &HyperParams,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = outcome.params.p;
    let d = outcome.params.d;
    let l = outcome.params.l;

    crate::io::save_features(
        &FeatureMatrix::new(p, d, outcome.params.w.clone())?,
        dir.join(EMBEDDER_FILE),
    )?;
    let mut cls = Vec::with_capacity(l * (p + 1));
    for r in 0..l {
        cls.extend_from_slice(&outcome.params.w_cls[r * p..(r + 1) * p]);
        cls.push(outcome.params.b_cls[r]);
    }
    crate::io::save_features(
        &FeatureMatrix::new(l, p + 1, cls)?,
        dir.join(CLASSIFIER_FILE),
    )?;
    crate::io::save_features(
        &FeatureMatrix::new(outcome.centers.l(), p, outcome.centers.values().to_vec())?,
        dir.join(CENTERS_FILE),
    )?;
    crate::io::save_codebooks(&outcome.codebooks, dir.join(CODEBOOKS_FILE))?;
    crate::io::save_codes(&outcome.codes, dir.join(TRAIN_CODES_FILE))?;
    std::fs::write(dir.join(MODEL_CONFIG_FILE), hp.to_config_string())
        .map_err(|e| Error::io(dir.join(MODEL_CONFIG_FILE), e))?;
    std::fs::write(dir.join(LOSS_TRACE_FILE), trace_to_csv(&outcome.trace))
        .map_err(|e| Error::io(dir.join(LOSS_TRACE_FILE), e))?;
    Ok(())
}

pub fn load_artifacts(dir: impl AsRef<Path>) -> Result<Artifacts> {
    let dir = dir.as_ref();
    let w = crate::io::load_features(dir.join(EMBEDDER_FILE))?;
    let cls = crate::io::load_features(dir.join(CLASSIFIER_FILE))?;
    let centers = crate::io::load_features(dir.join(CENTERS_FILE))?;
    let codebooks = crate::io::load_codebooks(dir.join(CODEBOOKS_FILE))?;

    let p = w.n();
    let d = w.dim();
    let l = cls.n();
    if cls.dim() != p + 1 {
        return Err(Error::shape(
            "classifier artifact",
            format!("dim {}", p + 1),
            format!("dim {}", cls.dim()),
        ));
    }
    let mut w_cls = Vec::with_capacity(l * p);
    let mut b_cls = Vec::with_capacity(l);
    for r in 0..l {
        let row = cls.row(r);
        w_cls.extend_from_slice(&row[..p]);
        b_cls.push(row[p]);
    }
    let params = EmbedderParams::new(d, p, l, w.values().to_vec(), w_cls, b_cls)?;

    let mut hp = HyperParams::default();
    let entries = crate::config::load_config_file(dir.join(MODEL_CONFIG_FILE))?;
    crate::config::apply_config(&mut hp, &entries)?;

    Ok(Artifacts {
        params,
        centers: CenterTable::new(centers.n(), centers.dim(), centers.values().to_vec())?,
        codebooks,
        hp,
    })
}

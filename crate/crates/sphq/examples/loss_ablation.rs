//! Contribution of the loss terms: trains the full objective against the
//! quantization-only ablation and a random-code baseline, then compares
//! retrieval quality.
//!
//! ```bash
//! cargo run --release --example loss_ablation
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sphq::config::{HyperParams, SgdSettings};
use sphq::data::{CodeMatrix, FeatureMatrix, LabelVector};
use sphq::eval::map_at;
use sphq::search::{build_lut, rank_with_lut};
use sphq::synth::{generate, SynthOptions};
use sphq::trainer::fit;

fn evaluate(
    queries: &FeatureMatrix,
    query_labels: &[u32],
    db_labels: &LabelVector,
    params: &sphq::embedder::EmbedderParams,
    books: &sphq::Codebooks,
    codes: &CodeMatrix,
) -> sphq::Result<f64> {
    let k = 100;
    let mut rankings = Vec::with_capacity(queries.n());
    for q in 0..queries.n() {
        let z_q = params.embed(queries.row(q))?;
        let lut = build_lut(&z_q, books)?;
        rankings.push(
            rank_with_lut(&lut, codes, k)?
                .into_iter()
                .map(|(id, _)| id)
                .collect::<Vec<_>>(),
        );
    }
    map_at(&rankings, query_labels, db_labels, k)
}

fn main() -> sphq::Result<()> {
    let (features, labels) = generate(&SynthOptions {
        n: 2200,
        classes: 10,
        dim: 48,
        noise: 0.3,
        seed: 8,
    })?;
    let d = features.dim();
    let n_db = 2000;
    let db = FeatureMatrix::new(n_db, d, features.values()[..n_db * d].to_vec())?;
    let db_labels = LabelVector::new(10, labels.labels()[..n_db].to_vec())?;
    let queries = FeatureMatrix::new(
        features.n() - n_db,
        d,
        features.values()[n_db * d..].to_vec(),
    )?;
    let query_labels = labels.labels()[n_db..].to_vec();

    let full_hp = HyperParams {
        m: 4,
        h: 16,
        p: 12,
        alpha: 1.0,
        lambda: 0.05,
        gamma: 0.2,
        rounds: 3,
        sls_rounds: 6,
        icm_iters: 2,
        k_perturb: 2,
        sgd: SgdSettings {
            learning_rate: 0.03,
            epochs_per_round: 3,
            ..SgdSettings::default()
        },
        ..HyperParams::default()
    };

    let full = fit(&db, &db_labels, &full_hp, 5)?;
    let map_full = evaluate(
        &queries,
        &query_labels,
        &db_labels,
        &full.params,
        &full.codebooks,
        &full.codes,
    )?;

    let ablation_hp = HyperParams {
        lambda: 0.0,
        gamma: 0.0,
        ..full_hp.clone()
    };
    let ablation = fit(&db, &db_labels, &ablation_hp, 5)?;
    let map_ablation = evaluate(
        &queries,
        &query_labels,
        &db_labels,
        &ablation.params,
        &ablation.codebooks,
        &ablation.codes,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let random = CodeMatrix::new(
        n_db,
        full_hp.m,
        full_hp.h,
        (0..n_db * full_hp.m)
            .map(|_| rng.random_range(0..full_hp.h) as u8)
            .collect(),
    )?;
    let map_random = evaluate(
        &queries,
        &query_labels,
        &db_labels,
        &full.params,
        &full.codebooks,
        &random,
    )?;

    println!("map@100, softmax + quantization + center + discriminative: {map_full:.4}");
    println!("map@100, softmax + quantization only:                      {map_ablation:.4}");
    println!("map@100, random codes:                                     {map_random:.4}");
    Ok(())
}

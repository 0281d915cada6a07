//! Full pipeline in memory: synthesize labeled features, train the
//! quantizer, encode a database, answer queries and score the retrieval.
//!
//! ```bash
//! cargo run --release --example end_to_end
//! ```

use sphq::config::{HyperParams, SgdSettings};
use sphq::data::{FeatureMatrix, LabelVector};
use sphq::eval::map_at;
use sphq::search::{build_lut, rank_with_lut};
use sphq::synth::{generate, SynthOptions};
use sphq::trainer::{encode_database, fit};

fn main() -> sphq::Result<()> {
    // 2000 points around 8 class centers on the sphere in R^32
    let (features, labels) = generate(&SynthOptions {
        n: 2200,
        classes: 8,
        dim: 32,
        noise: 0.25,
        seed: 42,
    })?;

    // hold out the last 200 points as queries
    let p_raw = features.dim();
    let n_db = 2000;
    let db = FeatureMatrix::new(n_db, p_raw, features.values()[..n_db * p_raw].to_vec())?;
    let db_labels = LabelVector::new(8, labels.labels()[..n_db].to_vec())?;
    let queries = FeatureMatrix::new(
        features.n() - n_db,
        p_raw,
        features.values()[n_db * p_raw..].to_vec(),
    )?;
    let query_labels = labels.labels()[n_db..].to_vec();

    let hp = HyperParams {
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

    println!(
        "training {} points, {} classes, {} bits per code",
        db.n(),
        db_labels.num_classes(),
        hp.bits()
    );
    let out = fit(&db, &db_labels, &hp, 7)?;
    for rec in &out.trace {
        println!(
            "round {}: total {:.4} (softmax {:.4}, quant {:.4}, center {:.4}, disc {:.4})",
            rec.round, rec.total, rec.softmax, rec.quantization, rec.center, rec.discriminative
        );
    }

    // encode the database with the trained model (same as out.codes here,
    // but this is the path a fresh database would take)
    let codes = encode_database(
        &db,
        &out.params,
        &out.codebooks,
        Some(&out.centers),
        Some(&db_labels),
        &hp,
        false,
        99,
    )?;

    // answer each query through the m x h lookup table
    let k = 100;
    let mut rankings = Vec::with_capacity(queries.n());
    for q in 0..queries.n() {
        let z_q = out.params.embed(queries.row(q))?;
        let lut = build_lut(&z_q, &out.codebooks)?;
        let ranked = rank_with_lut(&lut, &codes, k)?;
        rankings.push(ranked.into_iter().map(|(id, _)| id).collect::<Vec<_>>());
    }

    let map = map_at(&rankings, &query_labels, &db_labels, k)?;
    println!("map@{k} over {} queries: {map:.4}", queries.n());

    let report =
        sphq::eval::quantization_report(&out.params.embed_all(&db)?, &out.codebooks, &codes)?;
    println!(
        "quantization mse {:.5}, mean reconstruction norm {:.4}",
        report.mean_squared_error, report.mean_reconstruction_norm
    );
    Ok(())
}

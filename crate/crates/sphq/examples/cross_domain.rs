//! Cross-domain retrieval: train on 7 of 10 classes, then encode and query
//! the 3 held-out classes. Encoding drops the center-dependent term, so no
//! labels are needed for the unseen classes.
//!
//! ```bash
//! cargo run --release --example cross_domain
//! ```

use sphq::config::{HyperParams, SgdSettings};
use sphq::data::{FeatureMatrix, LabelVector};
use sphq::eval::map_at;
use sphq::search::{build_lut, rank_with_lut};
use sphq::synth::{generate, SynthOptions};
use sphq::trainer::{encode_database, fit};

fn main() -> sphq::Result<()> {
    let (features, labels) = generate(&SynthOptions {
        n: 2500,
        classes: 10,
        dim: 32,
        noise: 0.2,
        seed: 3,
    })?;
    let d = features.dim();

    // partition by label: classes 0..6 train the model, 7..9 are unseen
    let mut train = (Vec::new(), Vec::new());
    let mut held = (Vec::new(), Vec::new());
    for i in 0..features.n() {
        let y = labels.label(i);
        if y < 7 {
            train.0.extend_from_slice(features.row(i));
            train.1.push(y);
        } else {
            held.0.extend_from_slice(features.row(i));
            held.1.push(y - 7);
        }
    }
    let train_features = FeatureMatrix::new(train.1.len(), d, train.0)?;
    let train_labels = LabelVector::new(7, train.1)?;

    let n_held = held.1.len();
    let n_query = n_held / 5;
    let n_db = n_held - n_query;
    let db = FeatureMatrix::new(n_db, d, held.0[..n_db * d].to_vec())?;
    let db_labels = LabelVector::new(3, held.1[..n_db].to_vec())?;
    let queries = FeatureMatrix::new(n_query, d, held.0[n_db * d..].to_vec())?;
    let query_labels = held.1[n_db..].to_vec();

    let hp = HyperParams {
        m: 4,
        h: 16,
        p: 12,
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
    println!("training on {} points of 7 classes", train_features.n());
    let out = fit(&train_features, &train_labels, &hp, 11)?;

    // cross_domain = true: gamma is dropped, centers and labels unused
    let codes = encode_database(&db, &out.params, &out.codebooks, None, None, &hp, true, 29)?;
    println!("encoded {} held-out points without labels", codes.n());

    let k = 100;
    let mut rankings = Vec::with_capacity(queries.n());
    for q in 0..queries.n() {
        let z_q = out.params.embed(queries.row(q))?;
        let lut = build_lut(&z_q, &out.codebooks)?;
        rankings.push(
            rank_with_lut(&lut, &codes, k)?
                .into_iter()
                .map(|(id, _)| id)
                .collect::<Vec<_>>(),
        );
    }
    let map = map_at(&rankings, &query_labels, &db_labels, k)?;
    println!("cross-domain map@{k} on unseen classes: {map:.4}");
    Ok(())
}

//! Trainable embedding map: a linear projection onto the unit hypersphere
//! with a softmax classifier head, plus the gradients of every loss term
//! with respect to those parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{
    dot, norm, squared_distance, CenterTable, CodeMatrix, Codebooks, FeatureMatrix, LabelVector,
};
use crate::error::{Error, Result};

/// Norm below which the projection direction is treated as undefined.
const PROJECTION_TOLERANCE: f64 = 1e-12;

/// Learning-rate multiplier for the classifier head, which is trained from
/// scratch while the projection tracks the base rate.
pub const HEAD_LR_MULTIPLIER: f64 = 10.0;

/// Parameters of the embedder: projection `w` (p x d), classifier weights
/// `w_cls` (l x p) and classifier bias `b_cls` (l).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderParams {
    pub d: usize,
    pub p: usize,
    pub l: usize,
    pub w: Vec<f64>,
    pub w_cls: Vec<f64>,
    pub b_cls: Vec<f64>,
}

impl EmbedderParams {
    pub fn new(
        d: usize,
        p: usize,
        l: usize,
        w: Vec<f64>,
        w_cls: Vec<f64>,
        b_cls: Vec<f64>,
    ) -> Result<Self> {
        if w.len() != p * d || w_cls.len() != l * p || b_cls.len() != l {
            return Err(Error::shape(
                "embedder params",
                format!("w {}x{}, w_cls {}x{}, b_cls {}", p, d, l, p, l),
                format!("{}, {}, {}", w.len(), w_cls.len(), b_cls.len()),
            ));
        }
        if w.iter().chain(&w_cls).chain(&b_cls).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "embedder params".into(),
            });
        }
        Ok(Self {
            d,
            p,
            l,
            w,
            w_cls,
            b_cls,
        })
    }

    /// Gaussian initialization scaled by fan-in; bias starts at zero.
    pub fn random(d: usize, p: usize, l: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wscale = 1.0 / (d as f64).sqrt();
        let w: Vec<f64> = (0..p * d)
            .map(|_| {
                wscale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
            .collect();
        let cscale = 1.0 / (p as f64).sqrt();
        let w_cls: Vec<f64> = (0..l * p)
            .map(|_| {
                cscale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
            .collect();
        Self {
            d,
            p,
            l,
            w,
            w_cls,
            b_cls: vec![0.0; l],
        }
    }

    fn w_row(&self, r: usize) -> &[f64] {
        &self.w[r * self.d..(r + 1) * self.d]
    }

    fn w_cls_row(&self, r: usize) -> &[f64] {
        &self.w_cls[r * self.p..(r + 1) * self.p]
    }

    /// Raw projection `W x` before normalization.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.d);
        (0..self.p).map(|r| dot(self.w_row(r), x)).collect()
    }

    /// Embed a raw feature vector onto the unit sphere: `W x / ||W x||`.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut v = self.project(x);
        let nrm = norm(&v);
        if nrm < PROJECTION_TOLERANCE {
            return Err(Error::DegenerateProjection { norm: nrm });
        }
        for e in &mut v {
            *e /= nrm;
        }
        Ok(v)
    }

    /// Embed every row of `features` into an `n x p` row-major matrix.
    pub fn embed_all(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if features.dim() != self.d {
            return Err(Error::shape(
                "embed",
                format!("dim {}", self.d),
                format!("dim {}", features.dim()),
            ));
        }
        let mut out = Vec::with_capacity(features.n() * self.p);
        for row in features.rows() {
            out.extend(self.embed(row)?);
        }
        Ok(out)
    }

    /// Classifier logits `W_cls z + b_cls` for an embedded point.
    pub fn logits(&self, z: &[f64]) -> Vec<f64> {
        (0..self.l)
            .map(|r| dot(self.w_cls_row(r), z) + self.b_cls[r])
            .collect()
    }
}

/// Gradient of the total loss with respect to the embedder parameters.
#[derive(Debug, Clone)]
pub struct GradTheta {
    pub w: Vec<f64>,
    pub w_cls: Vec<f64>,
    pub b_cls: Vec<f64>,
}

impl GradTheta {
    pub fn zeros(params: &EmbedderParams) -> Self {
        Self {
            w: vec![0.0; params.w.len()],
            w_cls: vec![0.0; params.w_cls.len()],
            b_cls: vec![0.0; params.b_cls.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(&self.w_cls)
            .chain(&self.b_cls)
            .all(|v| v.is_finite())
    }
}

/// SGD momentum state, reset to zero at the start of each training round.
#[derive(Debug, Clone)]
pub struct Velocity {
    pub w: Vec<f64>,
    pub w_cls: Vec<f64>,
    pub b_cls: Vec<f64>,
}

impl Velocity {
    pub fn zeros(params: &EmbedderParams) -> Self {
        Self {
            w: vec![0.0; params.w.len()],
            w_cls: vec![0.0; params.w_cls.len()],
            b_cls: vec![0.0; params.b_cls.len()],
        }
    }
}

/// Per-term loss values for one batch (batch means); `total` combines them
/// with the configured weights.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub softmax: f64,
    pub quantization: f64,
    pub center: f64,
    pub discriminative: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(
        softmax: f64,
        quantization: f64,
        center: f64,
        discriminative: f64,
        alpha: f64,
        lambda: f64,
        gamma: f64,
    ) -> Self {
        Self {
            softmax,
            quantization,
            center,
            discriminative,
            total: softmax + alpha * quantization + lambda * center + gamma * discriminative,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Cross-entropy of the softmax head: `-log softmax(W_cls z + b_cls)[y]`.
pub fn softmax_loss(params: &EmbedderParams, z: &[f64], y: u32) -> f64 {
    let logits = params.logits(z);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|u| (u - max).exp()).sum::<f64>().ln();
    lse - logits[y as usize]
}

/// Squared distance between an embedding and its class center.
pub fn center_loss(z: &[f64], center: &[f64]) -> f64 {
    squared_distance(z, center)
}

/// One mini-batch of training points together with the fixed quantizer state
/// needed to evaluate the full loss.
pub struct Batch<'a> {
    pub features: &'a FeatureMatrix,
    pub labels: &'a LabelVector,
    /// Dataset indices of the points in this batch.
    pub indices: &'a [usize],
    pub centers: Option<&'a CenterTable>,
    pub codebooks: Option<&'a Codebooks>,
    /// Codes aligned with the full dataset (row `i` codes point `i`).
    pub codes: Option<&'a CodeMatrix>,
}

/// Loss-term weights used by [`loss_and_grad`].
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
}

/// Evaluate the total loss on a batch and its exact gradient with respect to
/// the embedder parameters. Losses are batch means.
///
/// The gradient flows through the normalization `v -> v / ||v||` via its
/// Jacobian `(I - z z^T) / ||v||`. The discriminative term couples centers,
/// codebooks and codes only, so its value enters the total but its gradient
/// with respect to the embedder is exactly zero.
pub fn loss_and_grad(
    params: &EmbedderParams,
    batch: &Batch<'_>,
    weights: LossWeights,
) -> Result<(LossBreakdown, GradTheta)> {
    let LossWeights {
        alpha,
        lambda,
        gamma,
    } = weights;
    if (alpha > 0.0 || gamma > 0.0) && (batch.codebooks.is_none() || batch.codes.is_none()) {
        return Err(Error::Invalid(
            "quantization/discriminative terms need codebooks and codes".into(),
        ));
    }
    if (lambda > 0.0 || gamma > 0.0) && batch.centers.is_none() {
        return Err(Error::MissingCenters);
    }
    if let (Some(books), Some(codes)) = (batch.codebooks, batch.codes) {
        if books.m() != codes.m() || books.h() != codes.h() {
            return Err(Error::shape(
                "codes vs codebooks",
                format!("m={} h={}", books.m(), books.h()),
                format!("m={} h={}", codes.m(), codes.h()),
            ));
        }
        if books.p() != params.p {
            return Err(Error::shape(
                "codebooks vs embedder",
                format!("p={}", params.p),
                format!("p={}", books.p()),
            ));
        }
    }

    let bsz = batch.indices.len();
    if bsz == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    let scale = 1.0 / bsz as f64;

    let mut grad = GradTheta::zeros(params);
    let mut sum_softmax = 0.0;
    let mut sum_quant = 0.0;
    let mut sum_center = 0.0;
    let mut sum_disc = 0.0;

    for &i in batch.indices {
        let x = batch.features.row(i);
        let y = batch.labels.label(i) as usize;

        let v = params.project(x);
        let nv = norm(&v);
        if nv < PROJECTION_TOLERANCE {
            return Err(Error::DegenerateProjection { norm: nv });
        }
        let z: Vec<f64> = v.iter().map(|e| e / nv).collect();

        // Softmax head.
        let logits = params.logits(&z);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|u| (u - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        sum_softmax += denom.ln() + max - logits[y];

        // d(loss)/d(logits) = softmax(u) - onehot(y)
        let mut dlogits: Vec<f64> = exps.iter().map(|e| e / denom).collect();
        dlogits[y] -= 1.0;

        let mut dz = vec![0.0; params.p];
        for (r, &dl) in dlogits.iter().enumerate() {
            let g = dl * scale;
            grad.b_cls[r] += g;
            let wrow = &params.w_cls[r * params.p..(r + 1) * params.p];
            let grow = &mut grad.w_cls[r * params.p..(r + 1) * params.p];
            for c in 0..params.p {
                grow[c] += g * z[c];
                dz[c] += dl * wrow[c];
            }
        }

        let recon = match (batch.codebooks, batch.codes) {
            (Some(books), Some(codes)) => Some(books.reconstruct(codes.row(i))),
            _ => None,
        };
        if let Some(r) = &recon {
            sum_quant += squared_distance(&z, r);
            if alpha > 0.0 {
                for c in 0..params.p {
                    dz[c] += 2.0 * alpha * (z[c] - r[c]);
                }
            }
        }

        if let Some(centers) = batch.centers {
            let phi = centers.center(y);
            sum_center += squared_distance(&z, phi);
            if lambda > 0.0 {
                for c in 0..params.p {
                    dz[c] += 2.0 * lambda * (z[c] - phi[c]);
                }
            }
            if let Some(r) = &recon {
                sum_disc += squared_distance(phi, r);
            }
        }

        // Back through z = v / ||v||: dv = (dz - z <z, dz>) / ||v||.
        let zdz = dot(&z, &dz);
        for r in 0..params.p {
            let dv = (dz[r] - z[r] * zdz) / nv * scale;
            let grow = &mut grad.w[r * params.d..(r + 1) * params.d];
            for c in 0..params.d {
                grow[c] += dv * x[c];
            }
        }
    }

    let breakdown = LossBreakdown::combine(
        sum_softmax * scale,
        sum_quant * scale,
        sum_center * scale,
        sum_disc * scale,
        alpha,
        lambda,
        gamma,
    );
    Ok((breakdown, grad))
}

/// One momentum SGD step:
/// `v <- momentum * v - lr * (grad + weight_decay * theta); theta <- theta + v`.
/// The classifier head uses [`HEAD_LR_MULTIPLIER`] times the base rate.
pub fn sgd_step(
    params: &mut EmbedderParams,
    grad: &GradTheta,
    sgd: &crate::config::SgdSettings,
    velocity: &mut Velocity,
) -> Result<()> {
    if !grad.is_finite() {
        return Err(Error::NonFinite {
            context: "gradient".into(),
        });
    }
    let step = |theta: &mut [f64], g: &[f64], v: &mut [f64], lr: f64| {
        for i in 0..theta.len() {
            v[i] = sgd.momentum * v[i] - lr * (g[i] + sgd.weight_decay * theta[i]);
            theta[i] += v[i];
        }
    };
    step(&mut params.w, &grad.w, &mut velocity.w, sgd.learning_rate);
    let head_lr = sgd.learning_rate * HEAD_LR_MULTIPLIER;
    step(&mut params.w_cls, &grad.w_cls, &mut velocity.w_cls, head_lr);
    step(&mut params.b_cls, &grad.b_cls, &mut velocity.b_cls, head_lr);
    Ok(())
}

/// Damped per-class center update on a mini-batch:
/// `phi_j <- phi_j - zeta * delta_j` with
/// `delta_j = sum_i 1(y_i=j) [lambda (phi_j - z_i) + gamma (phi_j - r_i)] / (1 + count_j)`.
/// Classes absent from the batch are unchanged.
pub fn update_centers(
    centers: &mut CenterTable,
    embeddings: &[f64],
    reconstructions: Option<&[f64]>,
    labels: &[u32],
    lambda: f64,
    gamma: f64,
    zeta: f64,
) -> Result<()> {
    let p = centers.p();
    if embeddings.len() != labels.len() * p {
        return Err(Error::shape(
            "update_centers",
            format!("{} embedding values", labels.len() * p),
            format!("{}", embeddings.len()),
        ));
    }
    if gamma != 0.0 && reconstructions.is_none() {
        return Err(Error::MissingCenters);
    }
    if let Some(r) = reconstructions {
        if r.len() != embeddings.len() {
            return Err(Error::shape(
                "update_centers reconstructions",
                format!("{}", embeddings.len()),
                format!("{}", r.len()),
            ));
        }
    }

    let l = centers.l();
    let mut delta = vec![0.0; l * p];
    let mut counts = vec![0usize; l];
    for (i, &y) in labels.iter().enumerate() {
        let j = y as usize;
        counts[j] += 1;
        let phi = centers.center(j);
        let z = &embeddings[i * p..(i + 1) * p];
        let drow = &mut delta[j * p..(j + 1) * p];
        for c in 0..p {
            drow[c] += lambda * (phi[c] - z[c]);
        }
        if gamma != 0.0 {
            let r = &reconstructions.unwrap()[i * p..(i + 1) * p];
            for c in 0..p {
                drow[c] += gamma * (phi[c] - r[c]);
            }
        }
    }
    for j in 0..l {
        if counts[j] == 0 {
            continue;
        }
        let denom = 1.0 + counts[j] as f64;
        let drow = &delta[j * p..(j + 1) * p];
        let phi = centers.center_mut(j);
        for c in 0..p {
            phi[c] -= zeta * drow[c] / denom;
        }
    }
    Ok(())
}

/// Class means of the given embeddings; the standard center initialization.
pub fn class_mean_centers(
    embeddings: &[f64],
    labels: &LabelVector,
    p: usize,
) -> Result<CenterTable> {
    let l = labels.num_classes() as usize;
    let mut sums = vec![0.0; l * p];
    let mut counts = vec![0usize; l];
    for (i, &y) in labels.labels().iter().enumerate() {
        counts[y as usize] += 1;
        let z = &embeddings[i * p..(i + 1) * p];
        let row = &mut sums[y as usize * p..(y as usize + 1) * p];
        for c in 0..p {
            row[c] += z[c];
        }
    }
    for j in 0..l {
        if counts[j] > 0 {
            let inv = 1.0 / counts[j] as f64;
            for v in &mut sums[j * p..(j + 1) * p] {
                *v *= inv;
            }
        }
    }
    CenterTable::new(l, p, sums)
}

//! Pairwise discriminator: re-encodes predicted soft sequences and
//! ground-truth targets with an encoder (the source encoder itself when
//! weights are shared) and scores the batch with a hinge loss that pulls
//! each prediction toward its own reference and away from the others:
//!
//! ```text
//! L = Σ_{i≠j} max(0, p_i·g_j − p_i·g_i + margin)
//! ```

use crate::decoder::SoftSequence;
use crate::encoder::{Encoder, EncoderCache, EncoderInput};
use crate::error::{Error, Result};
use crate::params::{Gradients, ParameterStore};
use crate::tensor::linalg::{axpy, dot};
use crate::tensor::Tensor;
use crate::text::TokenSequence;

/// Predicted (`f^p`) and ground-truth (`f^g`) embeddings, one row per example.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchEmbeddings {
    predicted: Tensor,
    truth: Tensor,
}

impl BatchEmbeddings {
    pub fn new(predicted: Tensor, truth: Tensor) -> Result<Self> {
        if predicted.rank() != 2 || predicted.shape() != truth.shape() {
            return Err(Error::shape(format!(
                "predicted {:?} vs truth {:?}",
                predicted.shape(),
                truth.shape()
            )));
        }
        if predicted.rows() < 2 {
            return Err(Error::invalid(
                "the global loss needs at least two examples per batch",
            ));
        }
        predicted.ensure_finite("predicted embeddings")?;
        truth.ensure_finite("ground-truth embeddings")?;
        Ok(BatchEmbeddings { predicted, truth })
    }

    pub fn from_rows(predicted: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Self> {
        Self::new(Tensor::from_rows(predicted)?, Tensor::from_rows(truth)?)
    }

    pub fn predicted(&self) -> &Tensor {
        &self.predicted
    }

    pub fn truth(&self) -> &Tensor {
        &self.truth
    }

    pub fn batch_size(&self) -> usize {
        self.predicted.rows()
    }

    pub fn dim(&self) -> usize {
        self.predicted.cols()
    }
}

/// Which gradient the backward pass uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradientForm {
    /// Exact subgradient: only terms with a positive margin contribute.
    #[default]
    Gated,
    /// Every off-diagonal term contributes as if active, ignoring the hinge.
    Ungated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlobalLossConfig {
    pub margin: f64,
    /// L2-normalize embeddings before the dot products.
    pub cosine: bool,
    pub form: GradientForm,
}

impl Default for GlobalLossConfig {
    fn default() -> Self {
        GlobalLossConfig {
            margin: 1.0,
            cosine: false,
            form: GradientForm::Gated,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalLoss {
    pub value: f64,
    pub d_predicted: Tensor,
    pub d_truth: Tensor,
    /// Off-diagonal terms with a positive margin.
    pub active_terms: usize,
    /// Smallest `|margin|` over off-diagonal terms.
    pub min_abs_margin: f64,
}

fn normalize_rows(t: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let mut out = t.clone();
    let mut norms = Vec::with_capacity(t.rows());
    for r in 0..t.rows() {
        let n = dot(t.row(r), t.row(r)).sqrt();
        if n < 1e-12 {
            return Err(Error::NonFinite(format!(
                "cannot normalize zero embedding row {r}"
            )));
        }
        out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Chain rule through `x / ‖x‖`: `(g − (g·u) u) / ‖x‖`.
fn normalize_backward(unit: &Tensor, norms: &[f64], grad: &mut Tensor) {
    for (r, &n) in norms.iter().enumerate() {
        let u = unit.row(r);
        let gu = dot(grad.row(r), u);
        for (g, &uv) in grad.row_mut(r).iter_mut().zip(u) {
            *g = (*g - gu * uv) / n;
        }
    }
}

/// Hinge loss over all ordered pairs `i ≠ j` and its gradients. A margin of
/// exactly zero counts as inactive.
pub fn global_loss(batch: &BatchEmbeddings, cfg: &GlobalLossConfig) -> Result<GlobalLoss> {
    let (p, g, norms) = if cfg.cosine {
        let (p, np) = normalize_rows(&batch.predicted)?;
        let (g, ng) = normalize_rows(&batch.truth)?;
        (p, g, Some((np, ng)))
    } else {
        (batch.predicted.clone(), batch.truth.clone(), None)
    };
    let n = p.rows();
    let scores = p.matmul(&g.transpose()?)?;
    let mut value = 0.0;
    let mut active_terms = 0;
    let mut min_abs_margin = f64::INFINITY;
    let mut d_p = Tensor::zeros(p.shape());
    let mut d_g = Tensor::zeros(g.shape());
    for i in 0..n {
        let own = scores.get(&[i, i]);
        for j in (0..n).filter(|&j| j != i) {
            let margin = scores.get(&[i, j]) - own + cfg.margin;
            min_abs_margin = min_abs_margin.min(margin.abs());
            let active = margin > 0.0;
            if active {
                value += margin;
                active_terms += 1;
            }
            if active || cfg.form == GradientForm::Ungated {
                // ∂/∂p_i = g_j − g_i ; ∂/∂g_j = p_i ; ∂/∂g_i = −p_i
                axpy(1.0, g.row(j), d_p.row_mut(i));
                axpy(-1.0, g.row(i), d_p.row_mut(i));
                axpy(1.0, p.row(i), d_g.row_mut(j));
                axpy(-1.0, p.row(i), d_g.row_mut(i));
            }
        }
    }
    if !value.is_finite() {
        return Err(Error::NonFinite("global loss".into()));
    }
    if let Some((np, ng)) = norms {
        normalize_backward(&p, &np, &mut d_p);
        normalize_backward(&g, &ng, &mut d_g);
    }
    Ok(GlobalLoss {
        value,
        d_predicted: d_p,
        d_truth: d_g,
        active_terms,
        min_abs_margin,
    })
}

/// Independent oracle for [`global_loss`]: a literal double loop over raw
/// rows, sharing no helpers with the production path.
pub fn global_loss_bruteforce(batch: &BatchEmbeddings, margin: f64) -> f64 {
    let n = batch.predicted.rows();
    let d = batch.predicted.cols();
    let p = batch.predicted.data();
    let g = batch.truth.data();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut pi_gj = 0.0;
            let mut pi_gi = 0.0;
            for k in 0..d {
                pi_gj += p[i * d + k] * g[j * d + k];
                pi_gi += p[i * d + k] * g[i * d + k];
            }
            let m = pi_gj - pi_gi + margin;
            if m > 0.0 {
                total += m;
            }
        }
    }
    total
}

/// Encoder caches from [`PairDiscriminator::embed_pair_batch`].
#[derive(Clone, Debug)]
pub struct PairCaches {
    pub predicted: Vec<EncoderCache>,
    pub truth: Vec<EncoderCache>,
}

/// The discriminator is nothing but an encoder applied to both sides.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDiscriminator {
    encoder: Encoder,
}

impl PairDiscriminator {
    pub fn new(encoder: Encoder) -> Self {
        PairDiscriminator { encoder }
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// `f^p_i = encode(soft_i)` and `f^g_i = encode(target_i)`.
    pub fn embed_pair_batch(
        &self,
        store: &ParameterStore,
        soft: &[SoftSequence],
        targets: &[TokenSequence],
    ) -> Result<(BatchEmbeddings, PairCaches)> {
        if soft.len() != targets.len() {
            return Err(Error::shape(format!(
                "{} predicted sequences vs {} targets",
                soft.len(),
                targets.len()
            )));
        }
        if soft.len() < 2 {
            return Err(Error::invalid(
                "the global loss needs at least two examples per batch",
            ));
        }
        let mut pred_rows = Vec::with_capacity(soft.len());
        let mut truth_rows = Vec::with_capacity(soft.len());
        let mut caches = PairCaches {
            predicted: Vec::with_capacity(soft.len()),
            truth: Vec::with_capacity(soft.len()),
        };
        for (s, t) in soft.iter().zip(targets) {
            let (fp, cp) = self.encoder.encode(store, EncoderInput::Soft(s))?;
            let (fg, cg) = self.encoder.encode(store, EncoderInput::Tokens(t))?;
            pred_rows.push(fp.into_values());
            truth_rows.push(fg.into_values());
            caches.predicted.push(cp);
            caches.truth.push(cg);
        }
        Ok((BatchEmbeddings::from_rows(&pred_rows, &truth_rows)?, caches))
    }

    /// Pushes `scale · ∂L/∂e_p` and `scale · ∂L/∂e_g` through the encoder.
    /// Returns `∂L/∂p` for each predicted soft sequence.
    pub fn backward(
        &self,
        store: &ParameterStore,
        grads: &mut Gradients,
        caches: &PairCaches,
        loss: &GlobalLoss,
        scale: f64,
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut d_soft = Vec::with_capacity(caches.predicted.len());
        for (i, (cp, cg)) in caches.predicted.iter().zip(&caches.truth).enumerate() {
            let dp: Vec<f64> = loss.d_predicted.row(i).iter().map(|v| v * scale).collect();
            let dg: Vec<f64> = loss.d_truth.row(i).iter().map(|v| v * scale).collect();
            let rows = self
                .encoder
                .backward(store, grads, cp, &dp)?
                .ok_or_else(|| Error::invalid("predicted cache was not built from soft input"))?;
            self.encoder.backward(store, grads, cg, &dg)?;
            d_soft.push(rows);
        }
        Ok(d_soft)
    }
}

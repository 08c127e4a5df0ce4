//! Prediction, domain and attentive-entropy losses and their weighted sum.
//!
//! Every domain term is minimized here. The feature extractor's opposite
//! objective comes from the reversal nodes placed in front of each domain
//! classifier, so one backward pass trains both sides.

use serde::{Deserialize, Serialize};

use crate::autodiff::{entropy_unchecked, softmax, Tape, Tensor, Var};
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::model::ForwardOutputs;

/// Trade-off weights of the domain and entropy terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_r: f64,
    pub lambda_t: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights { lambda_s: 0.0, lambda_r: 0.0, lambda_t: 0.0, gamma: 0.0 };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_s", self.lambda_s),
            ("lambda_r", self.lambda_r),
            ("lambda_t", self.lambda_t),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which terms enter the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// Prediction plus frame- and video-level domain terms.
    Baseline,
    /// Adds the relation domain term and the attentive entropy term.
    Full,
}

/// Component values of one evaluation of the objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub pred: f64,
    pub spatial: f64,
    pub temporal: f64,
    pub relation: f64,
    pub attentive_entropy: f64,
    pub total: f64,
}

impl LossValues {
    pub fn is_finite(&self) -> bool {
        [self.pred, self.spatial, self.temporal, self.relation, self.attentive_entropy, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub values: LossValues,
    pub weights: LossWeights,
    pub variant: LossVariant,
    /// Scalar node to differentiate.
    pub total: Var,
}

fn domain_labels(domains: &[Domain]) -> Vec<usize> {
    domains.iter().map(|d| d.index()).collect()
}

fn mean_ce(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let ce = tape.cross_entropy_rows(logits, labels)?;
    Ok(tape.mean(ce))
}

/// Mean cross-entropy over the labelled rows of `class_logits`.
pub fn prediction_loss(tape: &mut Tape, class_logits: Var, labels: &[Option<usize>]) -> Result<Var> {
    let rows = tape.value(class_logits).rows();
    if labels.len() != rows {
        return Err(Error::shape("prediction_loss", format!("{} labels for {rows} videos", labels.len())));
    }
    let (index, targets): (Vec<usize>, Vec<usize>) =
        labels.iter().enumerate().filter_map(|(i, l)| l.map(|l| (i, l))).unzip();
    if index.is_empty() {
        return Err(Error::invalid("prediction loss needs at least one labelled source video"));
    }
    let picked = tape.gather_rows(class_logits, &index)?;
    mean_ce(tape, picked, &targets)
}

/// Per-video mean over its `K` frame predictions, then the batch mean.
pub fn spatial_domain_loss(tape: &mut Tape, frame_logits: Var, domains: &[Domain]) -> Result<Var> {
    let rows = tape.value(frame_logits).rows();
    if domains.is_empty() || !rows.is_multiple_of(domains.len()) {
        return Err(Error::shape("spatial_domain_loss", format!("{rows} frame rows for {} videos", domains.len())));
    }
    let k = rows / domains.len();
    let labels: Vec<usize> = domains.iter().flat_map(|d| std::iter::repeat_n(d.index(), k)).collect();
    // all videos carry exactly K frames, so the flat mean equals the mean of per-video means
    mean_ce(tape, frame_logits, &labels)
}

pub fn temporal_domain_loss(tape: &mut Tape, video_logits: Var, domains: &[Domain]) -> Result<Var> {
    let rows = tape.value(video_logits).rows();
    if rows != domains.len() {
        return Err(Error::shape("temporal_domain_loss", format!("{rows} rows for {} videos", domains.len())));
    }
    mean_ce(tape, video_logits, &domain_labels(domains))
}

/// Average over the `K-1` scales of the batch-mean domain cross-entropy.
pub fn relation_domain_loss(tape: &mut Tape, per_scale: &[Var], domains: &[Domain], frames: usize) -> Result<Var> {
    if frames < 2 || per_scale.len() != frames - 1 {
        return Err(Error::invalid(format!(
            "relation loss needs {} scales for K={frames}, got {}",
            frames.saturating_sub(1),
            per_scale.len()
        )));
    }
    let labels = domain_labels(domains);
    let mut terms = Vec::with_capacity(per_scale.len());
    for v in per_scale {
        terms.push(mean_ce(tape, *v, &labels)?);
    }
    let stacked = tape.concat(&terms, crate::autodiff::Axis::Rows)?;
    Ok(tape.mean(stacked))
}

/// Batch mean of `(1 + H(d)) * H(y)`; `H(d)` is held constant.
pub fn attentive_entropy_loss(tape: &mut Tape, temporal_domain_logits: Var, class_logits: Var) -> Result<Var> {
    let weights = entropy_weights(tape.value(temporal_domain_logits));
    attentive_entropy_loss_with(tape, class_logits, &weights)
}

/// `1 + H(softmax(row))` for every row of the domain logits.
pub fn entropy_weights(temporal_domain_logits: &Tensor) -> Vec<f64> {
    (0..temporal_domain_logits.rows())
        .map(|r| 1.0 + entropy_unchecked(&softmax(temporal_domain_logits.row_slice(r))))
        .collect()
}

/// Attentive entropy with explicit per-video weights `1 + H(d)`.
pub fn attentive_entropy_loss_with(tape: &mut Tape, class_logits: Var, weights: &[f64]) -> Result<Var> {
    if tape.value(class_logits).rows() != weights.len() {
        return Err(Error::shape("attentive_entropy_loss", "domain and class logits disagree on batch size"));
    }
    let w = tape.leaf(Tensor::column(weights));
    let p = tape.softmax(class_logits);
    let h = tape.entropy(p);
    let weighted = tape.mul(h, w)?;
    Ok(tape.mean(weighted))
}

/// Scalar components, each a `1 x 1` node.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub pred: Var,
    pub spatial: Var,
    pub temporal: Var,
    pub relation: Option<Var>,
    pub attentive_entropy: Var,
}

impl LossTerms {
    /// Builds every component from a forward pass over videos with the given domains and labels.
    pub fn from_forward(
        tape: &mut Tape,
        out: &ForwardOutputs,
        domains: &[Domain],
        labels: &[Option<usize>],
        frames: usize,
    ) -> Result<Self> {
        Self::from_forward_with(tape, out, domains, labels, frames, None)
    }

    /// As [`LossTerms::from_forward`], optionally with fixed `1 + H(d)` entropy weights.
    pub fn from_forward_with(
        tape: &mut Tape,
        out: &ForwardOutputs,
        domains: &[Domain],
        labels: &[Option<usize>],
        frames: usize,
        entropy: Option<&[f64]>,
    ) -> Result<Self> {
        let pred = prediction_loss(tape, out.class_logits, labels)?;
        let spatial = spatial_domain_loss(tape, out.spatial_domain_logits, domains)?;
        let temporal = temporal_domain_loss(tape, out.temporal_domain_logits, domains)?;
        let relation = if out.relation_domain_logits.is_empty() {
            None
        } else {
            Some(relation_domain_loss(tape, &out.relation_domain_logits, domains, frames)?)
        };
        let attentive_entropy = match entropy {
            Some(w) => attentive_entropy_loss_with(tape, out.class_logits, w)?,
            None => attentive_entropy_loss(tape, out.temporal_domain_logits, out.class_logits)?,
        };
        Ok(LossTerms { pred, spatial, temporal, relation, attentive_entropy })
    }
}

/// `L_y + gamma L_ae + lambda_s L_sd + lambda_r L_rd + lambda_t L_td`. The
/// baseline objective drops the relation and entropy terms.
pub fn total_loss(
    tape: &mut Tape,
    terms: &LossTerms,
    weights: LossWeights,
    variant: LossVariant,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let val = |tape: &Tape, v: Var| tape.value(v).data()[0];
    let mut total = terms.pred;
    let mut add_term = |tape: &mut Tape, v: Var, w: f64| -> Result<()> {
        let scaled = tape.scale(v, w);
        total = tape.add(total, scaled)?;
        Ok(())
    };
    let full = variant == LossVariant::Full;
    if full {
        add_term(tape, terms.attentive_entropy, weights.gamma)?;
    }
    add_term(tape, terms.spatial, weights.lambda_s)?;
    if let (true, Some(r)) = (full, terms.relation) {
        add_term(tape, r, weights.lambda_r)?;
    }
    add_term(tape, terms.temporal, weights.lambda_t)?;

    let values = LossValues {
        pred: val(tape, terms.pred),
        spatial: val(tape, terms.spatial),
        temporal: val(tape, terms.temporal),
        relation: terms.relation.map_or(0.0, |r| val(tape, r)),
        attentive_entropy: val(tape, terms.attentive_entropy),
        total: val(tape, total),
    };
    Ok(LossBreakdown { values, weights, variant, total })
}

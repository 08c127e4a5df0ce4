//! Video models built on the tape: a shared frame encoder, temporal
//! aggregation by mean pooling or multi-scale relations, adversarial domain
//! classifiers at the frame, relation and video level, and optional attention
//! over temporal scales.

mod checkpoint;
mod subsets;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{entropy_unchecked, softmax, Axis, Bound, GrlConfig, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use subsets::{enumerate_subsets, RelationSubset};

pub const DEFAULT_MAX_SUBSETS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
#[value(rename_all = "lowercase")]
pub enum TemporalVariant {
    /// Mean over frames.
    TemPooling,
    /// Sum of multi-scale relation features.
    TemRelation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    None,
    /// FC-tanh-FC-softmax scores computed from the features themselves.
    General,
    /// `1 - H(domain prediction)` from the matching domain classifier.
    Domain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Frames per clip (`K`).
    pub frames: usize,
    pub input_dim: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub variant: TemporalVariant,
    pub attention: AttentionMode,
    #[serde(default = "default_max_subsets")]
    pub max_subsets_per_scale: usize,
    pub seed: u64,
}

fn default_max_subsets() -> usize {
    DEFAULT_MAX_SUBSETS
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config(format!("need at least 2 frames per clip, got {}", self.frames)));
        }
        if self.input_dim == 0 || self.feature_dim < 2 || self.classes < 2 {
            return Err(Error::Config(format!(
                "degenerate dimensions D={} F={} C={}",
                self.input_dim, self.feature_dim, self.classes
            )));
        }
        if self.max_subsets_per_scale == 0 {
            return Err(Error::Config("max_subsets_per_scale must be positive".into()));
        }
        Ok(())
    }

    /// Relation scales `2..=K`; empty for pooling.
    pub fn scales(&self) -> Vec<usize> {
        match self.variant {
            TemporalVariant::TemRelation => (2..=self.frames).collect(),
            TemporalVariant::TemPooling => Vec::new(),
        }
    }

    fn hidden(&self) -> usize {
        (self.feature_dim / 2).max(1)
    }
}

/// Outputs of one batched forward pass. Per-frame rows are ordered video-major.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    pub batch: usize,
    /// `[B, C]`
    pub class_logits: Var,
    /// `[B*K, 2]`
    pub spatial_domain_logits: Var,
    /// One `[B, 2]` per scale `n = 2..=K`.
    pub relation_domain_logits: Vec<Var>,
    /// `[B, 2]`
    pub temporal_domain_logits: Var,
    /// `[B, S]`, one column per attended unit (scale or frame); `None` without attention.
    pub attention_weights: Option<Tensor>,
    /// `[B, F]`
    pub video_feature: Var,
    /// One `[B, F]` per scale.
    pub relation_features: Vec<Var>,
    /// `[B*K, F]`
    pub frame_features: Var,
}

/// Plain-value results of a forward pass.
#[derive(Clone, Debug)]
pub struct Inference {
    pub class_logits: Tensor,
    pub temporal_domain_logits: Tensor,
    pub relation_domain_logits: Vec<Tensor>,
    pub video_features: Tensor,
    pub attention_weights: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ta3nModel {
    config: ModelConfig,
    pub params: ParamStore,
    pub grl: GrlConfig,
    subsets: Vec<Vec<RelationSubset>>,
}

impl Ta3nModel {
    /// Fresh model with weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        for (name, rows, cols) in layout(&config) {
            let bound = 1.0 / (fan_in(&name, rows, &config) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
            params.insert(name, Tensor::new(rows, cols, data)?);
        }
        Self::from_parts(config, params)
    }

    /// Wraps existing parameters after checking them against the layout implied by `config`.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(Error::Config(format!(
                "parameter count {} does not match the {} required by the configuration",
                params.len(),
                expected.len()
            )));
        }
        for (name, rows, cols) in &expected {
            match params.get(name) {
                Some(t) if t.shape() == [*rows, *cols] => {}
                Some(t) => {
                    return Err(Error::Config(format!("{name}: shape {:?}, expected {:?}", t.shape(), [rows, cols])))
                }
                None => return Err(Error::Config(format!("missing parameter {name}"))),
            }
        }
        let subsets = config
            .scales()
            .into_iter()
            .map(|n| enumerate_subsets(config.frames, n, config.max_subsets_per_scale, config.seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Ta3nModel { config, params, grl: GrlConfig::default(), subsets })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Subsets used for each scale, in scale order.
    pub fn subsets(&self) -> &[Vec<RelationSubset>] {
        &self.subsets
    }

    /// Binds the parameters to `tape` and runs [`Ta3nModel::forward`].
    pub fn forward_on(&self, tape: &mut Tape, clips: &[&Tensor]) -> Result<(Bound, ForwardOutputs)> {
        let bound = tape.bind(&self.params);
        let out = self.forward(tape, &bound, clips)?;
        Ok((bound, out))
    }

    /// Full forward pass over a batch of `K x D` clips.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, clips: &[&Tensor]) -> Result<ForwardOutputs> {
        self.forward_with_attention(tape, bound, clips, None)
    }

    /// Forward pass in which domain attention uses `attention` (shaped like
    /// [`ForwardOutputs::attention_weights`]) instead of the weights derived
    /// from the current discriminators. Other attention modes ignore it.
    pub fn forward_with_attention(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        clips: &[&Tensor],
        attention: Option<&Tensor>,
    ) -> Result<ForwardOutputs> {
        let cfg = &self.config;
        let k = cfg.frames;
        if clips.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        for (i, c) in clips.iter().enumerate() {
            if c.shape() != [k, cfg.input_dim] {
                return Err(Error::invalid(format!(
                    "clip {i} is {}x{}, expected {k}x{}",
                    c.rows(),
                    c.cols(),
                    cfg.input_dim
                )));
            }
        }
        let batch = clips.len();
        let input = tape.leaf(Tensor::vstack(clips)?);
        let frames = spatial_forward(tape, bound, input)?;

        let frames_rev = tape.grl(frames, self.grl);
        let spatial_domain_logits = discriminator(tape, bound, "spatial_disc", frames_rev)?;

        let mut relation_features = Vec::new();
        let mut relation_domain_logits = Vec::new();
        let (video_feature, attention_weights) = match cfg.variant {
            TemporalVariant::TemRelation => {
                for (n, subsets) in cfg.scales().into_iter().zip(&self.subsets) {
                    let weight = bound.get(&format!("relation.{n}.weight"))?;
                    let bias = bound.get(&format!("relation.{n}.bias"))?;
                    let r = temporal_relation(tape, frames, k, subsets, weight, bias)?;
                    let r_rev = tape.grl(r, self.grl);
                    let logits = discriminator(tape, bound, &format!("relation_disc.{n}"), r_rev)?;
                    relation_features.push(r);
                    relation_domain_logits.push(logits);
                }
                match cfg.attention {
                    AttentionMode::None => (sum_vars(tape, &relation_features)?, None),
                    AttentionMode::Domain => {
                        let weights = match attention {
                            Some(w) => w.clone(),
                            None => domain_weights_per_video(tape, &relation_domain_logits),
                        };
                        let h = attend_and_aggregate(tape, &relation_features, &weights)?;
                        (h, Some(weights))
                    }
                    AttentionMode::General => {
                        let w = general_attention(tape, bound, &relation_features)?;
                        let weights = tape.value(w).clone();
                        let h = aggregate_residual(tape, &relation_features, w)?;
                        (h, Some(weights))
                    }
                }
            }
            TemporalVariant::TemPooling => match cfg.attention {
                AttentionMode::None => (temporal_pool(tape, frames, k)?, None),
                AttentionMode::Domain => {
                    let weights = match attention {
                        Some(w) => w.clone(),
                        None => {
                            let logits = tape.value(spatial_domain_logits);
                            let w = (0..logits.rows()).map(|r| domain_attention_weight(logits.row_slice(r))).collect();
                            Tensor::new(batch, k, w)?
                        }
                    };
                    if weights.shape() != [batch, k] {
                        return Err(Error::shape(
                            "forward",
                            format!("attention {:?}, expected [{batch}, {k}]", weights.shape()),
                        ));
                    }
                    let mult = tape.leaf(Tensor::column(&weights.data().iter().map(|v| v + 1.0).collect::<Vec<_>>()));
                    let attended = tape.mul(frames, mult)?;
                    (temporal_pool(tape, attended, k)?, Some(weights))
                }
                AttentionMode::General => {
                    let scores = general_attention_scores(tape, bound, frames)?;
                    let per_video = tape.reshape(scores, batch, k)?;
                    let w = tape.softmax(per_video);
                    let weights = tape.value(w).clone();
                    let col = tape.reshape(w, batch * k, 1)?;
                    let ones = tape.leaf(Tensor::filled(batch * k, 1, 1.0));
                    let mult = tape.add(col, ones)?;
                    let attended = tape.mul(frames, mult)?;
                    (temporal_pool(tape, attended, k)?, Some(weights))
                }
            },
        };

        let video_rev = tape.grl(video_feature, self.grl);
        let temporal_domain_logits = discriminator(tape, bound, "temporal_disc", video_rev)?;
        let class_logits = affine(tape, bound, "classifier", video_feature)?;

        Ok(ForwardOutputs {
            batch,
            class_logits,
            spatial_domain_logits,
            relation_domain_logits,
            temporal_domain_logits,
            attention_weights,
            video_feature,
            relation_features,
            frame_features: frames,
        })
    }

    /// Forward pass without gradients, processed in chunks.
    pub fn infer(&self, clips: &[&Tensor]) -> Result<Inference> {
        const CHUNK: usize = 64;
        let mut class = Vec::new();
        let mut temporal = Vec::new();
        let mut feats = Vec::new();
        let mut attn = Vec::new();
        let mut relation: Vec<Vec<Tensor>> = vec![Vec::new(); self.config.scales().len()];
        for chunk in clips.chunks(CHUNK) {
            let mut tape = Tape::new();
            let (_, out) = self.forward_on(&mut tape, chunk)?;
            class.push(tape.value(out.class_logits).clone());
            temporal.push(tape.value(out.temporal_domain_logits).clone());
            feats.push(tape.value(out.video_feature).clone());
            if let Some(w) = out.attention_weights {
                attn.push(w);
            }
            for (dst, v) in relation.iter_mut().zip(&out.relation_domain_logits) {
                dst.push(tape.value(*v).clone());
            }
        }
        let stack = |parts: &[Tensor]| Tensor::vstack(&parts.iter().collect::<Vec<_>>());
        Ok(Inference {
            class_logits: stack(&class)?,
            temporal_domain_logits: stack(&temporal)?,
            relation_domain_logits: relation.iter().map(|r| stack(r)).collect::<Result<_>>()?,
            video_features: stack(&feats)?,
            attention_weights: if attn.is_empty() { None } else { Some(stack(&attn)?) },
        })
    }

    /// Class logits from already aggregated video features.
    pub fn classify_features(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = tape.bind(&self.params);
        let x = tape.leaf(features.clone());
        let logits = affine(&mut tape, &bound, "classifier", x)?;
        Ok(tape.value(logits).clone())
    }
}

/// `(name, rows, cols)` of every parameter, in storage order.
fn layout(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    let (d, f, c, h) = (cfg.input_dim, cfg.feature_dim, cfg.classes, cfg.hidden());
    let mut out = vec![("spatial.weight".to_string(), d, f), ("spatial.bias".to_string(), 1, f)];
    for n in cfg.scales() {
        out.push((format!("relation.{n}.weight"), n * f, f));
        out.push((format!("relation.{n}.bias"), 1, f));
    }
    out.push(("classifier.weight".into(), f, c));
    out.push(("classifier.bias".into(), 1, c));
    let mut disc = |prefix: String| {
        out.push((format!("{prefix}.fc1.weight"), f, h));
        out.push((format!("{prefix}.fc1.bias"), 1, h));
        out.push((format!("{prefix}.fc2.weight"), h, 2));
        out.push((format!("{prefix}.fc2.bias"), 1, 2));
    };
    disc("spatial_disc".into());
    disc("temporal_disc".into());
    for n in cfg.scales() {
        disc(format!("relation_disc.{n}"));
    }
    if cfg.attention == AttentionMode::General {
        out.push(("attention.fc1.weight".into(), f, h));
        out.push(("attention.fc1.bias".into(), 1, h));
        out.push(("attention.fc2.weight".into(), h, 1));
        out.push(("attention.fc2.bias".into(), 1, 1));
    }
    out
}

fn fan_in(name: &str, rows: usize, cfg: &ModelConfig) -> usize {
    if name.ends_with(".weight") {
        return rows;
    }
    // biases share the fan-in of their weight
    let weight = name.trim_end_matches(".bias").to_string() + ".weight";
    layout(cfg).into_iter().find(|(n, _, _)| *n == weight).map_or(1, |(_, r, _)| r)
}

fn affine(tape: &mut Tape, bound: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = bound.get(&format!("{prefix}.weight"))?;
    let b = bound.get(&format!("{prefix}.bias"))?;
    let h = tape.matmul(x, w)?;
    tape.add(h, b)
}

/// Two-layer domain classifier `F -> F/2 -> 2`.
fn discriminator(tape: &mut Tape, bound: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = affine(tape, bound, &format!("{prefix}.fc1"), x)?;
    let h = tape.relu(h);
    affine(tape, bound, &format!("{prefix}.fc2"), h)
}

/// Frame encoder: one affine layer with ReLU applied to every row of `[B*K, D]`.
pub fn spatial_forward(tape: &mut Tape, bound: &Bound, frames: Var) -> Result<Var> {
    let h = affine(tape, bound, "spatial", frames)?;
    Ok(tape.relu(h))
}

/// Mean over each video's `k` consecutive frame rows: `[B*K, F] -> [B, F]`.
pub fn temporal_pool(tape: &mut Tape, features: Var, k: usize) -> Result<Var> {
    let summed = tape.group_sum(features, k)?;
    Ok(tape.scale(summed, 1.0 / k as f64))
}

/// `R_n = sum_m relu(concat(frames in subset m) W + b)` for every video of
/// `[B*K, F]` frame features, giving `[B, F]`.
pub fn temporal_relation(
    tape: &mut Tape,
    features: Var,
    k: usize,
    subsets: &[RelationSubset],
    weight: Var,
    bias: Var,
) -> Result<Var> {
    let [rows, f] = tape.value(features).shape();
    if k == 0 || rows % k != 0 {
        return Err(Error::shape("temporal_relation", format!("{rows} frame rows with K={k}")));
    }
    let scale = subsets
        .first()
        .map(|s| s.scale)
        .ok_or_else(|| Error::invalid("temporal_relation needs at least one subset"))?;
    for s in subsets {
        if s.scale != scale || s.indices.len() != scale {
            return Err(Error::invalid(format!("subset {} does not have scale {scale}", s.subset_id)));
        }
        if let Some(&bad) = s.indices.iter().find(|&&i| i >= k) {
            return Err(Error::invalid(format!("subset {} references frame {bad} of {k}", s.subset_id)));
        }
    }
    let batch = rows / k;
    let mut index = Vec::with_capacity(batch * subsets.len() * scale);
    for b in 0..batch {
        for s in subsets {
            index.extend(s.indices.iter().map(|&i| b * k + i));
        }
    }
    let gathered = tape.gather_rows(features, &index)?;
    let tuples = tape.reshape(gathered, batch * subsets.len(), scale * f)?;
    let h = tape.matmul(tuples, weight)?;
    let h = tape.add(h, bias)?;
    let h = tape.relu(h);
    tape.group_sum(h, subsets.len())
}

/// `w = 1 - H(softmax(logits))` with base-2 entropy; lies in `[0, 1]` for two domains.
pub fn domain_attention_weight(domain_logits: &[f64]) -> f64 {
    1.0 - entropy_unchecked(&softmax(domain_logits))
}

fn domain_weights_per_video(tape: &Tape, per_scale_logits: &[Var]) -> Tensor {
    let s = per_scale_logits.len();
    let batch = tape.value(per_scale_logits[0]).rows();
    let mut w = vec![0.0; batch * s];
    for (j, v) in per_scale_logits.iter().enumerate() {
        let t = tape.value(*v);
        for b in 0..batch {
            w[b * s + j] = domain_attention_weight(t.row_slice(b));
        }
    }
    Tensor::new(batch, s, w).expect("batch x scales")
}

/// `h = sum_n (w_n + 1) * feature_n` with weights held constant: `weights` is `[B, S]`
/// for `S` per-scale `[B, F]` features.
pub fn attend_and_aggregate(tape: &mut Tape, per_scale: &[Var], weights: &Tensor) -> Result<Var> {
    let batch = per_scale.first().map_or(0, |v| tape.value(*v).rows());
    if weights.shape() != [batch, per_scale.len()] {
        return Err(Error::shape(
            "attend_and_aggregate",
            format!("weights {:?} for {} scales of {batch} videos", weights.shape(), per_scale.len()),
        ));
    }
    let w = tape.leaf(weights.clone());
    aggregate_residual(tape, per_scale, w)
}

fn aggregate_residual(tape: &mut Tape, per_scale: &[Var], weights: Var) -> Result<Var> {
    let [batch, s] = tape.value(weights).shape();
    let ones = tape.leaf(Tensor::filled(batch, s, 1.0));
    let mult = tape.add(weights, ones)?;
    let mut terms = Vec::with_capacity(s);
    for (j, feat) in per_scale.iter().enumerate() {
        let col = tape.slice_cols(mult, j, 1)?;
        terms.push(tape.mul(*feat, col)?);
    }
    sum_vars(tape, &terms)
}

/// Unnormalized FC-tanh-FC score per row of `features`: `[M, F] -> [M, 1]`.
fn general_attention_scores(tape: &mut Tape, bound: &Bound, features: Var) -> Result<Var> {
    let h = affine(tape, bound, "attention.fc1", features)?;
    let h = tape.tanh(h);
    affine(tape, bound, "attention.fc2", h)
}

/// Softmax-normalized general attention weights `[B, S]` for per-scale `[B, F]` features.
pub fn general_attention(tape: &mut Tape, bound: &Bound, per_scale: &[Var]) -> Result<Var> {
    let s = per_scale.len();
    let batch = per_scale.first().map_or(0, |v| tape.value(*v).rows());
    let stacked = tape.concat(per_scale, Axis::Rows)?;
    let scores = general_attention_scores(tape, bound, stacked)?;
    let by_scale = tape.reshape(scores, s, batch)?;
    let by_video = transpose(tape, by_scale, s, batch)?;
    Ok(tape.softmax(by_video))
}

fn transpose(tape: &mut Tape, x: Var, rows: usize, cols: usize) -> Result<Var> {
    let index: Vec<usize> = (0..cols).flat_map(|c| (0..rows).map(move |r| r * cols + c)).collect();
    let flat = tape.reshape(x, rows * cols, 1)?;
    let picked = tape.gather_rows(flat, &index)?;
    tape.reshape(picked, cols, rows)
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let (first, rest) = vars.split_first().ok_or_else(|| Error::invalid("nothing to sum"))?;
    let mut acc = *first;
    for v in rest {
        acc = tape.add(acc, *v)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests;

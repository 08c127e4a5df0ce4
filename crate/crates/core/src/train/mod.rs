//! SGD with momentum, progress-driven schedules and the adversarial training loop.

mod grid;

use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_difference_check, GrlConfig, ParamStore, Tape};
use crate::data::{make_batches, DomainDataset, MixedBatch, TrainingSet};
use crate::error::{Error, Result};
use crate::eval;
use crate::losses::{entropy_weights, total_loss, LossTerms, LossValues, LossVariant, LossWeights};
use crate::model::{AttentionMode, ModelConfig, Ta3nModel, TemporalVariant, DEFAULT_MAX_SUBSETS};

pub use grid::{
    grid_candidates, grid_search, replay_candidate, GridCandidate, GridReport, GridRow, GridStage, SweptWeight,
    COARSE_GRID, FINE_GRID,
};

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_s: f64,
    pub lambda_r: f64,
    pub lambda_t: f64,
    pub gamma: f64,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub source_batch: usize,
    /// Frames sampled per video.
    #[serde(rename = "k")]
    pub frames: usize,
    pub feature_dim: usize,
    pub variant: TemporalVariant,
    pub attention: AttentionMode,
    pub max_subsets_per_scale: usize,
    pub seed: u64,
    pub lr_alpha: f64,
    pub lr_beta: f64,
    pub grl_ramp: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_s: 0.75,
            lambda_r: 0.5,
            lambda_t: 0.75,
            gamma: 0.3,
            lr0: 0.03,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 30,
            source_batch: 32,
            frames: 5,
            feature_dim: 32,
            variant: TemporalVariant::TemRelation,
            attention: AttentionMode::Domain,
            max_subsets_per_scale: DEFAULT_MAX_SUBSETS,
            seed: 0,
            lr_alpha: 10.0,
            lr_beta: 0.75,
            grl_ramp: 10.0,
        }
    }
}

impl TrainConfig {
    /// Settings tuned for the default synthetic benchmark: plain SGD at a
    /// higher rate, smaller batches, longer training and a light entropy term.
    pub fn synthetic() -> Self {
        TrainConfig { lr0: 0.05, momentum: 0.0, epochs: 60, source_batch: 16, gamma: 0.03, ..TrainConfig::default() }
    }
}

/// Named adaptation setups sharing one backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// No domain or entropy terms.
    SourceOnly,
    /// Frame- and video-level domain classifiers only.
    Dann,
    /// Adds relation-level domain classifiers.
    Ta2n,
    /// Adds domain attention and the attentive entropy term.
    Ta3n,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.epochs == 0 || self.source_batch == 0 {
            return Err(Error::Config("epochs and source_batch must be positive".into()));
        }
        for (name, v) in [("lr_alpha", self.lr_alpha), ("lr_beta", self.lr_beta), ("grl_ramp", self.grl_ramp)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda_s: self.lambda_s, lambda_r: self.lambda_r, lambda_t: self.lambda_t, gamma: self.gamma }
    }

    pub fn set_weights(&mut self, w: LossWeights) {
        self.lambda_s = w.lambda_s;
        self.lambda_r = w.lambda_r;
        self.lambda_t = w.lambda_t;
        self.gamma = w.gamma;
    }

    /// Pooled features without attention train on the baseline objective.
    pub fn loss_variant(&self) -> LossVariant {
        if self.variant == TemporalVariant::TemPooling && self.attention == AttentionMode::None {
            LossVariant::Baseline
        } else {
            LossVariant::Full
        }
    }

    pub fn model_config(&self, input_dim: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            frames: self.frames,
            input_dim,
            feature_dim: self.feature_dim,
            classes,
            variant: self.variant,
            attention: self.attention,
            max_subsets_per_scale: self.max_subsets_per_scale,
            seed: self.seed,
        }
    }

    /// Copy configured for `method`: keeps this config's weights for the terms
    /// the method uses and zeroes the rest.
    pub fn with_method(&self, method: Method) -> TrainConfig {
        let d = self.clone();
        let mut c = self.clone();
        let (s, r, t, g, attention) = match method {
            Method::SourceOnly => (0.0, 0.0, 0.0, 0.0, AttentionMode::None),
            Method::Dann => (d.lambda_s, 0.0, d.lambda_t, 0.0, AttentionMode::None),
            Method::Ta2n => (d.lambda_s, d.lambda_r, d.lambda_t, 0.0, AttentionMode::None),
            Method::Ta3n => (d.lambda_s, d.lambda_r, d.lambda_t, d.gamma, AttentionMode::Domain),
        };
        c.set_weights(LossWeights { lambda_s: s, lambda_r: r, lambda_t: t, gamma: g });
        c.attention = attention;
        c
    }
}

/// `lr0 / (1 + alpha p)^beta`
pub fn lr_schedule(p: f64, lr0: f64, alpha: f64, beta: f64) -> f64 {
    lr0 / (1.0 + alpha * p).powf(beta)
}

/// `2 / (1 + exp(-ramp p)) - 1`
pub fn grl_lambda_schedule(p: f64, ramp: f64) -> f64 {
    2.0 / (1.0 + (-ramp * p).exp()) - 1.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: ParamStore,
    pub momentum: f64,
    pub weight_decay: f64,
    pub step: usize,
    pub total_steps: usize,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, momentum: f64, weight_decay: f64, total_steps: usize) -> Self {
        OptimizerState { velocity: params.zeros_like(), momentum, weight_decay, step: 0, total_steps }
    }

    /// Completed steps over total steps, clamped to `[0, 1]`.
    pub fn progress(&self) -> f64 {
        if self.total_steps == 0 {
            return 1.0;
        }
        (self.step as f64 / self.total_steps as f64).min(1.0)
    }
}

/// `v <- momentum v + g + wd p; p <- p - lr v`
pub fn sgd_step(params: &mut ParamStore, grads: &ParamStore, state: &mut OptimizerState, lr: f64) -> Result<()> {
    params.check_same_layout(grads, "sgd_step")?;
    params.check_same_layout(&state.velocity, "sgd_step")?;
    let (m, wd) = (state.momentum, state.weight_decay);
    // layouts match name by name and in order
    for (((_, p), (_, v)), (_, g)) in params.iter_mut().zip(state.velocity.iter_mut()).zip(grads.iter()) {
        for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vi = m * *vi + gi + wd * *pi;
            *pi -= lr * *vi;
        }
    }
    state.step += 1;
    Ok(())
}

/// Datasets of one run. Target training data is unlabelled as far as the
/// trainer is concerned; validation sets only feed the logged accuracies.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub source_train: &'a DomainDataset,
    pub target_train: Option<&'a DomainDataset>,
    pub source_val: Option<&'a DomainDataset>,
    pub target_val: Option<&'a DomainDataset>,
}

impl TrainData<'_> {
    pub fn input_dim(&self) -> usize {
        self.source_train.feature_dim
    }

    pub fn classes(&self) -> Result<usize> {
        let n = self.source_train.class_names.len();
        if n < 2 {
            return Err(Error::invalid(format!("source training data names {n} classes; need at least 2")));
        }
        Ok(n)
    }

    fn check_dims(&self) -> Result<()> {
        let d = self.input_dim();
        let sets = [self.target_train, self.source_val, self.target_val];
        if let Some(bad) = sets.iter().flatten().find(|s| s.feature_dim != d) {
            return Err(Error::invalid(format!("feature dimension {} differs from source {d}", bad.feature_dim)));
        }
        Ok(())
    }
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Learning rate and GRL strength of the epoch's last step.
    pub lr: f64,
    pub grl_lambda: f64,
    /// Batch means of each loss component.
    pub losses: LossValues,
    pub source_val_accuracy: Option<f64>,
    pub target_val_accuracy: Option<f64>,
}

/// Builds a fresh model for `data` and trains it.
pub fn fit(config: &TrainConfig, data: &TrainData) -> Result<(Ta3nModel, Vec<EpochMetrics>)> {
    let mut model = Ta3nModel::new(config.model_config(data.input_dim(), data.classes()?))?;
    let history = train(config, &mut model, data)?;
    Ok((model, history))
}

pub fn train(config: &TrainConfig, model: &mut Ta3nModel, data: &TrainData) -> Result<Vec<EpochMetrics>> {
    train_with(config, model, data, |_| Ok(()))
}

/// Trains `model` in place, calling `on_epoch` after every epoch.
pub fn train_with<F>(
    config: &TrainConfig,
    model: &mut Ta3nModel,
    data: &TrainData,
    mut on_epoch: F,
) -> Result<Vec<EpochMetrics>>
where
    F: FnMut(&EpochMetrics) -> Result<()>,
{
    config.validate()?;
    data.check_dims()?;
    let mc = model.config();
    if mc.frames != config.frames || mc.variant != config.variant || mc.attention != config.attention {
        return Err(Error::Config("model architecture does not match the training configuration".into()));
    }
    if mc.input_dim != data.input_dim() {
        return Err(Error::Config(format!("model expects D={}, data has D={}", mc.input_dim, data.input_dim())));
    }
    let k = config.frames;
    let weights = config.weights();
    let variant = config.loss_variant();
    let source = TrainingSet::source(data.source_train, k)?;
    let target = data.target_train.map(|t| TrainingSet::target(t, k)).transpose()?;
    let mut batcher = make_batches(&source, target.as_ref(), config.source_batch, config.seed)?;
    let total_steps = batcher.batches_per_epoch() * config.epochs;
    let mut state = OptimizerState::new(&model.params, config.momentum, config.weight_decay, total_steps);

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let batches = batcher.epoch();
        let mut sums = [0.0; 6];
        let (mut lr, mut lambda) = (0.0, 0.0);
        for (b, batch) in batches.iter().enumerate() {
            let p = state.progress();
            lr = lr_schedule(p, config.lr0, config.lr_alpha, config.lr_beta);
            lambda = grl_lambda_schedule(p, config.grl_ramp);
            model.grl = GrlConfig::new(lambda)?;

            let mut tape = Tape::new();
            let (bound, out) = model.forward_on(&mut tape, &batch.clips)?;
            let terms = LossTerms::from_forward(&mut tape, &out, &batch.domains, &batch.labels, k)?;
            let loss = total_loss(&mut tape, &terms, weights, variant)?;
            if !loss.values.is_finite() {
                return Err(Error::NonFinite { epoch, batch: b + 1 });
            }
            tape.backward(loss.total)?;
            sgd_step(&mut model.params, &tape.grads(&bound), &mut state, lr)?;
            if model.params.iter().any(|(_, t)| !t.is_finite()) {
                return Err(Error::NonFinite { epoch, batch: b + 1 });
            }
            let v = loss.values;
            for (s, x) in sums.iter_mut().zip([v.pred, v.spatial, v.temporal, v.relation, v.attentive_entropy, v.total])
            {
                *s += x;
            }
        }
        let n = batches.len() as f64;
        let [pred, spatial, temporal, relation, attentive_entropy, total] = sums.map(|s| s / n);
        let metrics = EpochMetrics {
            epoch,
            lr,
            grl_lambda: lambda,
            losses: LossValues { pred, spatial, temporal, relation, attentive_entropy, total },
            source_val_accuracy: data.source_val.map(|d| eval::accuracy(model, d)).transpose()?,
            target_val_accuracy: data.target_val.map(|d| eval::accuracy(model, d)).transpose()?,
        };
        on_epoch(&metrics)?;
        history.push(metrics);
    }
    Ok(history)
}

/// Largest relative error between the tape gradient of the training
/// objective on `batch` and central differences. Reversal layers act as
/// identities, and the quantities held constant during training (domain
/// attention weights, entropy weights) are frozen at the unperturbed point.
pub fn objective_gradient_error(
    model: &Ta3nModel,
    batch: &MixedBatch,
    weights: LossWeights,
    variant: LossVariant,
    epsilon: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64> {
    let k = model.config().frames;
    let mut tape = Tape::new();
    let (_, out) = model.forward_on(&mut tape, &batch.clips)?;
    let attention = match model.config().attention {
        AttentionMode::Domain => out.attention_weights.clone(),
        _ => None,
    };
    let entropy = entropy_weights(tape.value(out.temporal_domain_logits));
    finite_difference_check(&model.params, epsilon, max_coords, seed, |tape, bound| {
        tape.disable_reversal();
        let out = model.forward_with_attention(tape, bound, &batch.clips, attention.as_ref())?;
        let terms = LossTerms::from_forward_with(tape, &out, &batch.domains, &batch.labels, k, Some(&entropy))?;
        Ok(total_loss(tape, &terms, weights, variant)?.total)
    })
}

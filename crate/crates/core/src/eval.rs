//! Accuracy, domain discrepancy and attention diagnostics on frozen models.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::autodiff::{cross_entropy, Tensor};
use crate::data::{sample_frames, save_feature_file, Domain, DomainDataset, FrameFeatureRecord};
use crate::error::{Error, Result};
use crate::model::{AttentionMode, Inference, Ta3nModel};

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn clips(model: &Ta3nModel, ds: &DomainDataset) -> Result<Vec<Tensor>> {
    let k = model.config().frames;
    ds.records.iter().map(|r| sample_frames(r, k)).collect()
}

/// Forward pass over every record of `ds`.
pub fn predict(model: &Ta3nModel, ds: &DomainDataset) -> Result<Inference> {
    let clips = clips(model, ds)?;
    model.infer(&clips.iter().collect::<Vec<_>>())
}

fn labels(ds: &DomainDataset) -> Result<Vec<usize>> {
    ds.records
        .iter()
        .map(|r| r.label.ok_or_else(|| Error::Record { video_id: r.video_id.clone(), detail: "missing label".into() }))
        .collect()
}

/// Fraction of rows of `logits` whose argmax equals the label.
pub fn accuracy_from_logits(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels.iter().enumerate().filter(|(r, &y)| argmax(logits.row_slice(*r)) == y).count();
    hits as f64 / labels.len() as f64
}

pub fn accuracy(model: &Ta3nModel, ds: &DomainDataset) -> Result<f64> {
    let labels = labels(ds)?;
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset"));
    }
    Ok(accuracy_from_logits(&predict(model, ds)?.class_logits, &labels))
}

/// Unbiased squared MMD with an RBF kernel and median-heuristic bandwidth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    pub value: f64,
    /// Kernel width `sigma` in `exp(-|a-b|^2 / (2 sigma^2))`.
    pub bandwidth: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Order-independent sum.
fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

pub fn mmd(source: &Tensor, target: &Tensor) -> Result<MmdEstimate> {
    let (n, m) = (source.rows(), target.rows());
    if n < 2 || m < 2 {
        return Err(Error::invalid(format!("MMD needs at least 2 samples per side, got {n} and {m}")));
    }
    if source.cols() != target.cols() {
        return Err(Error::shape("mmd", format!("{} vs {} feature columns", source.cols(), target.cols())));
    }
    let pooled: Vec<&[f64]> = (0..n).map(|i| source.row_slice(i)).chain((0..m).map(|j| target.row_slice(j))).collect();
    let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 { 0.5 * (dists[mid - 1] + dists[mid]) } else { dists[mid] };
    if !(median > 0.0) {
        return Err(Error::invalid("degenerate MMD bandwidth: median pairwise distance is 0"));
    }
    let denom = 2.0 * median * median;
    let kernel = |a: &[f64], b: &[f64]| (-sq_dist(a, b) / denom).exp();

    let within = |t: &Tensor| {
        let k = t.rows();
        let mut v = Vec::with_capacity(k * (k - 1) / 2);
        for i in 0..k {
            for j in i + 1..k {
                v.push(kernel(t.row_slice(i), t.row_slice(j)));
            }
        }
        2.0 * sorted_sum(v) / (k * (k - 1)) as f64
    };
    let mut cross = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            cross.push(kernel(source.row_slice(i), target.row_slice(j)));
        }
    }
    let cross = sorted_sum(cross) / (n * m) as f64;
    Ok(MmdEstimate { value: within(source) + within(target) - 2.0 * cross, bandwidth: median })
}

/// Video-level domain cross-entropy of the temporal domain classifier over both sets.
pub fn domain_loss_metric(model: &Ta3nModel, source: &DomainDataset, target: &DomainDataset) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (ds, domain) in [(source, Domain::Source), (target, Domain::Target)] {
        let logits = predict(model, ds)?.temporal_domain_logits;
        for r in 0..logits.rows() {
            total += cross_entropy(logits.row_slice(r), domain.index())?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("domain loss over empty datasets"));
    }
    Ok(total / count as f64)
}

/// Full-batch gradient steps of the domain probe.
pub const PROBE_STEPS: usize = 500;
const PROBE_LR: f64 = 0.5;
/// L2 penalty on the probe weights; keeps separable data from diverging.
const PROBE_L2: f64 = 1e-2;

/// Cross-entropy (nats) of a logistic-regression domain classifier fitted to
/// standardized features of both sets, weighted so each domain counts half.
/// Low values mean separable domains; `ln 2` means indistinguishable.
pub fn probe_domain_loss(source: &Tensor, target: &Tensor) -> Result<f64> {
    let (n, m, f) = (source.rows(), target.rows(), source.cols());
    if n == 0 || m == 0 {
        return Err(Error::invalid("domain probe needs samples from both domains"));
    }
    if target.cols() != f {
        return Err(Error::shape("probe_domain_loss", format!("{f} vs {} feature columns", target.cols())));
    }
    let rows: Vec<&[f64]> = (0..n).map(|i| source.row_slice(i)).chain((0..m).map(|j| target.row_slice(j))).collect();
    let labels: Vec<f64> = (0..n + m).map(|i| if i < n { 0.0 } else { 1.0 }).collect();
    let total = rows.len() as f64;
    let mut x: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    for c in 0..f {
        let mean = x.iter().map(|r| r[c]).sum::<f64>() / total;
        let sd = (x.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / total).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        x.iter_mut().for_each(|r| r[c] = (r[c] - mean) / sd);
    }
    // Class-balanced weights so an uninformative probe scores ln 2.
    let weight = |y: f64| if y == 0.0 { 0.5 / n as f64 } else { 0.5 / m as f64 };
    let (mut w, mut b) = (vec![0.0; f], 0.0);
    let logit = |w: &[f64], b: f64, r: &[f64]| r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
    for _ in 0..PROBE_STEPS {
        let mut gw = vec![0.0; f];
        let mut gb = 0.0;
        for (r, &y) in x.iter().zip(&labels) {
            let p = 1.0 / (1.0 + (-logit(&w, b, r)).exp());
            let g = weight(y) * (p - y);
            gw.iter_mut().zip(r).for_each(|(a, v)| *a += g * v);
            gb += g;
        }
        w.iter_mut().zip(&gw).for_each(|(a, g)| *a -= PROBE_LR * (g + PROBE_L2 * *a));
        b -= PROBE_LR * gb;
    }
    Ok(x.iter()
        .zip(&labels)
        .map(|(r, &y)| {
            let z = logit(&w, b, r);
            // Stable softplus form of the binary cross-entropy.
            let ce = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            weight(y) * ce
        })
        .sum())
}

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionStats {
    /// Relation scale `n`, or frame position for pooled models.
    pub unit: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Counts over `[0, 1]` in equal-width bins.
    pub histogram: Vec<usize>,
}

/// Per-scale statistics of the domain attention weights over `ds`.
pub fn attention_summary(model: &Ta3nModel, ds: &DomainDataset) -> Result<Vec<AttentionStats>> {
    if model.config().attention != AttentionMode::Domain {
        return Err(Error::invalid("attention summary requires a model with domain attention"));
    }
    if ds.is_empty() {
        return Err(Error::invalid("attention summary of an empty dataset"));
    }
    let weights = predict(model, ds)?.attention_weights.expect("domain attention yields weights");
    let scales = model.config().scales();
    Ok((0..weights.cols())
        .map(|c| {
            let col: Vec<f64> = (0..weights.rows()).map(|r| weights.get(r, c)).collect();
            let mut histogram = vec![0; HISTOGRAM_BINS];
            for v in &col {
                let bin = ((v * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
                histogram[bin] += 1;
            }
            AttentionStats {
                unit: scales.get(c).copied().unwrap_or(c),
                mean: col.iter().sum::<f64>() / col.len() as f64,
                min: col.iter().copied().fold(f64::INFINITY, f64::min),
                max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                histogram,
            }
        })
        .collect())
}

/// Final video features of `ds` as single-frame records (`T = 1`, `F` columns).
pub fn feature_dataset(model: &Ta3nModel, ds: &DomainDataset) -> Result<DomainDataset> {
    let feats = predict(model, ds)?.video_features;
    let records = ds
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| FrameFeatureRecord {
            video_id: r.video_id.clone(),
            domain: r.domain,
            label: r.label,
            frames: Tensor::row(feats.row_slice(i)),
        })
        .collect();
    DomainDataset::new(feats.cols(), ds.class_names.clone(), records)
}

pub fn dump_features(model: &Ta3nModel, ds: &DomainDataset, path: &Path) -> Result<()> {
    save_feature_file(&feature_dataset(model, ds)?, path)
}

/// Accuracy recomputed from a feature dump by applying the classifier head.
pub fn accuracy_from_dump(model: &Ta3nModel, dump: &DomainDataset) -> Result<f64> {
    let labels = labels(dump)?;
    let rows: Vec<&Tensor> = dump.records.iter().map(|r| &r.frames).collect();
    let feats = Tensor::vstack(&rows)?;
    Ok(accuracy_from_logits(&model.classify_features(&feats)?, &labels))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `N x 2` coordinates on the two leading principal axes.
    pub coords: Tensor,
    /// Variance along each of the two axes.
    pub variances: [f64; 2],
    pub total_variance: f64,
}

impl Projection {
    pub fn explained_ratio(&self) -> f64 {
        if self.total_variance == 0.0 {
            return 1.0;
        }
        (self.variances[0] + self.variances[1]) / self.total_variance
    }
}

/// Centers the rows and projects them on the top two covariance eigenvectors.
/// Each axis is oriented so its largest-magnitude loading is positive.
pub fn project_2d(features: &Tensor) -> Result<Projection> {
    let (n, f) = (features.rows(), features.cols());
    if n == 0 || f == 0 {
        return Err(Error::invalid("projection of an empty feature matrix"));
    }
    let x = DMatrix::from_row_slice(n, f, features.data());
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, f, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut coords = vec![0.0; n * 2];
    let mut variances = [0.0; 2];
    for (axis, &idx) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(idx).clone_owned();
        let lead = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            v = -v;
        }
        variances[axis] = eig.eigenvalues[idx].max(0.0);
        let proj = &centered * v;
        for i in 0..n {
            coords[i * 2 + axis] = proj[i];
        }
    }
    let total_variance = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    Ok(Projection { coords: Tensor::new(n, 2, coords)?, variances, total_variance })
}

/// Summary of one model on the two validation sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub source_accuracy: f64,
    pub target_accuracy: f64,
    /// `target_accuracy` minus the target accuracy of a reference source-only run.
    pub gain: Option<f64>,
    pub domain_loss: f64,
    /// Loss of a domain classifier fitted post hoc to the final video features.
    pub probe_domain_loss: f64,
    pub mmd: f64,
    pub mmd_bandwidth: f64,
    pub attention_stats: Option<Vec<AttentionStats>>,
}

pub fn evaluate(
    model: &Ta3nModel,
    source_val: &DomainDataset,
    target_val: &DomainDataset,
    reference_target_accuracy: Option<f64>,
) -> Result<MetricsReport> {
    let source_accuracy = accuracy(model, source_val)?;
    let target_accuracy = accuracy(model, target_val)?;
    let source_feats = predict(model, source_val)?.video_features;
    let target_feats = predict(model, target_val)?.video_features;
    let discrepancy = mmd(&source_feats, &target_feats)?;
    let attention_stats = if model.config().attention == AttentionMode::Domain {
        let mut both = source_val.clone();
        both.records.extend(target_val.records.iter().cloned());
        Some(attention_summary(model, &both)?)
    } else {
        None
    };
    Ok(MetricsReport {
        source_accuracy,
        target_accuracy,
        gain: reference_target_accuracy.map(|r| target_accuracy - r),
        domain_loss: domain_loss_metric(model, source_val, target_val)?,
        probe_domain_loss: probe_domain_loss(&source_feats, &target_feats)?,
        mmd: discrepancy.value,
        mmd_bandwidth: discrepancy.bandwidth,
        attention_stats,
    })
}

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, EpochMetrics, TrainConfig, TrainData};
use crate::error::{Error, Result};
use crate::losses::LossWeights;

pub const COARSE_GRID: [f64; 6] = [0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0];
pub const FINE_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Value held by the unswept weights during the coarse stage.
const COARSE_DEFAULT: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GridStage {
    /// Geometric values per weight, one weight at a time.
    Coarse,
    /// Arithmetic values per domain weight around the base configuration.
    Fine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweptWeight {
    LambdaS,
    LambdaR,
    LambdaT,
    Gamma,
    /// All three domain weights at once.
    Joint,
}

impl SweptWeight {
    fn set(self, w: &mut LossWeights, v: f64) {
        match self {
            SweptWeight::LambdaS => w.lambda_s = v,
            SweptWeight::LambdaR => w.lambda_r = v,
            SweptWeight::LambdaT => w.lambda_t = v,
            SweptWeight::Gamma => w.gamma = v,
            SweptWeight::Joint => unreachable!("joint candidates set all weights explicitly"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCandidate {
    pub index: usize,
    pub swept: SweptWeight,
    pub weights: LossWeights,
}

/// Candidates of one stage in evaluation order. The fine stage sweeps the
/// domain weights coordinatewise around `base`, or over the full product when
/// `joint` is set; `gamma` stays at its base value.
pub fn grid_candidates(base: &TrainConfig, stage: GridStage, joint: bool) -> Vec<GridCandidate> {
    let mut out = Vec::new();
    let mut push = |swept, weights| {
        let index = out.len();
        out.push(GridCandidate { index, swept, weights })
    };
    match stage {
        GridStage::Coarse => {
            let start = LossWeights {
                lambda_s: COARSE_DEFAULT,
                lambda_r: COARSE_DEFAULT,
                lambda_t: COARSE_DEFAULT,
                gamma: COARSE_DEFAULT,
            };
            for swept in [SweptWeight::LambdaS, SweptWeight::LambdaR, SweptWeight::LambdaT, SweptWeight::Gamma] {
                for v in COARSE_GRID {
                    let mut w = start;
                    swept.set(&mut w, v);
                    push(swept, w);
                }
            }
        }
        GridStage::Fine if joint => {
            for s in FINE_GRID {
                for r in FINE_GRID {
                    for t in FINE_GRID {
                        push(
                            SweptWeight::Joint,
                            LossWeights { lambda_s: s, lambda_r: r, lambda_t: t, gamma: base.gamma },
                        );
                    }
                }
            }
        }
        GridStage::Fine => {
            for swept in [SweptWeight::LambdaS, SweptWeight::LambdaR, SweptWeight::LambdaT] {
                for v in FINE_GRID {
                    let mut w = base.weights();
                    swept.set(&mut w, v);
                    push(swept, w);
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    #[serde(flatten)]
    pub candidate: GridCandidate,
    /// Final-epoch target validation accuracy; the selection score.
    /// `None` when training diverged.
    pub target_accuracy: Option<f64>,
    pub source_accuracy: Option<f64>,
    /// Reason the candidate has no score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(skip)]
    pub history: Vec<EpochMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub stage: GridStage,
    pub rows: Vec<GridRow>,
    /// Position of the winning row in `rows`.
    pub best: usize,
}

impl GridReport {
    pub fn best_row(&self) -> &GridRow {
        &self.rows[self.best]
    }
}

fn weight_key(w: &LossWeights) -> [f64; 5] {
    [w.lambda_s + w.lambda_r + w.lambda_t + w.gamma, w.lambda_s, w.lambda_r, w.lambda_t, w.gamma]
}

/// Higher score wins and any score beats none; ties go to the smaller
/// weights, then the earlier candidate.
fn better(a: &GridRow, b: &GridRow) -> bool {
    let score = |r: &GridRow| r.target_accuracy.unwrap_or(f64::NEG_INFINITY);
    match score(a).total_cmp(&score(b)) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => {
            let (ka, kb) = (weight_key(&a.candidate.weights), weight_key(&b.candidate.weights));
            for (x, y) in ka.iter().zip(&kb) {
                match x.total_cmp(y) {
                    Ordering::Less => return true,
                    Ordering::Greater => return false,
                    Ordering::Equal => {}
                }
            }
            a.candidate.index < b.candidate.index
        }
    }
}

fn run_candidate(base: &TrainConfig, data: &TrainData, candidate: &GridCandidate) -> Result<GridRow> {
    let mut config = base.clone();
    config.set_weights(candidate.weights);
    let (_, history) = match fit(&config, data) {
        Ok(fitted) => fitted,
        Err(e @ Error::NonFinite { .. }) => {
            return Ok(GridRow {
                candidate: candidate.clone(),
                target_accuracy: None,
                source_accuracy: None,
                failure: Some(e.to_string()),
                history: Vec::new(),
            })
        }
        Err(e) => return Err(e),
    };
    let last = history.last().expect("at least one epoch");
    Ok(GridRow {
        candidate: candidate.clone(),
        target_accuracy: Some(last.target_val_accuracy.expect("target validation set present")),
        source_accuracy: last.source_val_accuracy,
        failure: None,
        history,
    })
}

/// Trains every candidate with the seed of `base` and scores it on the
/// labelled target validation split. Up to `jobs` candidates run at once;
/// rows keep candidate order regardless of completion order. Diverged
/// candidates are kept unscored; the search fails only if all diverge.
pub fn grid_search(
    base: &TrainConfig,
    data: &TrainData,
    candidates: &[GridCandidate],
    stage: GridStage,
    jobs: usize,
) -> Result<GridReport> {
    let selection =
        data.target_val.ok_or_else(|| Error::Config("grid search needs a target validation split".into()))?;
    if !selection.is_labelled() || selection.is_empty() {
        return Err(Error::invalid("target validation split must be nonempty and labelled"));
    }
    if candidates.is_empty() {
        return Err(Error::Config("grid search needs at least one candidate".into()));
    }
    base.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let rows =
        pool.install(|| candidates.par_iter().map(|c| run_candidate(base, data, c)).collect::<Result<Vec<_>>>())?;
    let mut best = 0;
    for (i, row) in rows.iter().enumerate().skip(1) {
        if better(row, &rows[best]) {
            best = i;
        }
    }
    if rows[best].target_accuracy.is_none() {
        return Err(rows[best]
            .failure
            .clone()
            .map_or_else(|| Error::Config("no candidate scored".into()), Error::Config));
    }
    Ok(GridReport { stage, rows, best })
}

/// Retrains one candidate and returns its score.
pub fn replay_candidate(base: &TrainConfig, data: &TrainData, candidate: &GridCandidate) -> Result<f64> {
    let mut config = base.clone();
    config.set_weights(candidate.weights);
    let (_, history) = fit(&config, data)?;
    Ok(history.last().and_then(|m| m.target_val_accuracy).expect("target validation set present"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(index: usize, score: Option<f64>, lambda_s: f64) -> GridRow {
        GridRow {
            candidate: GridCandidate {
                index,
                swept: SweptWeight::LambdaS,
                weights: LossWeights { lambda_s, ..LossWeights::ZERO },
            },
            target_accuracy: score,
            source_accuracy: None,
            failure: score.is_none().then(|| "diverged".into()),
            history: Vec::new(),
        }
    }

    #[test]
    fn ranking() {
        assert!(better(&row(1, Some(0.0), 1.0), &row(0, None, 0.0)));
        assert!(!better(&row(0, None, 0.0), &row(1, Some(0.0), 1.0)));
        assert!(better(&row(1, Some(0.5), 0.1), &row(0, Some(0.5), 1.0)));
        assert!(better(&row(0, None, 0.0), &row(1, None, 0.0)));
        assert!(better(&row(2, Some(0.6), 10.0), &row(0, Some(0.5), 0.0)));
    }
}

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{logistic4_fit, plcc, rmse, srocc, Logistic4};
use crate::error::{Error, Result};
use crate::finetune::{FinetuneModel, FinetuneSample};
use crate::pointcloud::DatasetManifest;

/// Anything that maps a prepared sample to a quality score.
pub trait Predictor: Sync {
    fn predict(&self, sample: &FinetuneSample) -> Result<f64>;
}

impl Predictor for FinetuneModel {
    fn predict(&self, sample: &FinetuneSample) -> Result<f64> {
        FinetuneModel::predict(self, sample)
    }
}

/// Returns the stored MOS; a reference point for the protocol.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleModel;

impl Predictor for OracleModel {
    fn predict(&self, sample: &FinetuneSample) -> Result<f64> {
        Ok(sample.mos)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub srocc: f64,
    pub plcc: f64,
    /// On logistic-aligned predictions.
    pub rmse: f64,
    pub n_samples: usize,
    pub logistic_params: [f64; 4],
    pub logistic_converged: bool,
}

/// A scored result, or a flagged one when correlations are undefined
/// (constant predictions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EvalOutcome {
    Scored(EvalResult),
    Undefined { reason: String, n_samples: usize },
}

impl EvalOutcome {
    pub fn scored(&self) -> Option<&EvalResult> {
        match self {
            EvalOutcome::Scored(r) => Some(r),
            EvalOutcome::Undefined { .. } => None,
        }
    }
}

/// Aligns predictions with a Logistic-4 fit and computes SROCC on the raw
/// predictions, PLCC and RMSE on the aligned ones.
pub fn evaluate_predictions(pred: &[f64], mos: &[f64]) -> Result<EvalOutcome> {
    let fit = match logistic4_fit(pred, mos) {
        Ok(f) => f,
        Err(Error::UndefinedCorrelation(reason)) => {
            return Ok(EvalOutcome::Undefined { reason, n_samples: pred.len() })
        }
        Err(e) => return Err(e),
    };
    let scores = srocc(pred, mos).and_then(|s| Ok((s, plcc(&fit.aligned, mos)?)));
    match scores {
        Ok((s, p)) => Ok(EvalOutcome::Scored(EvalResult {
            srocc: s,
            plcc: p,
            rmse: rmse(&fit.aligned, mos)?,
            n_samples: pred.len(),
            logistic_params: fit.params.beta,
            logistic_converged: fit.converged,
        })),
        Err(Error::UndefinedCorrelation(reason)) => Ok(EvalOutcome::Undefined { reason, n_samples: pred.len() }),
        Err(e) => Err(e),
    }
}

/// Predicts every sample and scores the result.
pub fn evaluate<P: Predictor + ?Sized>(model: &P, samples: &[FinetuneSample]) -> Result<(EvalOutcome, Vec<f64>)> {
    use rayon::prelude::*;
    let pred: Vec<f64> = samples.par_iter().map(|s| model.predict(s)).collect::<Result<_>>()?;
    let mos: Vec<f64> = samples.iter().map(|s| s.mos).collect();
    Ok((evaluate_predictions(&pred, &mos)?, pred))
}

pub fn require_labels(manifest: &DatasetManifest) -> Result<()> {
    match manifest.entries.iter().find(|e| e.mos.is_none()) {
        Some(e) => Err(Error::Dataset(format!(
            "row {} has no mos; evaluation needs labelled data",
            e.path.display()
        ))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_id: usize,
    pub train_contents: Vec<u32>,
    pub test_contents: Vec<u32>,
    /// Epoch (1-based) with the lowest training loss; its test result is kept.
    pub selected_epoch: u64,
    pub min_train_loss: f64,
    pub outcome: EvalOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanResult {
    pub srocc: f64,
    pub plcc: f64,
    pub rmse: f64,
    pub folds_scored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub folds: Vec<FoldReport>,
    pub mean: Option<MeanResult>,
}

impl CrossValReport {
    /// Averages the metrics of every scored fold; folds aligned separately.
    pub fn from_folds(folds: Vec<FoldReport>) -> Self {
        let scored: Vec<&EvalResult> = folds.iter().filter_map(|f| f.outcome.scored()).collect();
        let mean = (!scored.is_empty()).then(|| {
            let n = scored.len() as f64;
            MeanResult {
                srocc: scored.iter().map(|r| r.srocc).sum::<f64>() / n,
                plcc: scored.iter().map(|r| r.plcc).sum::<f64>() / n,
                rmse: scored.iter().map(|r| r.rmse).sum::<f64>() / n,
                folds_scored: scored.len(),
            }
        });
        CrossValReport { folds, mean }
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<6} {:>8} {:>8} {:>8} {:>6} {:>6}", "fold", "SROCC", "PLCC", "RMSE", "n", "epoch").unwrap();
        for f in &self.folds {
            match &f.outcome {
                EvalOutcome::Scored(r) => writeln!(
                    s,
                    "{:<6} {:>8.4} {:>8.4} {:>8.4} {:>6} {:>6}",
                    f.fold_id, r.srocc, r.plcc, r.rmse, r.n_samples, f.selected_epoch
                ),
                EvalOutcome::Undefined { reason, n_samples } => writeln!(
                    s,
                    "{:<6} {:>8} {:>8} {:>8} {:>6} {:>6}  ({reason})",
                    f.fold_id, "n/a", "n/a", "n/a", n_samples, f.selected_epoch
                ),
            }
            .unwrap();
        }
        if let Some(m) = &self.mean {
            writeln!(s, "{:<6} {:>8.4} {:>8.4} {:>8.4}", "mean", m.srocc, m.plcc, m.rmse).unwrap();
        }
        s
    }
}

impl EvalResult {
    pub fn curve(&self) -> Logistic4 {
        Logistic4 { beta: self.logistic_params }
    }
}

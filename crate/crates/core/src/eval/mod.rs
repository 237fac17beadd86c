//! Correlation metrics, Logistic-4 alignment, content-disjoint folds and
//! reporting.

mod kfold;
mod logistic;
mod metrics;
mod plot;
mod protocol;

pub use kfold::{kfold_split, FoldSplit};
pub use logistic::{logistic4_fit, Logistic4, LogisticFit};
pub use metrics::{average_ranks, pearson, plcc, rmse, srocc};
pub use plot::scatter_plot;
pub use protocol::{
    evaluate, evaluate_predictions, require_labels, CrossValReport, EvalOutcome, EvalResult, FoldReport, MeanResult,
    OracleModel, Predictor,
};

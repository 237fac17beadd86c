use crate::error::{Error, Result};

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Usage("loss needs at least one sample".into()));
    }
    Ok(())
}

/// `(1/B) Σ (q̂_b − q_b)²`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / pred.len() as f64)
}

pub fn mse_loss_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_lengths(pred, target)?;
    let b = pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, q)| 2.0 * (p - q) / b).collect())
}

fn rank_terms(pred: &[f64], target: &[f64]) -> Result<()> {
    check_lengths(pred, target)?;
    if pred.len() < 2 {
        return Err(Error::Usage(format!("rank loss needs at least 2 samples, got {}", pred.len())));
    }
    Ok(())
}

fn sign(qi: f64, qj: f64) -> f64 {
    if qi >= qj {
        1.0
    } else {
        -1.0
    }
}

/// `(1/B²) Σ_i Σ_j max(0, |q_i − q_j| − e(q_i,q_j)(q̂_i − q̂_j))` with
/// `e = 1` when `q_i ≥ q_j` and `−1` otherwise; diagonal terms included.
pub fn rank_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    rank_terms(pred, target)?;
    let b = pred.len();
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            let e = sign(target[i], target[j]);
            total += ((target[i] - target[j]).abs() - e * (pred[i] - pred[j])).max(0.0);
        }
    }
    Ok(total / (b * b) as f64)
}

/// Subgradient of [`rank_loss`]; inactive and boundary terms contribute 0.
pub fn rank_loss_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    rank_terms(pred, target)?;
    let b = pred.len();
    let w = 1.0 / (b * b) as f64;
    let mut grad = vec![0.0; b];
    for i in 0..b {
        for j in 0..b {
            let e = sign(target[i], target[j]);
            if (target[i] - target[j]).abs() - e * (pred[i] - pred[j]) > 0.0 {
                grad[i] -= e * w;
                grad[j] += e * w;
            }
        }
    }
    Ok(grad)
}

/// `α·mse + (1−α)·rank`.
pub fn finetune_loss(mse: f64, rank: f64, alpha: f64) -> f64 {
    alpha * mse + (1.0 - alpha) * rank
}

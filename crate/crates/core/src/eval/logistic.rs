use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 500;
const GRADIENT_TOLERANCE: f64 = 1e-8;

/// `f(s) = β₂ + (β₁ − β₂) / (1 + exp(−(s − β₃)/|β₄|))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Logistic4 {
    pub beta: [f64; 4],
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Logistic4 {
    pub fn eval(&self, s: f64) -> f64 {
        let [b1, b2, b3, b4] = self.beta;
        b2 + (b1 - b2) * sigmoid((s - b3) / b4.abs())
    }

    /// `∂f/∂β` at `s`.
    fn jacobian_row(&self, s: f64) -> Vector4<f64> {
        let [b1, b2, b3, b4] = self.beta;
        let a = b4.abs();
        let z = (s - b3) / a;
        let sg = sigmoid(z);
        let d = (b1 - b2) * sg * (1.0 - sg);
        Vector4::new(sg, 1.0 - sg, -d / a, -d * z / a * b4.signum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub params: Logistic4,
    pub aligned: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn sse(f: &Logistic4, pred: &[f64], mos: &[f64]) -> f64 {
    pred.iter().zip(mos).map(|(s, q)| (f.eval(*s) - q).powi(2)).sum()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Least-squares Logistic-4 fit by Levenberg–Marquardt with Marquardt
/// diagonal scaling. Starts from `β₁ = max(mos)`, `β₂ = min(mos)`,
/// `β₃ = median(pred)`, `β₄ = std(pred)`; stops when `‖Jᵀr‖∞ < 1e-8` or after
/// 500 iterations, in which case the best parameters are returned with a
/// warning.
pub fn logistic4_fit(pred: &[f64], mos: &[f64]) -> Result<LogisticFit> {
    if pred.len() != mos.len() {
        return Err(Error::Shape(format!("{} predictions for {} scores", pred.len(), mos.len())));
    }
    if pred.len() < 5 {
        return Err(Error::Usage(format!("logistic fit needs at least 5 samples, got {}", pred.len())));
    }
    if pred.iter().chain(mos).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("logistic fit: non-finite input".into()));
    }
    let n = pred.len() as f64;
    let mean = pred.iter().sum::<f64>() / n;
    let std = (pred.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std == 0.0 {
        return Err(Error::UndefinedCorrelation("predictions are constant".into()));
    }
    let hi = mos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = mos.iter().copied().fold(f64::INFINITY, f64::min);
    let mut f = Logistic4 {
        beta: [hi, lo, median(pred), std],
    };
    let mut cost = sse(&f, pred, mos);
    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (s, q) in pred.iter().zip(mos) {
            let j = f.jacobian_row(*s);
            let r = f.eval(*s) - q;
            jtj += j * j.transpose();
            jtr += j * r;
        }
        if jtr.amax() < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        let mut improved = false;
        while mu < 1e12 {
            let mut a = jtj;
            for k in 0..4 {
                a[(k, k)] += mu * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-jtr)) else {
                mu *= 4.0;
                continue;
            };
            let candidate = Logistic4 {
                beta: [
                    f.beta[0] + step[0],
                    f.beta[1] + step[1],
                    f.beta[2] + step[2],
                    f.beta[3] + step[3],
                ],
            };
            let c = sse(&candidate, pred, mos);
            if c.is_finite() && c < cost && candidate.beta[3] != 0.0 {
                f = candidate;
                cost = c;
                mu = (mu / 3.0).max(1e-15);
                improved = true;
                break;
            }
            mu *= 2.0;
        }
        if !improved {
            converged = jtr.amax() < 1e-6 * (1.0 + cost);
            break;
        }
    }
    if !converged {
        log::warn!("logistic fit stopped after {iterations} iterations without meeting the gradient tolerance");
    }
    Ok(LogisticFit {
        aligned: pred.iter().map(|s| f.eval(*s)).collect(),
        params: f,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{rmse, srocc};
    use crate::rng::rng_from;
    use rand::Rng;

    #[test]
    fn recovers_noiseless_curve() {
        let mut rng = rng_from(4);
        for trial in 0..20 {
            let truth = Logistic4 {
                beta: [
                    rng.random_range(4.0..6.0),
                    rng.random_range(0.5..1.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(0.3..1.2),
                ],
            };
            let pred: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mos: Vec<f64> = pred.iter().map(|s| truth.eval(*s)).collect();
            let fit = logistic4_fit(&pred, &mos).unwrap();
            let err = rmse(&fit.aligned, &mos).unwrap();
            assert!(err < 1e-6, "trial {trial}: rmse {err}, {:?}", fit.params);
        }
    }

    #[test]
    fn alignment_helps_and_keeps_ranks() {
        let mut rng = rng_from(9);
        let mos: Vec<f64> = (0..30).map(|_| rng.random_range(1.0..5.0)).collect();
        let fit = logistic4_fit(&mos, &mos).unwrap();
        // The identity is only a limit of the family (β₄ → ∞); the fit gets
        // within about 1e-6 of it.
        assert!(rmse(&fit.aligned, &mos).unwrap() <= rmse(&mos, &mos).unwrap() + 1e-5);
        let pred: Vec<f64> = mos.iter().map(|m| m * 0.3 + rng.random_range(-0.2..0.2)).collect();
        let fit = logistic4_fit(&pred, &mos).unwrap();
        assert!(fit.params.beta[0] > fit.params.beta[1]);
        assert!(fit.params.beta[3] > 0.0);
        assert!((srocc(&fit.aligned, &mos).unwrap() - srocc(&pred, &mos).unwrap()).abs() < 1e-12);
        assert!(rmse(&fit.aligned, &mos).unwrap() < rmse(&pred, &mos).unwrap());
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(logistic4_fit(&[1.0; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(logistic4_fit(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }
}

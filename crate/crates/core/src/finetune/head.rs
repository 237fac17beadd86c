use crate::error::Result;
use crate::nn::linear::{linear_backward, linear_forward};
use crate::nn::{relu_backward_inplace, relu_inplace};
use crate::rng::rng_from;
use crate::tensor::{ParamSet, Tensor};

/// `Linear(D→hidden) → ReLU → Linear(hidden→1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionHead {
    pub input_dim: usize,
    pub hidden: usize,
    pub params: ParamSet,
}

impl RegressionHead {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let mut params = ParamSet::new();
        params.push("head.fc1.weight", Tensor::randn(&[hidden, input_dim], (2.0 / input_dim as f64).sqrt(), &mut rng));
        params.push("head.fc1.bias", Tensor::zeros(&[hidden]));
        params.push("head.fc2.weight", Tensor::randn(&[1, hidden], (1.0 / hidden as f64).sqrt(), &mut rng));
        params.push("head.fc2.bias", Tensor::zeros(&[1]));
        RegressionHead { input_dim, hidden, params }
    }

    pub fn set_output_bias(&mut self, value: f64) {
        self.params.get_mut(3).data[0] = value;
    }
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
}

pub fn regress_score(fused: &[f64], head: &RegressionHead) -> Result<(f64, HeadCache)> {
    if fused.len() != head.input_dim {
        return Err(crate::Error::Shape(format!(
            "head expects {} inputs, got {}",
            head.input_dim,
            fused.len()
        )));
    }
    let p = &head.params;
    let mut hidden = linear_forward(&p.get(0).data, Some(&p.get(1).data), fused, head.hidden);
    relu_inplace(&mut hidden);
    let out = linear_forward(&p.get(2).data, Some(&p.get(3).data), &hidden, 1)[0];
    Ok((out, HeadCache { input: fused.to_vec(), hidden }))
}

/// Accumulates head gradients for `∂L/∂q̂ = grad` and returns `∂L/∂F`.
pub fn regress_score_backward(head: &RegressionHead, cache: &HeadCache, grad: f64, grads: &mut ParamSet) -> Vec<f64> {
    let p = &head.params;
    let (g01, g23) = grads.tensors_mut().split_at_mut(2);
    let (gw2, gb2) = g23.split_at_mut(1);
    let mut gh = linear_backward(&p.get(2).data, &cache.hidden, &[grad], &mut gw2[0].data, Some(&mut gb2[0].data));
    relu_backward_inplace(&cache.hidden, &mut gh);
    let (gw1, gb1) = g01.split_at_mut(1);
    linear_backward(&p.get(0).data, &cache.input, &gh, &mut gw1[0].data, Some(&mut gb1[0].data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_bias() {
        let mut h = RegressionHead::new(4, 3, 1);
        for t in h.params.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        h.set_output_bias(2.5);
        assert_eq!(regress_score(&[0.3, -1.0, 2.0, 0.1], &h).unwrap().0, 2.5);
        assert!(regress_score(&[0.3], &h).is_err());
    }

    #[test]
    fn deterministic_and_gradients_match() {
        let h = RegressionHead::new(5, 7, 3);
        let x = [0.4, -0.2, 0.9, 0.1, -0.6];
        let (y, cache) = regress_score(&x, &h).unwrap();
        assert_eq!(y, regress_score(&x, &RegressionHead::new(5, 7, 3)).unwrap().0);
        let mut grads = h.params.zeros_like();
        let gx = regress_score_backward(&h, &cache, 1.0, &mut grads);
        let eps = 1e-6;
        let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        for t in 0..4 {
            for i in 0..h.params.get(t).len() {
                let mut a = h.clone();
                a.params.get_mut(t).data[i] += eps;
                let mut b = h.clone();
                b.params.get_mut(t).data[i] -= eps;
                let fd = (regress_score(&x, &a).unwrap().0 - regress_score(&x, &b).unwrap().0) / (2.0 * eps);
                let an = grads.get(t).data[i];
                if fd.abs().max(an.abs()) > 1e-9 {
                    assert!(rel(fd, an) < 1e-4, "{}[{i}]", h.params.name(t));
                }
            }
        }
        for k in 0..5 {
            let mut a = x;
            a[k] += eps;
            let mut b = x;
            b[k] -= eps;
            let fd = (regress_score(&a, &h).unwrap().0 - regress_score(&b, &h).unwrap().0) / (2.0 * eps);
            assert!(rel(fd, gx[k]) < 1e-4);
        }
    }
}

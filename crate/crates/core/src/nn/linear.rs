//! Dense layers, weight layout `[out, in]`.

pub fn linear_forward(weight: &[f64], bias: Option<&[f64]>, input: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = input.len();
    debug_assert_eq!(weight.len(), in_dim * out_dim);
    (0..out_dim)
        .map(|o| {
            let row = &weight[o * in_dim..(o + 1) * in_dim];
            let b = bias.map_or(0.0, |b| b[o]);
            b + super::dot(row, input)
        })
        .collect()
}

/// Accumulates `∂W += gy xᵀ`, `∂b += gy` and returns `Wᵀ gy`.
pub fn linear_backward(
    weight: &[f64],
    input: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: Option<&mut [f64]>,
) -> Vec<f64> {
    let in_dim = input.len();
    let mut grad_in = vec![0.0; in_dim];
    for (o, &gy) in grad_out.iter().enumerate() {
        if gy == 0.0 {
            continue;
        }
        let row = &weight[o * in_dim..(o + 1) * in_dim];
        let grow = &mut grad_weight[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            grow[i] += gy * input[i];
            grad_in[i] += gy * row[i];
        }
    }
    if let Some(gb) = grad_bias {
        for (b, g) in gb.iter_mut().zip(grad_out) {
            *b += g;
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_and_backward() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [0.5, -0.5];
        let x = [1.0, 0.0, -1.0];
        assert_eq!(linear_forward(&w, Some(&b), &x, 2), vec![-1.5, -2.5]);
        let mut gw = [0.0; 6];
        let mut gb = [0.0; 2];
        let gx = linear_backward(&w, &x, &[1.0, 2.0], &mut gw, Some(&mut gb));
        assert_eq!(gx, vec![9.0, 12.0, 15.0]);
        assert_eq!(gw, [1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
        assert_eq!(gb, [1.0, 2.0]);
    }
}

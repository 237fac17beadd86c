//! 2-D convolution over CHW buffers.

/// Geometry of one convolution layer with a square kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.in_height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.in_width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    /// Output indices `o` with `0 <= o*stride + k - padding < extent`.
    fn valid_range(&self, k: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let off = k as isize - p;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = ((extent as isize - 1 - off) / s + 1).clamp(0, out_extent as isize);
        (lo.min(hi) as usize, hi as usize)
    }
}

/// `out[oc] = bias[oc] + Σ_ic w[oc,ic] ⋆ in[ic]`; weight layout `[oc, ic, ky, kx]`.
pub fn conv2d_forward(g: &ConvGeometry, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    debug_assert_eq!(input.len(), g.in_len());
    debug_assert_eq!(weight.len(), g.weight_len());
    let (oh, ow) = (g.out_height(), g.out_width());
    let (ih, iw, k, s, p) = (g.in_height, g.in_width, g.kernel, g.stride, g.padding);
    let mut out = vec![0.0; g.out_len()];
    for oc in 0..g.out_channels {
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        plane.fill(bias[oc]);
        for ic in 0..g.in_channels {
            let inp = &input[ic * ih * iw..(ic + 1) * ih * iw];
            for ky in 0..k {
                let (oy0, oy1) = g.valid_range(ky, ih, oh);
                for kx in 0..k {
                    let wv = weight[((oc * g.in_channels + ic) * k + ky) * k + kx];
                    let (ox0, ox1) = g.valid_range(kx, iw, ow);
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        let orow = &mut plane[oy * ow..(oy + 1) * ow];
                        let irow = &inp[iy * iw..(iy + 1) * iw];
                        for ox in ox0..ox1 {
                            orow[ox] += wv * irow[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients, and returns the input gradient
/// when `want_input_grad` is set.
pub fn conv2d_backward(
    g: &ConvGeometry,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (ih, iw, k, s, p) = (g.in_height, g.in_width, g.kernel, g.stride, g.padding);
    let mut grad_in = want_input_grad.then(|| vec![0.0; g.in_len()]);
    for oc in 0..g.out_channels {
        let gplane = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
        grad_bias[oc] += gplane.iter().sum::<f64>();
        for ic in 0..g.in_channels {
            let inp = &input[ic * ih * iw..(ic + 1) * ih * iw];
            for ky in 0..k {
                let (oy0, oy1) = g.valid_range(ky, ih, oh);
                for kx in 0..k {
                    let widx = ((oc * g.in_channels + ic) * k + ky) * k + kx;
                    let wv = weight[widx];
                    let (ox0, ox1) = g.valid_range(kx, iw, ow);
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        let irow = &inp[iy * iw..(iy + 1) * iw];
                        for ox in ox0..ox1 {
                            acc += grow[ox] * irow[ox * s + kx - p];
                        }
                        if let Some(gi) = grad_in.as_mut() {
                            let girow = &mut gi[ic * ih * iw + iy * iw..ic * ih * iw + (iy + 1) * iw];
                            for ox in ox0..ox1 {
                                girow[ox * s + kx - p] += wv * grow[ox];
                            }
                        }
                    }
                    grad_weight[widx] += acc;
                }
            }
        }
    }
    grad_in
}

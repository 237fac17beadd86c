use crate::encoders::Feature;
use crate::error::{Error, Result};
use crate::nn::linear::{linear_backward, linear_forward};
use crate::nn::softmax;
use crate::rng::rng_from;
use crate::tensor::{ParamSet, Tensor};

/// `W^Q, W^K, W^V` stacked over heads as `[D, D]` (head `μ` owns output rows
/// `μ·D/h .. (μ+1)·D/h`) and the output map `W` as `[D, D]`. No biases.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub dim: usize,
    pub heads: usize,
    pub d_f: f64,
    pub params: ParamSet,
}

const WQ: usize = 0;
const WK: usize = 1;
const WV: usize = 2;
const WO: usize = 3;

impl AttentionParams {
    pub fn new(dim: usize, heads: usize, d_f: f64, seed: u64) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("{heads} heads do not divide dimension {dim}")));
        }
        let mut rng = rng_from(seed);
        let std = (1.0 / dim as f64).sqrt();
        let mut params = ParamSet::new();
        for name in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
            params.push(name, Tensor::randn(&[dim, dim], std, &mut rng));
        }
        Ok(AttentionParams { dim, heads, d_f, params })
    }

    /// All four maps set to the identity.
    pub fn identity(dim: usize, heads: usize, d_f: f64) -> Result<Self> {
        let mut a = Self::new(dim, heads, d_f, 0)?;
        for t in a.params.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..dim {
                t.data[i * dim + i] = 1.0;
            }
        }
        Ok(a)
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    query_in: Vec<f64>,
    keys_in: Vec<Vec<f64>>,
    q: Vec<f64>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// `weights[head][i]`.
    pub weights: Vec<Vec<f64>>,
    concat: Vec<f64>,
}

fn single_query(p: &AttentionParams, query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> (Vec<f64>, AttentionCache) {
    let d = p.dim;
    let dh = p.head_dim();
    let scale = p.d_f.sqrt();
    let q = linear_forward(&p.params.get(WQ).data, None, query, d);
    let k: Vec<Vec<f64>> = keys.iter().map(|x| linear_forward(&p.params.get(WK).data, None, x, d)).collect();
    let v: Vec<Vec<f64>> = values.iter().map(|x| linear_forward(&p.params.get(WV).data, None, x, d)).collect();
    let mut concat = vec![0.0; d];
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let r = h * dh..(h + 1) * dh;
        let logits: Vec<f64> = k
            .iter()
            .map(|ki| crate::nn::dot(&q[r.clone()], &ki[r.clone()]) / scale)
            .collect();
        let w = softmax(&logits);
        for (wi, vi) in w.iter().zip(&v) {
            for j in r.clone() {
                concat[j] += wi * vi[j];
            }
        }
        weights.push(w);
    }
    let out = linear_forward(&p.params.get(WO).data, None, &concat, d);
    let cache = AttentionCache {
        query_in: query.to_vec(),
        keys_in: keys.to_vec(),
        q,
        k,
        v,
        weights,
        concat,
    };
    (out, cache)
}

/// `W · concat_μ softmax((QW^Q_μ)(KW^K_μ)ᵀ/√d_f)(VW^V_μ)` for each query row.
pub fn multi_head_cross_attention(
    queries: &[Vec<f64>],
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
    params: &AttentionParams,
) -> Result<Vec<Vec<f64>>> {
    if keys.len() != values.len() {
        return Err(Error::Shape(format!("{} keys but {} values", keys.len(), values.len())));
    }
    if keys.is_empty() {
        return Err(Error::Shape("attention needs at least one key".into()));
    }
    let d = params.dim;
    if queries.iter().chain(keys).chain(values).any(|x| x.len() != d) {
        return Err(Error::Shape(format!("attention inputs must have dimension {d}")));
    }
    Ok(queries.iter().map(|q| single_query(params, q, keys, values).0).collect())
}

/// Fuses six view features with the semantic feature `g` as the single query
/// and the views as both keys and values.
pub fn fuse(g: &Feature, views: &[Feature], params: &AttentionParams) -> Result<(Vec<f64>, AttentionCache)> {
    if views.len() != 6 {
        return Err(Error::Shape(format!("fusion expects 6 view features, got {}", views.len())));
    }
    let d = params.dim;
    if g.dim() != d || views.iter().any(|f| f.dim() != d) {
        return Err(Error::Shape(format!("fusion inputs must have dimension {d}")));
    }
    let fs: Vec<Vec<f64>> = views.iter().map(|f| f.values.clone()).collect();
    Ok(single_query(params, &g.values, &fs, &fs))
}

/// Accumulates parameter gradients and returns `(∂/∂g, ∂/∂f_i)` for a
/// fusion whose output gradient is `grad_out`.
pub fn fuse_backward(
    params: &AttentionParams,
    cache: &AttentionCache,
    grad_out: &[f64],
    grads: &mut ParamSet,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = params.dim;
    let dh = params.head_dim();
    let scale = params.d_f.sqrt();
    let n = cache.k.len();
    let g_concat = linear_backward(&params.params.get(WO).data, &cache.concat, grad_out, &mut grads.get_mut(WO).data, None);
    let mut gq = vec![0.0; d];
    let mut gk = vec![vec![0.0; d]; n];
    let mut gv = vec![vec![0.0; d]; n];
    for h in 0..params.heads {
        let r = h * dh..(h + 1) * dh;
        let w = &cache.weights[h];
        let gw: Vec<f64> = cache.v.iter().map(|vi| crate::nn::dot(&g_concat[r.clone()], &vi[r.clone()])).collect();
        let mean: f64 = w.iter().zip(&gw).map(|(a, b)| a * b).sum();
        for i in 0..n {
            let gs = w[i] * (gw[i] - mean) / scale;
            for j in r.clone() {
                gv[i][j] += w[i] * g_concat[j];
                gq[j] += gs * cache.k[i][j];
                gk[i][j] += gs * cache.q[j];
            }
        }
    }
    let g_query = linear_backward(&params.params.get(WQ).data, &cache.query_in, &gq, &mut grads.get_mut(WQ).data, None);
    let mut g_inputs = Vec::with_capacity(n);
    for i in 0..n {
        let a = linear_backward(&params.params.get(WK).data, &cache.keys_in[i], &gk[i], &mut grads.get_mut(WK).data, None);
        let b = linear_backward(&params.params.get(WV).data, &cache.keys_in[i], &gv[i], &mut grads.get_mut(WV).data, None);
        g_inputs.push(a.iter().zip(&b).map(|(x, y)| x + y).collect());
    }
    (g_query, g_inputs)
}

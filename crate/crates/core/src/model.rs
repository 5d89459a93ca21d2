//! Temporal encoder and snippet scorer.
//!
//! The encoder runs three dilated 1-D convolutions (ReLU) and one single-head
//! softmax self-attention branch in parallel. Convolutions keep the sequence
//! length by repeating the edge tokens, so a temporally constant input gives a
//! constant response. Each branch emits `branch_dim`
//! channels; the concatenation is added back onto the input. An MLP with ReLU
//! hidden layers and a sigmoid output scores every enhanced row, and the row
//! norms are the feature magnitudes used for top-k selection.
//!
//! Parameters are stored as one flat `f64` vector split into named blocks (see
//! [`ParamLayout`]), which is also the unit the optimizer, the gradient checker
//! and the checkpoint format work with.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub branch_dim: usize,
    pub dilations: Vec<usize>,
    pub kernel_size: usize,
    pub scorer_hidden: Vec<usize>,
    pub seed: u64,
}

impl ModelConfig {
    /// Default layout for `input_dim`: `D/4` channels per branch, dilations
    /// `[1, 2, 4]`, kernel 3 and a `512 -> 32` scorer.
    pub fn new(input_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || input_dim % 4 != 0 {
            return Err(Error::Config(format!(
                "input_dim {input_dim} must be a positive multiple of 4 for the default branch width"
            )));
        }
        let cfg = Self {
            input_dim,
            branch_dim: input_dim / 4,
            dilations: vec![1, 2, 4],
            kernel_size: 3,
            scorer_hidden: vec![512, 32],
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.branch_dim == 0 {
            return Err(Error::Config("input_dim and branch_dim must be positive".into()));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::Config("dilations must be a non-empty list of positive integers".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel_size {} must be odd",
                self.kernel_size
            )));
        }
        let concat = (self.dilations.len() + 1) * self.branch_dim;
        if concat != self.input_dim {
            return Err(Error::Config(format!(
                "{} conv branches + 1 attention branch of width {} give {concat} channels, expected input_dim {}",
                self.dilations.len(),
                self.branch_dim,
                self.input_dim
            )));
        }
        if self.scorer_hidden.contains(&0) {
            return Err(Error::Config("scorer hidden widths must be positive".into()));
        }
        Ok(())
    }

    fn scorer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.scorer_hidden);
        dims.push(1);
        dims
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub fan_in: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named blocks of the flat parameter vector, in a fixed order derived only
/// from the config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub blocks: Vec<ParamBlock>,
    total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, fan_in: usize| {
            let len: usize = shape.iter().product();
            blocks.push(ParamBlock {
                name,
                shape,
                offset,
                fan_in,
            });
            offset += len;
        };
        let (d, b, k) = (cfg.input_dim, cfg.branch_dim, cfg.kernel_size);
        for j in 0..cfg.dilations.len() {
            push(format!("conv{j}.weight"), vec![b, d, k], d * k);
            push(format!("conv{j}.bias"), vec![b], d * k);
        }
        for name in ["attn.query", "attn.key", "attn.value"] {
            push(name.to_string(), vec![d, b], d);
        }
        let dims = cfg.scorer_dims();
        for (l, w) in dims.windows(2).enumerate() {
            push(format!("scorer.{l}.weight"), vec![w[0], w[1]], w[0]);
            push(format!("scorer.{l}.bias"), vec![w[1]], w[0]);
        }
        Self {
            blocks,
            total: offset,
        }
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    fn offset_of(&self, name: &str) -> usize {
        self.block(name)
            .unwrap_or_else(|| panic!("no parameter block {name}"))
            .offset
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let values = vec![0.0; layout.total_len()];
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if values.len() != p.values.len() {
            return Err(Error::Shape(format!(
                "{} parameter values for a layout of {}",
                values.len(),
                p.values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite parameter value".into()));
        }
        p.values = values;
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn block(&self, name: &str) -> &[f64] {
        let b = self
            .layout
            .block(name)
            .unwrap_or_else(|| panic!("no parameter block {name}"));
        &self.values[b.range()]
    }

    pub fn block_mut(&mut self, name: &str) -> &mut [f64] {
        let range = self
            .layout
            .block(name)
            .unwrap_or_else(|| panic!("no parameter block {name}"))
            .range();
        &mut self.values[range]
    }
}

/// Draws every parameter uniformly from `±1/sqrt(fan_in)` using a ChaCha8
/// stream seeded with `config.seed`, block by block in layout order.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for block in params.layout.blocks.clone() {
        let bound = 1.0 / (block.fan_in as f64).sqrt();
        for v in &mut params.values[block.range()] {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnippetOutput {
    pub enhanced: Matrix,
    pub scores: Vec<f64>,
    pub magnitudes: Vec<f64>,
}

impl SnippetOutput {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Matrix,
    conv_pre: Vec<Matrix>,
    query: Matrix,
    key: Matrix,
    value: Matrix,
    attn: Matrix,
    /// Pre-activation of each scorer layer; the last is the output logit.
    scorer_pre: Vec<Matrix>,
    /// Input to each scorer layer (after ReLU for hidden layers).
    scorer_in: Vec<Matrix>,
}

impl ForwardCache {
    /// Sign pattern of every ReLU pre-activation. Two parameter settings with
    /// the same pattern lie in the same smooth piece of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let hidden = &self.scorer_pre[..self.scorer_pre.len() - 1];
        self.conv_pre
            .iter()
            .chain(hidden)
            .flat_map(|m| m.as_slice().iter().map(|&v| v > 0.0))
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row-major `[rows, cols]` view of a flat block as a matrix.
fn block_matrix(values: &[f64], rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, values.to_vec())
}

pub fn forward(params: &ModelParams, features: &Matrix) -> Result<SnippetOutput> {
    forward_cached(params, features).map(|(out, _)| out)
}

pub fn forward_cached(params: &ModelParams, x: &Matrix) -> Result<(SnippetOutput, ForwardCache)> {
    let cfg = &params.config;
    let (t, d) = x.shape();
    if d != cfg.input_dim {
        return Err(Error::Shape(format!(
            "feature dim {d} does not match model input_dim {}",
            cfg.input_dim
        )));
    }
    if t == 0 {
        return Err(Error::Shape("empty feature sequence".into()));
    }
    let b = cfg.branch_dim;
    let k = cfg.kernel_size;
    let centre = (k / 2) as isize;
    let layout = &params.layout;
    let mut concat = Matrix::zeros(t, d);

    let mut conv_pre = Vec::with_capacity(cfg.dilations.len());
    for (j, &dil) in cfg.dilations.iter().enumerate() {
        let w = params.block(&format!("conv{j}.weight"));
        let bias = params.block(&format!("conv{j}.bias"));
        let mut pre = Matrix::zeros(t, b);
        for step in 0..t {
            let row = pre.row_mut(step);
            row.copy_from_slice(bias);
            for tap in 0..k {
                let src = step as isize + (tap as isize - centre) * dil as isize;
                let xin = x.row(src.clamp(0, t as isize - 1) as usize);
                for (o, acc) in row.iter_mut().enumerate() {
                    let base = o * d * k;
                    let mut s = 0.0;
                    for (i, &xi) in xin.iter().enumerate() {
                        s += w[base + i * k + tap] * xi;
                    }
                    *acc += s;
                }
            }
        }
        for step in 0..t {
            for o in 0..b {
                concat.set(step, j * b + o, pre.get(step, o).max(0.0));
            }
        }
        conv_pre.push(pre);
    }

    let project = |name: &str| x.matmul(&block_matrix(&params.values[layout.block(name).unwrap().range()], d, b));
    let query = project("attn.query");
    let key = project("attn.key");
    let value = project("attn.value");
    let scale = 1.0 / (b as f64).sqrt();
    let mut attn = query.matmul(&key.transpose()).map(|v| v * scale);
    for r in 0..t {
        let row = attn.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    let attended = attn.matmul(&value);
    let col0 = cfg.dilations.len() * b;
    for r in 0..t {
        for o in 0..b {
            concat.set(r, col0 + o, attended.get(r, o));
        }
    }

    let enhanced = x.zip_map(&concat, |a, z| a + z);

    let dims = cfg.scorer_dims();
    let layers = dims.len() - 1;
    let mut scorer_pre = Vec::with_capacity(layers);
    let mut scorer_in = Vec::with_capacity(layers);
    let mut h = enhanced.clone();
    for l in 0..layers {
        let w = block_matrix(
            params.block(&format!("scorer.{l}.weight")),
            dims[l],
            dims[l + 1],
        );
        let bias = params.block(&format!("scorer.{l}.bias"));
        let mut pre = h.matmul(&w);
        for r in 0..t {
            for (v, &bb) in pre.row_mut(r).iter_mut().zip(bias) {
                *v += bb;
            }
        }
        let next = if l + 1 < layers {
            pre.map(|v| v.max(0.0))
        } else {
            pre.clone()
        };
        scorer_in.push(h);
        scorer_pre.push(pre);
        h = next;
    }
    let scores: Vec<f64> = h.column(0).into_iter().map(sigmoid).collect();
    let magnitudes = enhanced.row_norms();

    let cache = ForwardCache {
        input: x.clone(),
        conv_pre,
        query,
        key,
        value,
        attn,
        scorer_pre,
        scorer_in,
    };
    Ok((
        SnippetOutput {
            enhanced,
            scores,
            magnitudes,
        },
        cache,
    ))
}

/// Accumulates `dL/dθ` into `grad` given the loss gradient with respect to
/// each snippet's score and magnitude.
pub fn backward(
    params: &ModelParams,
    output: &SnippetOutput,
    cache: &ForwardCache,
    d_scores: &[f64],
    d_magnitudes: &[f64],
    grad: &mut [f64],
) {
    let cfg = &params.config;
    let layout = &params.layout;
    let x = &cache.input;
    let (t, d) = x.shape();
    let b = cfg.branch_dim;
    let k = cfg.kernel_size;
    let centre = (k / 2) as isize;
    assert_eq!(grad.len(), layout.total_len());
    assert_eq!(d_scores.len(), t);
    assert_eq!(d_magnitudes.len(), t);

    // Scorer, from the output logit back to the enhanced features.
    let dims = cfg.scorer_dims();
    let layers = dims.len() - 1;
    let mut d_pre = Matrix::zeros(t, 1);
    for r in 0..t {
        let s = output.scores[r];
        d_pre.set(r, 0, d_scores[r] * s * (1.0 - s));
    }
    let mut d_enhanced = Matrix::zeros(t, d);
    for l in (0..layers).rev() {
        let input = &cache.scorer_in[l];
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let w_off = layout.offset_of(&format!("scorer.{l}.weight"));
        let b_off = layout.offset_of(&format!("scorer.{l}.bias"));
        for r in 0..t {
            let dp = d_pre.row(r);
            for (o, &g) in dp.iter().enumerate() {
                grad[b_off + o] += g;
            }
            for (i, &a) in input.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let gw = &mut grad[w_off + i * n_out..w_off + (i + 1) * n_out];
                for (gv, &g) in gw.iter_mut().zip(dp) {
                    *gv += a * g;
                }
            }
        }
        let w = &params.values[w_off..w_off + n_in * n_out];
        let mut d_in = Matrix::zeros(t, n_in);
        for r in 0..t {
            let dp = d_pre.row(r);
            let di = d_in.row_mut(r);
            for (i, v) in di.iter_mut().enumerate() {
                let wr = &w[i * n_out..(i + 1) * n_out];
                *v = wr.iter().zip(dp).map(|(a, b)| a * b).sum();
            }
        }
        if l == 0 {
            d_enhanced = d_in;
        } else {
            let prev_pre = &cache.scorer_pre[l - 1];
            d_pre = d_in.zip_map(prev_pre, |g, p| if p > 0.0 { g } else { 0.0 });
        }
    }

    // Magnitude term.
    for r in 0..t {
        let m = output.magnitudes[r];
        if m > 0.0 && d_magnitudes[r] != 0.0 {
            let coef = d_magnitudes[r] / m;
            for (g, &e) in d_enhanced.row_mut(r).iter_mut().zip(output.enhanced.row(r)) {
                *g += coef * e;
            }
        }
    }

    // The residual passes d_enhanced straight to the concatenated branches.
    for (j, &dil) in cfg.dilations.iter().enumerate() {
        let w_off = layout.offset_of(&format!("conv{j}.weight"));
        let b_off = layout.offset_of(&format!("conv{j}.bias"));
        let pre = &cache.conv_pre[j];
        for step in 0..t {
            for o in 0..b {
                if pre.get(step, o) <= 0.0 {
                    continue;
                }
                let g = d_enhanced.get(step, j * b + o);
                if g == 0.0 {
                    continue;
                }
                grad[b_off + o] += g;
                for tap in 0..k {
                    let src = step as isize + (tap as isize - centre) * dil as isize;
                    let base = w_off + o * d * k;
                    for (i, &xi) in x.row(src.clamp(0, t as isize - 1) as usize).iter().enumerate() {
                        grad[base + i * k + tap] += g * xi;
                    }
                }
            }
        }
    }

    let col0 = cfg.dilations.len() * b;
    let mut d_att = Matrix::zeros(t, b);
    for r in 0..t {
        for o in 0..b {
            d_att.set(r, o, d_enhanced.get(r, col0 + o));
        }
    }
    let d_value = cache.attn.transpose().matmul(&d_att);
    let d_weights = d_att.matmul(&cache.value.transpose());
    let mut d_logits = Matrix::zeros(t, t);
    for r in 0..t {
        let a = cache.attn.row(r);
        let da = d_weights.row(r);
        let dot: f64 = a.iter().zip(da).map(|(p, q)| p * q).sum();
        for c in 0..t {
            d_logits.set(r, c, a[c] * (da[c] - dot));
        }
    }
    let scale = 1.0 / (b as f64).sqrt();
    let d_logits = d_logits.map(|v| v * scale);
    let d_query = d_logits.matmul(&cache.key);
    let d_key = d_logits.transpose().matmul(&cache.query);
    let xt = x.transpose();
    for (name, dm) in [
        ("attn.query", d_query),
        ("attn.key", d_key),
        ("attn.value", d_value),
    ] {
        let off = layout.offset_of(name);
        let gw = xt.matmul(&dm);
        for (g, v) in grad[off..off + d * b].iter_mut().zip(gw.as_slice()) {
            *g += v;
        }
    }
}

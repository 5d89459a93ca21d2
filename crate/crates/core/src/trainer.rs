//! Top-k feature-magnitude multiple-instance learning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    decode_feature_file, snippetize, validate_manifest, Manifest, ManifestEntry, Split, VideoLabel,
};
use crate::ftb::{apply_ftb_with, FtbMode, FtbOptions, TransformedFeature};
use crate::model::{backward, forward_cached, init_model, ModelConfig, ModelParams, SnippetOutput};

/// Probabilities entering the BCE are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// SGD with heavy-ball momentum 0.9. Deterministic.
    Momentum,
    /// Adam (0.9, 0.999, 1e-8). Not covered by the determinism tests.
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub margin: f64,
    pub alpha_mag: f64,
    pub beta_smooth: f64,
    pub gamma_sparse: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub snippet_len: usize,
    pub seed: u64,
    pub ftb_mode: FtbMode,
    #[serde(default)]
    pub ftb_options: FtbOptions,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 3,
            margin: 100.0,
            alpha_mag: 1e-4,
            beta_smooth: 8e-4,
            gamma_sparse: 8e-4,
            learning_rate: 1e-3,
            epochs: 50,
            snippet_len: 16,
            seed: 0,
            ftb_mode: FtbMode::M3,
            ftb_options: FtbOptions::default(),
            optimizer: Optimizer::Momentum,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.k < 1 {
            return err("k must be at least 1".into());
        }
        if !(self.margin > 0.0) {
            return err(format!("margin {} must be positive", self.margin));
        }
        for (name, w) in [
            ("alpha_mag", self.alpha_mag),
            ("beta_smooth", self.beta_smooth),
            ("gamma_sparse", self.gamma_sparse),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return err(format!("{name} {w} must be a nonnegative number"));
            }
        }
        if !(self.learning_rate > 0.0) {
            return err(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.epochs < 1 {
            return err("epochs must be at least 1".into());
        }
        if self.snippet_len < 1 {
            return err("snippet_len must be at least 1".into());
        }
        Ok(())
    }
}

/// One video as the trainer sees it: weak label plus transformed snippets.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub video_id: String,
    pub label: VideoLabel,
    pub snippets: TransformedFeature,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopK {
    /// Ascending.
    pub indices: Vec<usize>,
    pub mean: f64,
}

/// Indices of the `min(k, len)` largest magnitudes, ties going to the lower
/// index.
pub fn topk_select(magnitudes: &[f64], k: usize) -> Result<TopK> {
    if k < 1 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if magnitudes.is_empty() {
        return Err(Error::Argument("cannot select from an empty bag".into()));
    }
    let mut order: Vec<usize> = (0..magnitudes.len()).collect();
    order.sort_by(|&a, &b| magnitudes[b].total_cmp(&magnitudes[a]).then(a.cmp(&b)));
    order.truncate(k.min(magnitudes.len()));
    let mean = order.iter().map(|&i| magnitudes[i]).sum::<f64>() / order.len() as f64;
    order.sort_unstable();
    Ok(TopK {
        indices: order,
        mean,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub cls: f64,
    pub mag: f64,
    pub smooth: f64,
    pub sparse: f64,
}

/// `dL/d(scores)` and `dL/d(magnitudes)` for both bags of a pair.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputGrads {
    pub abn_scores: Vec<f64>,
    pub abn_magnitudes: Vec<f64>,
    pub norm_scores: Vec<f64>,
    pub norm_magnitudes: Vec<f64>,
}

fn clamp_prob(p: f64) -> (f64, bool) {
    if p < PROB_EPS {
        (PROB_EPS, true)
    } else if p > 1.0 - PROB_EPS {
        (1.0 - PROB_EPS, true)
    } else {
        (p, false)
    }
}

pub fn mil_loss(abn: &SnippetOutput, norm: &SnippetOutput, cfg: &TrainConfig) -> Result<LossTerms> {
    mil_loss_with_grads(abn, norm, cfg).map(|(terms, _)| terms)
}

/// Composite loss for one (abnormal, normal) pair:
///
/// * `cls`: mean BCE of the top-k mean score of each bag (abnormal toward 1,
///   normal toward 0), selecting snippets by magnitude;
/// * `mag`: hinge `max(0, margin - mu_abn + mu_norm)` on top-k magnitude means;
/// * `smooth`: sum of squared consecutive score differences, abnormal bag;
/// * `sparse`: sum of abnormal scores.
///
/// `total = cls + alpha*mag + beta*smooth + gamma*sparse`.
pub fn mil_loss_with_grads(
    abn: &SnippetOutput,
    norm: &SnippetOutput,
    cfg: &TrainConfig,
) -> Result<(LossTerms, OutputGrads)> {
    let top_a = topk_select(&abn.magnitudes, cfg.k)?;
    let top_n = topk_select(&norm.magnitudes, cfg.k)?;
    let mut g = OutputGrads {
        abn_scores: vec![0.0; abn.len()],
        abn_magnitudes: vec![0.0; abn.len()],
        norm_scores: vec![0.0; norm.len()],
        norm_magnitudes: vec![0.0; norm.len()],
    };

    let hinge = cfg.margin - top_a.mean + top_n.mean;
    let mag = hinge.max(0.0);
    if hinge > 0.0 {
        let ga = -cfg.alpha_mag / top_a.indices.len() as f64;
        let gn = cfg.alpha_mag / top_n.indices.len() as f64;
        for &i in &top_a.indices {
            g.abn_magnitudes[i] += ga;
        }
        for &i in &top_n.indices {
            g.norm_magnitudes[i] += gn;
        }
    }

    let mean_score = |out: &SnippetOutput, top: &TopK| {
        top.indices.iter().map(|&i| out.scores[i]).sum::<f64>() / top.indices.len() as f64
    };
    let (pa, pa_clamped) = clamp_prob(mean_score(abn, &top_a));
    let (pn, pn_clamped) = clamp_prob(mean_score(norm, &top_n));
    let cls = 0.5 * (-pa.ln() - (1.0 - pn).ln());
    if !pa_clamped {
        let d = -0.5 / pa / top_a.indices.len() as f64;
        for &i in &top_a.indices {
            g.abn_scores[i] += d;
        }
    }
    if !pn_clamped {
        let d = 0.5 / (1.0 - pn) / top_n.indices.len() as f64;
        for &i in &top_n.indices {
            g.norm_scores[i] += d;
        }
    }

    let s = &abn.scores;
    let mut smooth = 0.0;
    for t in 0..s.len().saturating_sub(1) {
        let diff = s[t] - s[t + 1];
        smooth += diff * diff;
        g.abn_scores[t] += cfg.beta_smooth * 2.0 * diff;
        g.abn_scores[t + 1] -= cfg.beta_smooth * 2.0 * diff;
    }
    let sparse: f64 = s.iter().sum();
    for v in &mut g.abn_scores {
        *v += cfg.gamma_sparse;
    }

    let total = cls + cfg.alpha_mag * mag + cfg.beta_smooth * smooth + cfg.gamma_sparse * sparse;
    Ok((
        LossTerms {
            total,
            cls,
            mag,
            smooth,
            sparse,
        },
        g,
    ))
}

/// Loss of one pair and its gradient with respect to every parameter.
pub fn pair_loss_and_grad(
    params: &ModelParams,
    abn: &Bag,
    norm: &Bag,
    cfg: &TrainConfig,
) -> Result<(LossTerms, Vec<f64>)> {
    let (out_a, cache_a) = forward_cached(params, &abn.snippets.data)?;
    let (out_n, cache_n) = forward_cached(params, &norm.snippets.data)?;
    let (terms, g) = mil_loss_with_grads(&out_a, &out_n, cfg)?;
    let mut grad = vec![0.0; params.values().len()];
    backward(params, &out_a, &cache_a, &g.abn_scores, &g.abn_magnitudes, &mut grad);
    backward(params, &out_n, &cache_n, &g.norm_scores, &g.norm_magnitudes, &mut grad);
    Ok((terms, grad))
}

pub fn pair_loss(params: &ModelParams, abn: &Bag, norm: &Bag, cfg: &TrainConfig) -> Result<LossTerms> {
    pair_loss_with_pattern(params, abn, norm, cfg).map(|(terms, _)| terms)
}

/// Loss plus a fingerprint of every non-smooth choice made while computing
/// it: ReLU signs, top-k sets, hinge activity and probability clamping.
fn pair_loss_with_pattern(
    params: &ModelParams,
    abn: &Bag,
    norm: &Bag,
    cfg: &TrainConfig,
) -> Result<(LossTerms, Vec<usize>)> {
    let (out_a, cache_a) = forward_cached(params, &abn.snippets.data)?;
    let (out_n, cache_n) = forward_cached(params, &norm.snippets.data)?;
    let terms = mil_loss(&out_a, &out_n, cfg)?;
    let mut pattern: Vec<usize> = cache_a
        .relu_pattern()
        .into_iter()
        .chain(cache_n.relu_pattern())
        .map(usize::from)
        .collect();
    let top_a = topk_select(&out_a.magnitudes, cfg.k)?;
    let top_n = topk_select(&out_n.magnitudes, cfg.k)?;
    pattern.extend(&top_a.indices);
    pattern.extend(&top_n.indices);
    pattern.push(usize::from(cfg.margin - top_a.mean + top_n.mean > 0.0));
    for (out, top) in [(&out_a, &top_a), (&out_n, &top_n)] {
        let p = top.indices.iter().map(|&i| out.scores[i]).sum::<f64>() / top.indices.len() as f64;
        pattern.push(usize::from(p < PROB_EPS) + 2 * usize::from(p > 1.0 - PROB_EPS));
    }
    Ok((terms, pattern))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheckReport {
    pub max_relative_error: f64,
    /// `(block name, max relative error within the block)` in layout order.
    pub per_block: Vec<(String, f64)>,
    /// Elements compared against finite differences.
    pub checked: usize,
    /// Elements whose `+eps` or `-eps` probe changed a ReLU sign, a top-k set,
    /// hinge activity or clamping, so that the central difference spans a kink.
    pub skipped_at_kinks: usize,
}

/// Compares the analytic gradient of the total loss with central finite
/// differences for every parameter element. Relative error per element is
/// `|ga - gf| / max(|ga|, |gf|, 1e-8)`. Elements whose probes leave the
/// smooth piece containing `params` are counted in `skipped_at_kinks`
/// instead, since no finite difference approximates a one-sided derivative
/// there.
pub fn gradient_check(
    params: &ModelParams,
    abn: &Bag,
    norm: &Bag,
    cfg: &TrainConfig,
    eps: f64,
) -> Result<GradientCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::Argument("eps must be positive".into()));
    }
    let (_, analytic) = pair_loss_and_grad(params, abn, norm, cfg)?;
    let (_, base_pattern) = pair_loss_with_pattern(params, abn, norm, cfg)?;
    let mut probe = params.clone();
    let mut per_block = Vec::new();
    let mut max_rel = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    for block in params.layout().blocks.clone() {
        let mut block_max = 0.0f64;
        for i in block.range() {
            let orig = probe.values()[i];
            probe.values_mut()[i] = orig + eps;
            let (up, up_pattern) = pair_loss_with_pattern(&probe, abn, norm, cfg)?;
            probe.values_mut()[i] = orig - eps;
            let (down, down_pattern) = pair_loss_with_pattern(&probe, abn, norm, cfg)?;
            probe.values_mut()[i] = orig;
            if up_pattern != base_pattern || down_pattern != base_pattern {
                skipped += 1;
                continue;
            }
            checked += 1;
            let numeric = (up.total - down.total) / (2.0 * eps);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            block_max = block_max.max(rel);
        }
        max_rel = max_rel.max(block_max);
        per_block.push((block.name.clone(), block_max));
    }
    Ok(GradientCheckReport {
        max_relative_error: max_rel,
        per_block,
        checked,
        skipped_at_kinks: skipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_cls: f64,
    pub mean_mag: f64,
    pub mean_smooth: f64,
    pub mean_sparse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl OptimizerState {
    const MOMENTUM: f64 = 0.9;
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const ADAM_EPS: f64 = 1e-8;

    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        Self {
            kind,
            lr,
            m: vec![0.0; n],
            v: match kind {
                Optimizer::Adam => vec![0.0; n],
                Optimizer::Momentum => Vec::new(),
            },
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        match self.kind {
            Optimizer::Momentum => {
                for ((p, m), &g) in params.iter_mut().zip(&mut self.m).zip(grad) {
                    *m = Self::MOMENTUM * *m + g;
                    *p -= self.lr * *m;
                }
            }
            Optimizer::Adam => {
                let c1 = 1.0 - Self::BETA1.powi(self.step);
                let c2 = 1.0 - Self::BETA2.powi(self.step);
                for (((p, m), v), &g) in params
                    .iter_mut()
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                    .zip(grad)
                {
                    *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                    *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::ADAM_EPS);
                }
            }
        }
    }
}

/// Decodes, transforms and pools one video's features.
pub fn load_bag(path: &Path, entry: &ManifestEntry, cfg: &TrainConfig) -> Result<Bag> {
    let frames = decode_feature_file(path)?;
    let transformed = apply_ftb_with(&frames, cfg.ftb_mode, &cfg.ftb_options);
    let mode = transformed.mode;
    let snippets = snippetize(
        &crate::features::FeatureSequence::new(transformed.data)?,
        cfg.snippet_len,
    )?;
    Ok(Bag {
        video_id: entry.video_id.clone(),
        label: entry.label,
        snippets: TransformedFeature {
            data: snippets.into_matrix(),
            mode,
        },
    })
}

/// Trains on the training split of `manifest`. Refuses to run when the
/// manifest fails validation.
pub fn train(manifest: &Manifest, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let report = validate_manifest(&manifest.entries);
    if !report.is_valid() {
        return Err(Error::Validation(report));
    }
    let bags = manifest
        .split(Split::Train)
        .map(|e| load_bag(&manifest.resolve(e), e, cfg))
        .collect::<Result<Vec<_>>>()?;
    train_on_bags(&bags, model_cfg, cfg)
}

/// Each epoch shuffles the abnormal and normal bags independently and walks
/// `max(n_abn, n_norm)` pairs, cycling the shorter list. One pair per step.
pub fn train_on_bags(bags: &[Bag], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    let (abn, norm): (Vec<&Bag>, Vec<&Bag>) =
        bags.iter().partition(|b| b.label == VideoLabel::Anomaly);
    if abn.is_empty() || norm.is_empty() {
        return Err(Error::Config(
            "training needs at least one abnormal and one normal bag".into(),
        ));
    }
    let mut params = init_model(model_cfg)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, params.values().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut abn_order: Vec<usize> = (0..abn.len()).collect();
    let mut norm_order: Vec<usize> = (0..norm.len()).collect();
    let steps = abn.len().max(norm.len());
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        abn_order.shuffle(&mut rng);
        norm_order.shuffle(&mut rng);
        let mut sum = LossTerms::default();
        for step in 0..steps {
            let a = abn[abn_order[step % abn.len()]];
            let n = norm[norm_order[step % norm.len()]];
            let (terms, grad) = pair_loss_and_grad(&params, a, n, cfg)?;
            opt.apply(params.values_mut(), &grad);
            sum.total += terms.total;
            sum.cls += terms.cls;
            sum.mag += terms.mag;
            sum.smooth += terms.smooth;
            sum.sparse += terms.sparse;
        }
        let n = steps as f64;
        history.push(EpochRecord {
            epoch,
            mean_total: sum.total / n,
            mean_cls: sum.cls / n,
            mean_mag: sum.mag / n,
            mean_smooth: sum.smooth / n,
            mean_sparse: sum.sparse / n,
        });
    }
    if params.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(
            "training diverged to non-finite parameters; lower the learning rate".into(),
        ));
    }
    Ok(TrainOutcome { params, history })
}

/// Per-snippet anomaly scores for one video.
pub fn score_bag(params: &ModelParams, bag: &Bag) -> Result<Vec<f64>> {
    Ok(crate::model::forward(params, &bag.snippets.data)?.scores)
}

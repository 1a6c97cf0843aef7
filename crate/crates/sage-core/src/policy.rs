//! A linear-softmax categorical policy over answer options with a
//! Bernoulli format head, analytic gradients, and an exact KL to a frozen
//! reference copy.
//!
//! The policy scores option k as `w . feature(k)` and samples the answer
//! from the softmax; `format_logit` governs the probability of emitting a
//! well-formed completion. Both gradients are closed-form and checked
//! against central finite differences in the tests.

use crate::error::{Result, SageError};
use crate::features::{
    option_features, FEATURE_DIM, IDX_ALIGN, IDX_ALIGN_NEG, IDX_POSITION_0, IDX_SIDE_ALIGN_H,
    IDX_SIDE_ALIGN_V,
};
use crate::scene::{AnswerIndex, Query, Scene};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Option-scoring weights, one per feature dimension.
    pub w: Vec<f64>,
    /// Logit of the probability that a completion is well-formed.
    pub format_logit: f64,
}

impl PolicyParams {
    pub fn zeros() -> Self {
        Self {
            w: vec![0.0; FEATURE_DIM],
            format_logit: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.format_logit.is_finite() && self.w.iter().all(|x| x.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.len() != FEATURE_DIM {
            return Err(SageError::Checkpoint(format!(
                "weight vector has dimension {}, expected {FEATURE_DIM}",
                self.w.len()
            )));
        }
        if !self.is_finite() {
            return Err(SageError::NonFinite("policy parameters".into()));
        }
        Ok(())
    }
}

/// One sampled completion: the chosen answer, whether the output was
/// well-formed, and the joint log-probability of both under the
/// generating parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub answer: AnswerIndex,
    pub formatted: bool,
    pub log_prob: f64,
}

/// Gradient with respect to (w, format_logit).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w: Vec<f64>,
    pub format_logit: f64,
}

impl Gradient {
    pub fn zeros() -> Self {
        Self {
            w: vec![0.0; FEATURE_DIM],
            format_logit: 0.0,
        }
    }

    pub fn scaled_add(&mut self, other: &Gradient, factor: f64) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += factor * b;
        }
        self.format_logit += factor * other.format_logit;
    }

    pub fn is_finite(&self) -> bool {
        self.format_logit.is_finite() && self.w.iter().all(|x| x.is_finite())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn scores(params: &PolicyParams, feats: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(feats.len());
    for row in feats {
        let s: f64 = row.iter().zip(&params.w).map(|(f, w)| f * w).sum();
        if !s.is_finite() {
            return Err(SageError::NonFinite("option score".into()));
        }
        out.push(s);
    }
    Ok(out)
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// The categorical answer distribution over the query's options.
pub fn answer_distribution(
    params: &PolicyParams,
    scene: &Scene,
    query: &Query,
) -> Result<Vec<f64>> {
    let feats = option_features(scene, query)?;
    let probs = softmax(&scores(params, &feats)?);
    debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    Ok(probs)
}

/// Joint log-probability of a completion's answer and format flag.
pub fn log_prob(
    params: &PolicyParams,
    scene: &Scene,
    query: &Query,
    completion: &Completion,
) -> Result<f64> {
    let probs = answer_distribution(params, scene, query)?;
    completion.answer.check(query)?;
    let p_fmt = sigmoid(params.format_logit);
    let fmt_term = if completion.formatted {
        p_fmt.ln()
    } else {
        (1.0 - p_fmt).ln()
    };
    Ok(probs[completion.answer.0].ln() + fmt_term)
}

/// Draw `n` completions. Deterministic per rng state; the answer draw
/// precedes the format draw for each completion.
pub fn sample_completions<R: Rng>(
    params: &PolicyParams,
    scene: &Scene,
    query: &Query,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Completion>> {
    if n == 0 {
        return Err(SageError::InvalidArg("n must be >= 1".into()));
    }
    let probs = answer_distribution(params, scene, query)?;
    let p_fmt = sigmoid(params.format_logit);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut idx = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                idx = i;
                break;
            }
        }
        let formatted = rng.gen_bool(p_fmt);
        let fmt_term = if formatted {
            p_fmt.ln()
        } else {
            (1.0 - p_fmt).ln()
        };
        out.push(Completion {
            answer: AnswerIndex(idx),
            formatted,
            log_prob: probs[idx].ln() + fmt_term,
        });
    }
    Ok(out)
}

/// Argmax answer; ties break to the lowest index.
pub fn greedy_answer(params: &PolicyParams, scene: &Scene, query: &Query) -> Result<AnswerIndex> {
    let probs = answer_distribution(params, scene, query)?;
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    Ok(AnswerIndex(best))
}

/// Analytic gradient of `log_prob` with respect to (w, format_logit):
/// `feature(answer) - sum_k p_k feature(k)` and `formatted - sigmoid(b)`.
pub fn grad_log_prob(
    params: &PolicyParams,
    scene: &Scene,
    query: &Query,
    completion: &Completion,
) -> Result<Gradient> {
    completion.answer.check(query)?;
    let feats = option_features(scene, query)?;
    let probs = softmax(&scores(params, &feats)?);
    let mut gw = feats[completion.answer.0].clone();
    for (k, row) in feats.iter().enumerate() {
        for (g, f) in gw.iter_mut().zip(row) {
            *g -= probs[k] * f;
        }
    }
    let fmt = if completion.formatted { 1.0 } else { 0.0 };
    Ok(Gradient {
        w: gw,
        format_logit: fmt - sigmoid(params.format_logit),
    })
}

/// Exact KL divergence KL(params || ref_params) on one input: categorical
/// KL over the options plus Bernoulli KL over the format flag, with the
/// analytic gradient with respect to the current parameters.
pub fn kl_to_reference(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    scene: &Scene,
    query: &Query,
) -> Result<(f64, Gradient)> {
    let feats = option_features(scene, query)?;
    let p = softmax(&scores(params, &feats)?);
    let r = softmax(&scores(ref_params, &feats)?);

    let mut value = 0.0;
    for (pi, ri) in p.iter().zip(&r) {
        // p ln p -> 0 as p -> 0; skip fully underflowed entries
        if *pi > 0.0 {
            value += pi * (pi.ln() - ri.ln());
        }
    }

    // mean feature under p
    let mut mean = vec![0.0; FEATURE_DIM];
    for (k, row) in feats.iter().enumerate() {
        for (m, f) in mean.iter_mut().zip(row) {
            *m += p[k] * f;
        }
    }
    let mut gw = vec![0.0; FEATURE_DIM];
    for (k, row) in feats.iter().enumerate() {
        if p[k] == 0.0 {
            continue;
        }
        let coeff = p[k] * (p[k].ln() - r[k].ln());
        for ((g, f), m) in gw.iter_mut().zip(row).zip(&mean) {
            *g += coeff * (f - m);
        }
    }

    let s = sigmoid(params.format_logit);
    let sr = sigmoid(ref_params.format_logit);
    let bern = s * (s.ln() - sr.ln()) + (1.0 - s) * ((1.0 - s).ln() - (1.0 - sr).ln());
    let gb = s * (1.0 - s) * ((s.ln() - sr.ln()) - ((1.0 - s).ln() - (1.0 - sr).ln()));

    let total = value + bern;
    if !total.is_finite() {
        return Err(SageError::NonFinite("kl value".into()));
    }
    Ok((
        total,
        Gradient {
            w: gw,
            format_logit: gb,
        },
    ))
}

/// Initialization that reproduces shortcut-driven answering: large weight
/// on the option-position-0 indicator, a smaller push on the subject-side
/// alignment features, and small random content weights. With the
/// corpus's answer-position skew this scores high accuracy on untouched
/// inputs while failing flip and permutation consistency.
pub fn biased_init<R: Rng>(rng: &mut R, bias_strength: f64) -> Result<PolicyParams> {
    if !(bias_strength >= 0.0) || !bias_strength.is_finite() {
        return Err(SageError::InvalidArg(format!(
            "bias_strength must be >= 0, got {bias_strength}"
        )));
    }
    let mut w: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.gen_range(-0.01..0.01)).collect();
    w[IDX_POSITION_0] += bias_strength;
    w[IDX_SIDE_ALIGN_H] += bias_strength / 3.0;
    w[IDX_SIDE_ALIGN_V] += bias_strength / 3.0;
    Ok(PolicyParams {
        w,
        format_logit: 0.0,
    })
}

/// Parameters that answer every question correctly: weight on the pooled
/// geometry-alignment feature and the inverting weight on its negation
/// interaction.
pub fn oracle_mimic(scale: f64) -> PolicyParams {
    let mut w = vec![0.0; FEATURE_DIM];
    w[IDX_ALIGN] = scale;
    w[IDX_ALIGN_NEG] = -2.0 * scale;
    PolicyParams {
        w,
        format_logit: 4.0,
    }
}

/// Checkpoint schema for the policy alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub schema_version: u32,
    pub feature_dim: usize,
    pub w: Vec<f64>,
    pub b: f64,
}

impl PolicyCheckpoint {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn from_params(params: &PolicyParams) -> Self {
        Self {
            schema_version: Self::SCHEMA_VERSION,
            feature_dim: params.w.len(),
            w: params.w.clone(),
            b: params.format_logit,
        }
    }

    pub fn into_params(self) -> Result<PolicyParams> {
        if self.schema_version != Self::SCHEMA_VERSION {
            return Err(SageError::Checkpoint(format!(
                "unsupported schema version {}",
                self.schema_version
            )));
        }
        if self.feature_dim != self.w.len() {
            return Err(SageError::Checkpoint(
                "feature_dim does not match weight length".into(),
            ));
        }
        let params = PolicyParams {
            w: self.w,
            format_logit: self.b,
        };
        params.validate()?;
        Ok(params)
    }
}

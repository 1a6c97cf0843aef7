//! Reward components, group-relative advantages, and the policy update.
//!
//! A completion's reward is the sum of a 0/1 accuracy term, a 0/0.5
//! format term and a consistency term bounded by the consistency weight.
//! Advantages standardize the group's rewards by the population standard
//! deviation; a zero-variance group yields all-zero advantages and the
//! policy-gradient term is skipped for it.

use crate::duality::DualityOp;
use crate::error::{Result, SageError};
use crate::policy::{grad_log_prob, kl_to_reference, Completion, Gradient, PolicyParams};
use crate::scene::{AnswerIndex, Query, Scene};
use serde::{Deserialize, Serialize};

pub const FORMAT_REWARD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_fmt: f64,
    pub r_cons: f64,
    pub total: f64,
}

pub fn accuracy_reward(completion: &Completion, truth: AnswerIndex) -> f64 {
    if completion.answer == truth {
        1.0
    } else {
        0.0
    }
}

pub fn format_reward(completion: &Completion) -> f64 {
    if completion.formatted {
        FORMAT_REWARD
    } else {
        0.0
    }
}

/// Consistency term for one primary completion: `weight` times the
/// fraction of dual completions whose answer equals the mapped primary
/// answer.
pub fn consistency_reward(
    op: &DualityOp,
    primary: &Completion,
    duals: &[Completion],
    original_query: &Query,
    dual_query: &Query,
    weight: f64,
) -> Result<f64> {
    if duals.is_empty() {
        return Err(SageError::InvalidArg(
            "consistency reward needs at least one dual completion".into(),
        ));
    }
    if weight < 0.0 || !weight.is_finite() {
        return Err(SageError::InvalidArg(format!(
            "consistency weight must be >= 0, got {weight}"
        )));
    }
    let mapped = op.map_answer(original_query, dual_query, primary.answer)?;
    let matches = duals.iter().filter(|d| d.answer == mapped).count();
    Ok(weight * matches as f64 / duals.len() as f64)
}

pub fn total_reward(completion: &Completion, truth: AnswerIndex, r_cons: f64) -> RewardBreakdown {
    let r_acc = accuracy_reward(completion, truth);
    let r_fmt = format_reward(completion);
    RewardBreakdown {
        r_acc,
        r_fmt,
        r_cons,
        total: r_acc + r_fmt + r_cons,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageGroup {
    pub rewards: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub advantages: Vec<f64>,
    /// True when the group's rewards all coincide (population std zero);
    /// the advantages are then all zero and carry no gradient.
    pub degenerate: bool,
}

/// Standardize rewards by the group mean and population standard
/// deviation.
pub fn group_advantages(rewards: &[f64]) -> Result<AdvantageGroup> {
    if rewards.len() < 2 {
        return Err(SageError::InvalidArg(format!(
            "a reward group needs at least 2 members, got {}",
            rewards.len()
        )));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    // zero variance means all rewards coincide; testing equality directly
    // keeps float summation error from producing a tiny spurious std
    let degenerate = rewards.iter().all(|r| *r == rewards[0]);
    let std = if degenerate {
        0.0
    } else {
        (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt()
    };
    let advantages = if degenerate {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| (r - mean) / std).collect()
    };
    Ok(AdvantageGroup {
        rewards: rewards.to_vec(),
        mean,
        std,
        advantages,
        degenerate,
    })
}

/// One aligned batch of completions with their advantages, all generated
/// from the same (scene, query) input.
pub struct GradBatch<'a> {
    pub scene: &'a Scene,
    pub query: &'a Query,
    pub completions: &'a [Completion],
    pub advantages: &'a [f64],
}

/// One ascent step on the group objective:
/// `theta <- theta + lr * [(1/G) sum_i A_i grad log pi(o_i) - beta * grad KL]`.
///
/// The KL term is computed exactly on the primary input. A non-finite
/// gradient aborts the step and leaves the parameters untouched.
pub fn grpo_update(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    scene: &Scene,
    query: &Query,
    completions: &[Completion],
    advantages: &AdvantageGroup,
    beta: f64,
    lr: f64,
) -> Result<PolicyParams> {
    let batch = GradBatch {
        scene,
        query,
        completions,
        advantages: &advantages.advantages,
    };
    grpo_update_batches(params, ref_params, &[batch], advantages.degenerate, beta, lr)
}

/// Multi-batch variant used when dual completions also carry gradients.
/// The first batch is the primary input; the KL penalty is evaluated on
/// it. The 1/G factor uses the total completion count across batches.
pub fn grpo_update_batches(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    batches: &[GradBatch<'_>],
    degenerate: bool,
    beta: f64,
    lr: f64,
) -> Result<PolicyParams> {
    if beta < 0.0 || !beta.is_finite() {
        return Err(SageError::InvalidArg(format!("beta must be >= 0, got {beta}")));
    }
    if lr <= 0.0 || !lr.is_finite() {
        return Err(SageError::InvalidArg(format!("lr must be > 0, got {lr}")));
    }
    let primary = batches
        .first()
        .ok_or_else(|| SageError::InvalidArg("no batches".into()))?;
    let total: usize = batches.iter().map(|b| b.completions.len()).sum();
    if total == 0 {
        return Err(SageError::InvalidArg("empty completion group".into()));
    }
    for b in batches {
        if b.completions.len() != b.advantages.len() {
            return Err(SageError::InvalidArg(
                "completions and advantages are misaligned".into(),
            ));
        }
    }

    let mut grad = Gradient::zeros();
    if !degenerate {
        let inv_g = 1.0 / total as f64;
        for b in batches {
            for (c, &a) in b.completions.iter().zip(b.advantages) {
                if a == 0.0 {
                    continue;
                }
                let g = grad_log_prob(params, b.scene, b.query, c)?;
                grad.scaled_add(&g, inv_g * a);
            }
        }
    }
    if beta > 0.0 {
        let (_, kl_grad) = kl_to_reference(params, ref_params, primary.scene, primary.query)?;
        grad.scaled_add(&kl_grad, -beta);
    }
    if !grad.is_finite() {
        return Err(SageError::NonFinite("policy gradient".into()));
    }

    let mut next = params.clone();
    for (w, g) in next.w.iter_mut().zip(&grad.w) {
        *w += lr * g;
    }
    next.format_logit += lr * grad.format_logit;
    if !next.is_finite() {
        return Err(SageError::NonFinite("updated parameters".into()));
    }
    Ok(next)
}

/// The group objective the update ascends, evaluated for diagnostics:
/// `(1/G) sum_i A_i log pi(o_i) - beta * KL`.
pub fn group_objective(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    scene: &Scene,
    query: &Query,
    completions: &[Completion],
    advantages: &AdvantageGroup,
    beta: f64,
) -> Result<f64> {
    let mut value = 0.0;
    let inv_g = 1.0 / completions.len() as f64;
    for (c, &a) in completions.iter().zip(&advantages.advantages) {
        value += inv_g * a * crate::policy::log_prob(params, scene, query, c)?;
    }
    let (kl, _) = kl_to_reference(params, ref_params, scene, query)?;
    Ok(value - beta * kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duality::builtin_by_id;
    use crate::policy::{biased_init, sample_completions};
    use crate::scene::{sample_instance, EnvConfig};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn completion(answer: usize, formatted: bool) -> Completion {
        Completion {
            answer: AnswerIndex(answer),
            formatted,
            log_prob: -0.5,
        }
    }

    #[test]
    fn accuracy_is_the_indicator() {
        assert_eq!(accuracy_reward(&completion(2, true), AnswerIndex(2)), 1.0);
        assert_eq!(accuracy_reward(&completion(1, true), AnswerIndex(2)), 0.0);
    }

    #[test]
    fn consistency_counts_matching_duals() {
        // primary answers "left" (index 0), the flip maps it to "right";
        // three of four duals agree -> 0.3 * 3/4 = 0.225
        let env = EnvConfig::default();
        let hflip = builtin_by_id("hflip").unwrap();
        let mut r = rng(1);
        let (scene, query, _) = loop {
            let inst = sample_instance(&mut r, &env).unwrap();
            if inst.1.kind == crate::scene::QueryKind::RelPosH {
                break inst;
            }
        };
        let (_, dual_query) = hflip.apply(&scene, &query).unwrap();
        let primary = completion(0, true);
        let mapped = hflip
            .map_answer(&query, &dual_query, AnswerIndex(0))
            .unwrap();
        let other = 1 - mapped.0;
        let duals = vec![
            completion(mapped.0, true),
            completion(mapped.0, false),
            completion(other, true),
            completion(mapped.0, true),
        ];
        let r_cons =
            consistency_reward(&hflip, &primary, &duals, &query, &dual_query, 0.3).unwrap();
        assert!((r_cons - 0.225).abs() < 1e-15);

        // all duals consistent -> exactly the weight
        let all = vec![completion(mapped.0, true); 4];
        let r_all = consistency_reward(&hflip, &primary, &all, &query, &dual_query, 0.3).unwrap();
        assert_eq!(r_all, 0.3);

        // zero weight -> zero regardless
        let r_zero = consistency_reward(&hflip, &primary, &all, &query, &dual_query, 0.0).unwrap();
        assert_eq!(r_zero, 0.0);
    }

    #[test]
    fn total_reward_is_the_exact_sum() {
        let b = total_reward(&completion(0, true), AnswerIndex(0), 0.3);
        assert_eq!(b.total, 1.8);
        assert_eq!(b.r_acc + b.r_fmt + b.r_cons, b.total);

        let z = total_reward(&completion(1, false), AnswerIndex(0), 0.0);
        assert_eq!(z.total, 0.0);

        // no applicable operation: consistency contributes nothing
        let none = total_reward(&completion(0, true), AnswerIndex(0), 0.0);
        assert_eq!(none.total, 1.5);
    }

    #[test]
    fn advantages_standardize_the_group() {
        let g = group_advantages(&[1.3, 0.3, 1.3, 0.3]).unwrap();
        assert!((g.mean - 0.8).abs() < 1e-15);
        assert!((g.std - 0.5).abs() < 1e-15);
        assert_eq!(g.advantages, vec![1.0, -1.0, 1.0, -1.0]);
        assert!(!g.degenerate);
    }

    #[test]
    fn equal_rewards_are_degenerate() {
        let g = group_advantages(&[0.7; 8]).unwrap();
        assert!(g.degenerate);
        assert!(g.advantages.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn advantages_center_and_scale_over_random_groups() {
        let mut r = rng(2);
        for _ in 0..200 {
            let rewards: Vec<f64> = (0..8).map(|_| r.gen_range(0.0..2.0)).collect();
            let g = group_advantages(&rewards).unwrap();
            if g.degenerate {
                continue;
            }
            let mean: f64 = g.advantages.iter().sum::<f64>() / 8.0;
            let var: f64 = g.advantages.iter().map(|a| a * a).sum::<f64>() / 8.0;
            assert!(mean.abs() <= 1e-9);
            assert!((var.sqrt() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn groups_of_one_are_rejected() {
        assert!(matches!(
            group_advantages(&[1.0]),
            Err(SageError::InvalidArg(_))
        ));
    }

    #[test]
    fn zero_advantages_at_the_reference_leave_parameters_unchanged() {
        let env = EnvConfig::default();
        let mut r = rng(3);
        let (scene, query, _) = sample_instance(&mut r, &env).unwrap();
        let params = biased_init(&mut r, 2.0).unwrap();
        let completions = sample_completions(&params, &scene, &query, 8, &mut r).unwrap();
        let advantages = group_advantages(&vec![1.0; 8]).unwrap();
        let next = grpo_update(
            &params, &params, &scene, &query, &completions, &advantages, 0.04, 1e-3,
        )
        .unwrap();
        assert_eq!(next.w, params.w);
        assert_eq!(next.format_logit, params.format_logit);
    }

    #[test]
    fn single_positive_advantage_raises_that_log_prob() {
        let env = EnvConfig::default();
        let mut r = rng(4);
        let (scene, query, _) = sample_instance(&mut r, &env).unwrap();
        let params = biased_init(&mut r, 1.0).unwrap();
        let completions = sample_completions(&params, &scene, &query, 2, &mut r).unwrap();
        let advantages = AdvantageGroup {
            rewards: vec![1.0, 0.0],
            mean: 0.5,
            std: 0.5,
            advantages: vec![1.0, 0.0],
            degenerate: false,
        };
        let before = crate::policy::log_prob(&params, &scene, &query, &completions[0]).unwrap();
        let next = grpo_update(
            &params, &params, &scene, &query, &completions, &advantages, 0.0, 1e-2,
        )
        .unwrap();
        let after = crate::policy::log_prob(&next, &scene, &query, &completions[0]).unwrap();
        assert!(after > before, "{after} !> {before}");
    }

    #[test]
    fn small_steps_do_not_decrease_the_objective() {
        let env = EnvConfig::default();
        let mut r = rng(5);
        for _ in 0..30 {
            let (scene, query, truth) = sample_instance(&mut r, &env).unwrap();
            let params = biased_init(&mut r, 1.5).unwrap();
            let reference = biased_init(&mut r, 1.5).unwrap();
            let completions = sample_completions(&params, &scene, &query, 8, &mut r).unwrap();
            let rewards: Vec<f64> = completions
                .iter()
                .map(|c| total_reward(c, truth, 0.0).total)
                .collect();
            let advantages = group_advantages(&rewards).unwrap();
            if advantages.degenerate {
                continue;
            }
            let beta = 0.04;
            let before = group_objective(
                &params, &reference, &scene, &query, &completions, &advantages, beta,
            )
            .unwrap();
            let next = grpo_update(
                &params, &reference, &scene, &query, &completions, &advantages, beta, 1e-4,
            )
            .unwrap();
            let after = group_objective(
                &next, &reference, &scene, &query, &completions, &advantages, beta,
            )
            .unwrap();
            assert!(
                after + 1e-12 >= before,
                "objective decreased: {before} -> {after}"
            );
        }
    }

    #[test]
    fn larger_beta_never_raises_post_step_kl() {
        let env = EnvConfig::default();
        let mut r = rng(6);
        for _ in 0..25 {
            let (scene, query, truth) = sample_instance(&mut r, &env).unwrap();
            let reference = biased_init(&mut r, 1.5).unwrap();
            // start away from the reference so the KL pull is live
            let mut params = reference.clone();
            for w in &mut params.w {
                *w += r.gen_range(-0.3..0.3);
            }
            let completions = sample_completions(&params, &scene, &query, 8, &mut r).unwrap();
            let rewards: Vec<f64> = completions
                .iter()
                .map(|c| total_reward(c, truth, 0.0).total)
                .collect();
            let advantages = group_advantages(&rewards).unwrap();
            let mut last_kl = f64::INFINITY;
            for beta in [0.0, 0.02, 0.04, 0.08, 0.16] {
                let next = grpo_update(
                    &params, &reference, &scene, &query, &completions, &advantages, beta, 1e-3,
                )
                .unwrap();
                let (kl, _) = crate::policy::kl_to_reference(&next, &reference, &scene, &query)
                    .unwrap();
                assert!(kl <= last_kl + 1e-12, "beta {beta}: kl {kl} > {last_kl}");
                last_kl = kl;
            }
        }
    }

    #[test]
    fn reward_bounds_hold_on_sampled_steps() {
        let env = EnvConfig::default();
        let hflip = builtin_by_id("hflip").unwrap();
        let mut r = rng(7);
        let lambda = 0.3;
        for _ in 0..100 {
            let (scene, query, truth) = sample_instance(&mut r, &env).unwrap();
            let params = biased_init(&mut r, 1.0).unwrap();
            let primaries = sample_completions(&params, &scene, &query, 8, &mut r).unwrap();
            let (ds, dq) = hflip.apply(&scene, &query).unwrap();
            let duals = sample_completions(&params, &ds, &dq, 4, &mut r).unwrap();
            for p in &primaries {
                let rc = consistency_reward(&hflip, p, &duals, &query, &dq, lambda).unwrap();
                assert!((0.0..=lambda).contains(&rc));
                let b = total_reward(p, truth, rc);
                assert!((0.0..=1.5 + lambda).contains(&b.total));
            }
        }
    }
}

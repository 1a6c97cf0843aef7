//! The training loop: sample an input, generate a completion group,
//! exercise one pooled operation for dual completions and consistency
//! rewards, take a policy step, and run pool transitions at evaluation
//! checkpoints.
//!
//! Randomness is split into per-purpose streams so that a run with the
//! consistency machinery disabled consumes exactly the same environment
//! and primary-generation draws as one with it enabled.

use crate::duality::discover_pool;
use crate::error::{Result, SageError};
use crate::policy::{biased_init, kl_to_reference, sample_completions, PolicyParams};
use crate::pool::{
    apply_transitions, probe_all, select_for_step, LifecycleEvent, PoolConfig, PoolState,
};
use crate::rewards::{
    consistency_reward, group_advantages, grpo_update, grpo_update_batches, total_reward,
    GradBatch,
};
use crate::rng::RngSet;
use crate::scene::{ground_truth, sample_instance, EnvConfig, Query, Scene};
use serde::{Deserialize, Serialize};

pub const INITIAL_ACTIVE_OPS: [&str; 2] = ["hflip", "option_reverse"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: u64,
    /// G: completions per prompt; G/2 dual completions per exercised op.
    pub group_size: usize,
    /// lambda: weight of the consistency reward.
    pub consistency_weight: f64,
    /// beta: weight of the KL penalty toward the frozen reference.
    pub kl_coeff: f64,
    pub learning_rate: f64,
    pub seed: u64,
    /// Strength of the shortcut-favoring initialization.
    pub init_bias_strength: f64,
    /// Give dual completions accuracy/format rewards and gradients too.
    pub dual_gradient: bool,
    /// Baseline mode: no operation pool, no dual generation, no
    /// consistency term. Plain group-relative training.
    pub plain_grpo: bool,
    /// Replay a fixed exported corpus (JSONL path) in cyclic order
    /// instead of streaming fresh samples. For reproducibility studies.
    pub replay_corpus: Option<String>,
    /// Steps between mid-run checkpoints when the caller writes them;
    /// 0 disables mid-run checkpoints.
    pub checkpoint_interval: u64,
    pub env: EnvConfig,
    pub pool: PoolConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 5000,
            group_size: 8,
            consistency_weight: 0.3,
            kl_coeff: 0.04,
            learning_rate: 2e-2,
            seed: 0,
            init_bias_strength: 1.2,
            dual_gradient: false,
            plain_grpo: false,
            replay_corpus: None,
            checkpoint_interval: 0,
            env: EnvConfig::default(),
            pool: PoolConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 || self.group_size % 2 != 0 {
            return Err(SageError::Config {
                field: "group_size".into(),
                reason: format!("must be even and >= 2, got {}", self.group_size),
            });
        }
        if !(self.consistency_weight >= 0.0) || !self.consistency_weight.is_finite() {
            return Err(SageError::Config {
                field: "consistency_weight".into(),
                reason: format!("must be >= 0, got {}", self.consistency_weight),
            });
        }
        if !(self.kl_coeff >= 0.0) || !self.kl_coeff.is_finite() {
            return Err(SageError::Config {
                field: "kl_coeff".into(),
                reason: format!("must be >= 0, got {}", self.kl_coeff),
            });
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(SageError::Config {
                field: "learning_rate".into(),
                reason: format!("must be > 0, got {}", self.learning_rate),
            });
        }
        if !(self.init_bias_strength >= 0.0) || !self.init_bias_strength.is_finite() {
            return Err(SageError::Config {
                field: "init_bias_strength".into(),
                reason: format!("must be >= 0, got {}", self.init_bias_strength),
            });
        }
        self.env.validate()?;
        self.pool.validate()?;
        Ok(())
    }
}

/// Per-step observables; one line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub mean_acc: f64,
    pub mean_fmt: f64,
    pub mean_cons: f64,
    pub mean_total: f64,
    /// Exact KL to the reference on this step's input, post-update.
    pub kl: f64,
    pub op_id: Option<String>,
    pub degenerate: bool,
    pub spot_check: bool,
    /// Completions drawn this step (G, or G + G/2 when an op ran).
    pub generations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: PolicyParams,
    /// Frozen at initialization; never updated.
    pub ref_params: PolicyParams,
    pub pool: PoolState,
    pub rngs: RngSet,
    pub step: u64,
    /// Loaded replay corpus; rebuilt from the config path on demand
    /// rather than serialized into checkpoints.
    #[serde(skip)]
    replay: Option<Vec<(Scene, Query, crate::scene::AnswerIndex)>>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = RngSet::init_rng(config.seed);
        let params = biased_init(&mut init_rng, config.init_bias_strength)?;
        let ops = discover_pool(&mut init_rng, &config.env, config.pool.max_pool)?;
        let pool = PoolState::new(ops, &INITIAL_ACTIVE_OPS, &config.pool)?;
        let rngs = RngSet::new(config.seed);
        let mut trainer = Self {
            ref_params: params.clone(),
            params,
            pool,
            rngs,
            step: 0,
            config,
            replay: None,
        };
        trainer.load_replay()?;
        Ok(trainer)
    }

    /// (Re)load the replay corpus named by the config; called on
    /// construction and after checkpoint restoration.
    pub fn load_replay(&mut self) -> Result<()> {
        let Some(path) = &self.config.replay_corpus else {
            self.replay = None;
            return Ok(());
        };
        let records: Vec<crate::scene::CorpusRecord> =
            crate::artifacts::read_jsonl(std::path::Path::new(path))?;
        if records.is_empty() {
            return Err(SageError::Config {
                field: "replay_corpus".into(),
                reason: format!("{path} holds no records"),
            });
        }
        let instances = records
            .iter()
            .map(|r| r.to_instance())
            .collect::<Result<Vec<_>>>()?;
        self.replay = Some(instances);
        Ok(())
    }

    /// One optimization step. On error the parameters are left unchanged.
    pub fn train_step(&mut self) -> Result<(StepMetrics, Vec<LifecycleEvent>)> {
        self.step += 1;
        let t = self.step;
        let cfg = &self.config;
        let g = cfg.group_size;

        let (scene, query, truth) = match &self.replay {
            Some(corpus) => corpus[(t - 1) as usize % corpus.len()].clone(),
            None => sample_instance(&mut self.rngs.env, &cfg.env)?,
        };
        let primaries = sample_completions(&self.params, &scene, &query, g, &mut self.rngs.policy)?;

        let selection = if cfg.plain_grpo {
            crate::pool::Selection {
                op_index: None,
                spot_check_included: false,
            }
        } else {
            select_for_step(&self.pool, &scene, &query, &mut self.rngs.pool, &cfg.pool)
        };

        let mut dual: Option<(crate::duality::DualityOp, Scene, Query, Vec<_>)> = None;
        if let Some(idx) = selection.op_index {
            let op = self.pool.records[idx].op.clone();
            let (dual_scene, dual_query) = op.apply(&scene, &query)?;
            let duals =
                sample_completions(&self.params, &dual_scene, &dual_query, g / 2, &mut self.rngs.dual)?;
            dual = Some((op, dual_scene, dual_query, duals));
        }

        let breakdowns: Vec<_> = primaries
            .iter()
            .map(|c| {
                let r_cons = match &dual {
                    Some((op, _, dual_query, duals)) => consistency_reward(
                        op,
                        c,
                        duals,
                        &query,
                        dual_query,
                        cfg.consistency_weight,
                    ),
                    None => Ok(0.0),
                }?;
                Ok(total_reward(c, truth, r_cons))
            })
            .collect::<Result<_>>()?;
        let rewards: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();

        let (next_params, degenerate) = match (&dual, cfg.dual_gradient) {
            (Some((op, dual_scene, dual_query, duals)), true) => {
                let dual_truth = ground_truth(dual_scene, dual_query)?;
                let mapped: Vec<_> = primaries
                    .iter()
                    .map(|p| op.map_answer(&query, dual_query, p.answer))
                    .collect::<Result<_>>()?;
                let mut all = rewards.clone();
                for d in duals {
                    let agree = mapped.iter().filter(|m| **m == d.answer).count();
                    let r_cons =
                        cfg.consistency_weight * agree as f64 / primaries.len() as f64;
                    all.push(total_reward(d, dual_truth, r_cons).total);
                }
                let advantages = group_advantages(&all)?;
                let (adv_primary, adv_dual) = advantages.advantages.split_at(primaries.len());
                let batches = [
                    GradBatch {
                        scene: &scene,
                        query: &query,
                        completions: &primaries,
                        advantages: adv_primary,
                    },
                    GradBatch {
                        scene: dual_scene,
                        query: dual_query,
                        completions: duals,
                        advantages: adv_dual,
                    },
                ];
                let next = grpo_update_batches(
                    &self.params,
                    &self.ref_params,
                    &batches,
                    advantages.degenerate,
                    cfg.kl_coeff,
                    cfg.learning_rate,
                )?;
                (next, advantages.degenerate)
            }
            _ => {
                let advantages = group_advantages(&rewards)?;
                let next = grpo_update(
                    &self.params,
                    &self.ref_params,
                    &scene,
                    &query,
                    &primaries,
                    &advantages,
                    cfg.kl_coeff,
                    cfg.learning_rate,
                )?;
                (next, advantages.degenerate)
            }
        };
        self.params = next_params;
        if !self.params.is_finite() {
            return Err(SageError::NonFinite("policy parameters".into()));
        }

        let (kl, _) = kl_to_reference(&self.params, &self.ref_params, &scene, &query)?;

        let n = primaries.len() as f64;
        let metrics = StepMetrics {
            step: t,
            mean_acc: breakdowns.iter().map(|b| b.r_acc).sum::<f64>() / n,
            mean_fmt: breakdowns.iter().map(|b| b.r_fmt).sum::<f64>() / n,
            mean_cons: breakdowns.iter().map(|b| b.r_cons).sum::<f64>() / n,
            mean_total: breakdowns.iter().map(|b| b.total).sum::<f64>() / n,
            kl,
            op_id: dual.as_ref().map(|(op, ..)| op.id()),
            degenerate,
            spot_check: selection.spot_check_included,
            generations: g + dual.as_ref().map_or(0, |(.., d)| d.len()),
        };

        let mut events = Vec::new();
        if !cfg.plain_grpo && t % cfg.pool.eval_interval == 0 {
            let corpus = self.probe_corpus(t)?;
            let reports = probe_all(&self.params, &self.pool, &corpus, t)?;
            events = apply_transitions(&mut self.pool, &reports, &cfg.pool, t)?;
        }

        Ok((metrics, events))
    }

    /// The checkpoint-probe corpus, regenerated from (seed, step).
    pub fn probe_corpus(&self, step: u64) -> Result<Vec<(Scene, Query)>> {
        let mut rng = self.rngs.probe_rng(step);
        let mut corpus = Vec::with_capacity(self.config.pool.probe_size);
        while corpus.len() < self.config.pool.probe_size {
            let (scene, query, _) = sample_instance(&mut rng, &self.config.env)?;
            corpus.push((scene, query));
        }
        Ok(corpus)
    }

    /// Drive the remaining steps to `total_steps`, collecting the metrics
    /// stream and lifecycle journal.
    pub fn run_to_completion(&mut self) -> Result<RunResult> {
        let mut metrics = Vec::new();
        let mut journal = Vec::new();
        while self.step < self.config.total_steps {
            let (m, events) = self.train_step()?;
            metrics.push(m);
            journal.extend(events);
        }
        Ok(RunResult { metrics, journal })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub metrics: Vec<StepMetrics>,
    pub journal: Vec<LifecycleEvent>,
}

/// Build a trainer and run the configured number of steps.
pub fn run_training(config: TrainConfig) -> Result<(Trainer, RunResult)> {
    let mut trainer = Trainer::new(config)?;
    let result = trainer.run_to_completion()?;
    Ok((trainer, result))
}

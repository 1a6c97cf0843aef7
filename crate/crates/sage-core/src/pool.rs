//! The self-evolving operation pool: consistency probing, the
//! Candidate/Active/Mastered lifecycle, priority scoring, per-step
//! selection and anti-forgetting spot checks.
//!
//! Transitions run at evaluation checkpoints only. An Active operation
//! retires to Mastered when its probed consistency reaches the mastery
//! threshold; a Mastered one falls back to Candidate when it degrades
//! below 0.8 of the threshold; freed slots are filled by the candidate
//! with the highest priority `(1 - consistency) + novelty`.

use crate::duality::DualityOp;
use crate::error::{Result, SageError};
use crate::policy::{greedy_answer, PolicyParams};
use crate::scene::{Query, Scene};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpState {
    Candidate,
    Active,
    Mastered,
}

impl std::fmt::Display for OpState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OpState::Candidate => "candidate",
            OpState::Active => "active",
            OpState::Mastered => "mastered",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub op: DualityOp,
    pub state: OpState,
    pub last_consistency: f64,
    /// (step, probed consistency) per evaluation checkpoint.
    pub history: Vec<(u64, f64)>,
    pub n_evals: u32,
    pub priority: f64,
}

impl OpRecord {
    fn new(op: DualityOp, state: OpState, novelty_bonus: f64) -> Self {
        Self {
            op,
            state,
            last_consistency: 0.0,
            history: Vec::new(),
            n_evals: 0,
            priority: 1.0 + novelty_bonus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    /// K: persistent-active cap.
    pub max_active: usize,
    /// M: pool size cap, including the nine built-ins.
    pub max_pool: usize,
    /// E: steps between evaluation checkpoints.
    pub eval_interval: u64,
    /// tau: consistency needed to retire an operation.
    pub mastery_threshold: f64,
    /// gamma: priority bonus while an operation has fewer than 3 probes.
    pub novelty_bonus: f64,
    /// p_f: per-step probability of spot-checking a mastered operation.
    pub spot_check_prob: f64,
    /// N: probe-corpus size per checkpoint.
    pub probe_size: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            max_active: 3,
            max_pool: 12,
            eval_interval: 100,
            mastery_threshold: 0.75,
            novelty_bonus: 0.5,
            spot_check_prob: 0.2,
            probe_size: 256,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_active < 1 || self.max_active > self.max_pool {
            return Err(SageError::Config {
                field: "pool.max_active".into(),
                reason: format!(
                    "need 1 <= K <= M, got K={} M={}",
                    self.max_active, self.max_pool
                ),
            });
        }
        if !(self.mastery_threshold > 0.0 && self.mastery_threshold <= 1.0) {
            return Err(SageError::Config {
                field: "pool.mastery_threshold".into(),
                reason: format!("must lie in (0, 1], got {}", self.mastery_threshold),
            });
        }
        if !(0.0..=1.0).contains(&self.spot_check_prob) {
            return Err(SageError::Config {
                field: "pool.spot_check_prob".into(),
                reason: format!("must lie in [0, 1], got {}", self.spot_check_prob),
            });
        }
        if self.novelty_bonus < 0.0 || !self.novelty_bonus.is_finite() {
            return Err(SageError::Config {
                field: "pool.novelty_bonus".into(),
                reason: format!("must be >= 0, got {}", self.novelty_bonus),
            });
        }
        if self.eval_interval == 0 {
            return Err(SageError::Config {
                field: "pool.eval_interval".into(),
                reason: "must be >= 1".into(),
            });
        }
        if self.probe_size == 0 {
            return Err(SageError::Config {
                field: "pool.probe_size".into(),
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Consistency estimate for one operation on a probe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub op_id: String,
    pub consistency: f64,
    pub sample_count: usize,
    pub step: u64,
}

/// One journal line; probes without a state change carry
/// `from_state == to_state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleEvent {
    pub step: u64,
    pub op_id: String,
    pub from_state: OpState,
    pub to_state: OpState,
    pub consistency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    /// Records sorted by op id; order is part of determinism.
    pub records: Vec<OpRecord>,
}

impl PoolState {
    /// Build a pool over `ops` with `initial_active` ids active and
    /// everything else candidate.
    pub fn new(ops: Vec<DualityOp>, initial_active: &[&str], config: &PoolConfig) -> Result<Self> {
        config.validate()?;
        if ops.len() > config.max_pool {
            return Err(SageError::Config {
                field: "pool.max_pool".into(),
                reason: format!("{} operations exceed the cap {}", ops.len(), config.max_pool),
            });
        }
        if initial_active.len() > config.max_active {
            return Err(SageError::Config {
                field: "pool.max_active".into(),
                reason: "more initial active operations than slots".into(),
            });
        }
        let mut records: Vec<OpRecord> = ops
            .into_iter()
            .map(|op| {
                let state = if initial_active.contains(&op.id().as_str()) {
                    OpState::Active
                } else {
                    OpState::Candidate
                };
                OpRecord::new(op, state, config.novelty_bonus)
            })
            .collect();
        records.sort_by(|a, b| a.op.id().cmp(&b.op.id()));
        for want in initial_active {
            if !records.iter().any(|r| r.op.id() == *want) {
                return Err(SageError::UnknownOp((*want).to_string()));
            }
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.state == OpState::Active)
            .count()
    }

    pub fn get(&self, op_id: &str) -> Option<&OpRecord> {
        self.records.iter().find(|r| r.op.id() == op_id)
    }

    fn mastered_indices(&self) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.state == OpState::Mastered)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Priority score: `(1 - consistency) + bonus * [n_evals < 3]`.
pub fn priority(record: &OpRecord, novelty_bonus: f64) -> f64 {
    let novelty = if record.n_evals < 3 { novelty_bonus } else { 0.0 };
    (1.0 - record.last_consistency) + novelty
}

/// Fraction of probe pairs on which the greedy answer commutes with the
/// operation. Greedy decoding throughout; the probe set must already be
/// filtered to the operation's domain.
pub fn estimate_consistency(
    params: &PolicyParams,
    op: &DualityOp,
    probe_set: &[(Scene, Query)],
    step: u64,
) -> Result<ProbeReport> {
    if probe_set.is_empty() {
        return Err(SageError::EmptyProbeSet(op.id()));
    }
    let mut consistent = 0usize;
    for (scene, query) in probe_set {
        let answer = greedy_answer(params, scene, query)?;
        let (dual_scene, dual_query) = op.apply(scene, query)?;
        let dual_answer = greedy_answer(params, &dual_scene, &dual_query)?;
        let mapped = op.map_answer(query, &dual_query, answer)?;
        if mapped == dual_answer {
            consistent += 1;
        }
    }
    Ok(ProbeReport {
        op_id: op.id(),
        consistency: consistent as f64 / probe_set.len() as f64,
        sample_count: probe_set.len(),
        step,
    })
}

/// Apply checkpoint transitions in order: record probe results, retire
/// Active ops that reached the threshold, demote Mastered ops that
/// degraded below 0.8 of it, then promote the highest-priority
/// candidates into free slots (ties break to the lexicographically
/// smaller id). Returns the journal lines, probes included.
pub fn apply_transitions(
    pool: &mut PoolState,
    reports: &[ProbeReport],
    config: &PoolConfig,
    step: u64,
) -> Result<Vec<LifecycleEvent>> {
    let mut events = Vec::new();

    for report in reports {
        let rec = pool
            .records
            .iter_mut()
            .find(|r| r.op.id() == report.op_id)
            .ok_or_else(|| SageError::UnknownOp(report.op_id.clone()))?;
        rec.last_consistency = report.consistency;
        rec.history.push((step, report.consistency));
        rec.n_evals += 1;
    }

    let tau = config.mastery_threshold;
    for rec in &mut pool.records {
        let probed = reports.iter().any(|p| p.op_id == rec.op.id());
        if !probed {
            continue;
        }
        let from = rec.state;
        // demotion boundary is consistency < 0.8*tau, strict; 1.25 is a
        // dyadic rational so the rearranged comparison is exact at the
        // boundary where 0.8*tau itself would round up
        let to = match rec.state {
            OpState::Active if rec.last_consistency >= tau => OpState::Mastered,
            OpState::Mastered if rec.last_consistency * 1.25 < tau => OpState::Candidate,
            other => other,
        };
        rec.state = to;
        events.push(LifecycleEvent {
            step,
            op_id: rec.op.id(),
            from_state: from,
            to_state: to,
            consistency: rec.last_consistency,
        });
    }

    for rec in &mut pool.records {
        rec.priority = priority(rec, config.novelty_bonus);
    }

    while pool.active_count() < config.max_active {
        let best = pool
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.state == OpState::Candidate)
            .max_by(|(_, a), (_, b)| {
                a.priority
                    .partial_cmp(&b.priority)
                    .unwrap()
                    // ties: prefer the lexicographically smaller id
                    .then_with(|| b.op.id().cmp(&a.op.id()))
            })
            .map(|(i, _)| i);
        let Some(i) = best else { break };
        let rec = &mut pool.records[i];
        rec.state = OpState::Active;
        events.push(LifecycleEvent {
            step,
            op_id: rec.op.id(),
            from_state: OpState::Candidate,
            to_state: OpState::Active,
            consistency: rec.last_consistency,
        });
    }

    debug_assert!(pool.active_count() <= config.max_active);
    Ok(events)
}

/// Outcome of the per-step selection.
#[derive(Debug, Clone)]
pub struct Selection {
    pub op_index: Option<usize>,
    /// Whether a mastered operation was temporarily included this step.
    pub spot_check_included: bool,
}

/// Pick the operation to exercise on this step's input:
/// with probability `p_f` a random Mastered op temporarily joins the
/// Active set, the working set is filtered by applicability, and one
/// member is drawn with probability proportional to its priority
/// (floored at 0.05 to keep support).
pub fn select_for_step<R: Rng>(
    pool: &PoolState,
    scene: &Scene,
    query: &Query,
    rng: &mut R,
    config: &PoolConfig,
) -> Selection {
    let spot_roll = rng.gen_bool(config.spot_check_prob);
    let mastered = pool.mastered_indices();
    let mut working: Vec<usize> = pool
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.state == OpState::Active)
        .map(|(i, _)| i)
        .collect();
    let mut spot_check_included = false;
    if spot_roll && !mastered.is_empty() {
        let pick = mastered[rng.gen_range(0..mastered.len())];
        working.push(pick);
        spot_check_included = true;
    }

    working.retain(|&i| pool.records[i].op.applicable(scene, query));
    if working.is_empty() {
        return Selection {
            op_index: None,
            spot_check_included,
        };
    }

    let weights: Vec<f64> = working
        .iter()
        .map(|&i| pool.records[i].priority.max(0.05))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut chosen = *working.last().expect("non-empty");
    for (&i, &w) in working.iter().zip(&weights) {
        if u < w {
            chosen = i;
            break;
        }
        u -= w;
    }
    Selection {
        op_index: Some(chosen),
        spot_check_included,
    }
}

/// Per-checkpoint probe over every pool member: the shared corpus is
/// filtered per operation by domain; operations whose filtered set is
/// empty are skipped this checkpoint.
pub fn probe_all(
    params: &PolicyParams,
    pool: &PoolState,
    corpus: &[(Scene, Query)],
    step: u64,
) -> Result<Vec<ProbeReport>> {
    let mut reports = Vec::with_capacity(pool.records.len());
    for rec in &pool.records {
        let filtered: Vec<(Scene, Query)> = corpus
            .iter()
            .filter(|(s, q)| rec.op.applicable(s, q))
            .cloned()
            .collect();
        if filtered.is_empty() {
            continue;
        }
        reports.push(estimate_consistency(params, &rec.op, &filtered, step)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duality::{builtin_by_id, builtin_pool};
    use crate::policy::{biased_init, oracle_mimic, PolicyParams};
    use crate::scene::{sample_instance, EnvConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn probe_corpus(n: usize, seed: u64) -> Vec<(Scene, Query)> {
        let env = EnvConfig::default();
        let mut r = rng(seed);
        (0..n)
            .map(|_| {
                let (s, q, _) = sample_instance(&mut r, &env).unwrap();
                (s, q)
            })
            .collect()
    }

    fn default_pool() -> (PoolState, PoolConfig) {
        let config = PoolConfig::default();
        let pool = PoolState::new(builtin_pool(), &["hflip", "option_reverse"], &config).unwrap();
        (pool, config)
    }

    fn filtered_for<'a>(
        op: &DualityOp,
        corpus: &'a [(Scene, Query)],
    ) -> Vec<(Scene, Query)> {
        corpus
            .iter()
            .filter(|(s, q)| op.applicable(s, q))
            .cloned()
            .collect()
    }

    #[test]
    fn oracle_mimic_probes_fully_consistent() {
        let corpus = probe_corpus(256, 1);
        let params = oracle_mimic(8.0);
        for op in builtin_pool() {
            let set = filtered_for(&op, &corpus);
            let report = estimate_consistency(&params, &op, &set, 0).unwrap();
            assert_eq!(report.consistency, 1.0, "{}", report.op_id);
        }
    }

    #[test]
    fn position_bias_fails_option_reverse_probing() {
        let corpus = probe_corpus(256, 2);
        let mut params = PolicyParams::zeros();
        params.w[crate::features::IDX_POSITION_0] = 40.0;
        let reverse = builtin_by_id("option_reverse").unwrap();
        let set = filtered_for(&reverse, &corpus);
        let report = estimate_consistency(&params, &reverse, &set, 0).unwrap();
        // always picks position 0; the mapped answer lands at the end
        assert!(report.consistency < 0.05, "{}", report.consistency);
    }

    #[test]
    fn any_variant_blind_policy_is_paraphrase_consistent() {
        let corpus = probe_corpus(256, 3);
        let params = biased_init(&mut rng(4), 2.0).unwrap();
        let para = builtin_by_id("paraphrase").unwrap();
        let set = filtered_for(&para, &corpus);
        let report = estimate_consistency(&params, &para, &set, 0).unwrap();
        assert_eq!(report.consistency, 1.0);
    }

    #[test]
    fn empty_probe_set_is_an_error() {
        let params = PolicyParams::zeros();
        let op = builtin_by_id("hflip").unwrap();
        assert!(matches!(
            estimate_consistency(&params, &op, &[], 0),
            Err(SageError::EmptyProbeSet(_))
        ));
    }

    #[test]
    fn priority_formula() {
        let mut rec = OpRecord::new(builtin_by_id("hflip").unwrap(), OpState::Candidate, 0.5);
        rec.last_consistency = 0.2;
        rec.n_evals = 1;
        assert!((priority(&rec, 0.5) - 1.3).abs() < 1e-15);

        rec.last_consistency = 1.0;
        rec.n_evals = 5;
        assert_eq!(priority(&rec, 0.5), 0.0);

        rec.last_consistency = 0.0;
        rec.n_evals = 0;
        assert_eq!(priority(&rec, 0.5), 1.5);
    }

    fn report(op_id: &str, consistency: f64, step: u64) -> ProbeReport {
        ProbeReport {
            op_id: op_id.into(),
            consistency,
            sample_count: 256,
            step,
        }
    }

    #[test]
    fn active_retires_at_threshold() {
        let (mut pool, config) = default_pool();
        let events =
            apply_transitions(&mut pool, &[report("hflip", 0.80, 100)], &config, 100).unwrap();
        assert_eq!(pool.get("hflip").unwrap().state, OpState::Mastered);
        // the freed slot is refilled by a candidate
        assert_eq!(pool.active_count(), config.max_active.min(pool.len() - 1));
        assert!(events
            .iter()
            .any(|e| e.op_id == "hflip" && e.to_state == OpState::Mastered));
    }

    #[test]
    fn mastered_demotes_below_point_eight_tau() {
        let (mut pool, config) = default_pool();
        apply_transitions(&mut pool, &[report("hflip", 0.80, 100)], &config, 100).unwrap();
        let events =
            apply_transitions(&mut pool, &[report("hflip", 0.55, 200)], &config, 200).unwrap();
        assert_eq!(pool.get("hflip").unwrap().state, OpState::Candidate);
        let demotion = events
            .iter()
            .find(|e| e.op_id == "hflip" && e.to_state == OpState::Candidate)
            .unwrap();
        assert!(demotion.consistency < 0.8 * config.mastery_threshold);
    }

    #[test]
    fn mastered_at_point_six_stays_mastered() {
        // 0.8 * 0.75 = 0.6 exactly; the demotion rule is strict-below
        let (mut pool, config) = default_pool();
        apply_transitions(&mut pool, &[report("hflip", 0.9, 100)], &config, 100).unwrap();
        apply_transitions(&mut pool, &[report("hflip", 0.60, 200)], &config, 200).unwrap();
        assert_eq!(pool.get("hflip").unwrap().state, OpState::Mastered);
    }

    #[test]
    fn promotion_takes_the_highest_priority_candidate() {
        let (mut pool, config) = default_pool();
        // probe two candidates with different consistencies; one active
        // slot is free (K=3, two initial actives)
        let reports = vec![report("negation", 0.7, 100), report("vflip", 0.2, 100)];
        // push everything out of novelty and park unprobed candidates at
        // low priority so the contest is between the two probed ones
        for r in &mut pool.records {
            r.n_evals = 3;
            r.last_consistency = 0.9;
        }
        apply_transitions(&mut pool, &reports, &config, 100).unwrap();
        assert_eq!(pool.get("vflip").unwrap().state, OpState::Active);
        assert_eq!(pool.get("negation").unwrap().state, OpState::Candidate);
    }

    #[test]
    fn promotion_ties_break_lexicographically() {
        let (mut pool, config) = default_pool();
        for r in &mut pool.records {
            r.n_evals = 3;
            r.last_consistency = 0.5;
            r.priority = 0.5;
        }
        let events = apply_transitions(&mut pool, &[], &config, 100).unwrap();
        let promoted: Vec<&str> = events
            .iter()
            .filter(|e| e.to_state == OpState::Active && e.from_state == OpState::Candidate)
            .map(|e| e.op_id.as_str())
            .collect();
        assert_eq!(promoted, vec!["color_invert"]);
    }

    #[test]
    fn demoted_op_outranks_consistent_ops_for_repromotion() {
        let (mut pool, config) = default_pool();
        for r in &mut pool.records {
            r.n_evals = 3;
        }
        apply_transitions(&mut pool, &[report("hflip", 0.9, 100)], &config, 100).unwrap();
        apply_transitions(&mut pool, &[report("hflip", 0.5, 200)], &config, 200).unwrap();
        let demoted = pool.get("hflip").unwrap();
        for other in &pool.records {
            if other.last_consistency >= config.mastery_threshold && other.op.id() != "hflip" {
                assert!(demoted.priority > other.priority);
            }
        }
    }

    #[test]
    fn empty_working_set_selects_nothing() {
        let config = PoolConfig::default();
        // all candidates, nothing active, nothing mastered
        let pool = PoolState::new(builtin_pool(), &[], &config).unwrap();
        let corpus = probe_corpus(1, 5);
        let sel = select_for_step(&pool, &corpus[0].0, &corpus[0].1, &mut rng(6), &config);
        assert!(sel.op_index.is_none());
        assert!(!sel.spot_check_included);
    }

    #[test]
    fn single_applicable_active_is_always_chosen() {
        let config = PoolConfig {
            spot_check_prob: 0.0,
            ..PoolConfig::default()
        };
        let pool = PoolState::new(builtin_pool(), &["hflip"], &config).unwrap();
        let corpus = probe_corpus(50, 7);
        let mut r = rng(8);
        for (scene, query) in &corpus {
            let sel = select_for_step(&pool, scene, query, &mut r, &config);
            let idx = sel.op_index.unwrap();
            assert_eq!(pool.records[idx].op.id(), "hflip");
        }
    }

    #[test]
    fn spot_check_frequency_tracks_the_configured_probability() {
        let config = PoolConfig::default();
        let mut pool = PoolState::new(builtin_pool(), &["hflip"], &config).unwrap();
        // master one op so inclusions are possible
        for r in &mut pool.records {
            if r.op.id() == "paraphrase" {
                r.state = OpState::Mastered;
            }
        }
        let corpus = probe_corpus(64, 9);
        let mut r = rng(10);
        let n = 10_000;
        let mut included = 0usize;
        for i in 0..n {
            let (scene, query) = &corpus[i % corpus.len()];
            let sel = select_for_step(&pool, scene, query, &mut r, &config);
            if sel.spot_check_included {
                included += 1;
            }
        }
        let freq = included as f64 / n as f64;
        assert!(
            (freq - config.spot_check_prob).abs() <= 0.01,
            "spot-check frequency {freq}"
        );
    }

    #[test]
    fn selection_weights_follow_priorities() {
        let config = PoolConfig {
            spot_check_prob: 0.0,
            ..PoolConfig::default()
        };
        let mut pool = PoolState::new(builtin_pool(), &["hflip", "vflip"], &config).unwrap();
        for r in &mut pool.records {
            r.n_evals = 3;
            match r.op.id().as_str() {
                "hflip" => {
                    r.last_consistency = 0.0;
                    r.priority = 1.0;
                }
                "vflip" => {
                    r.last_consistency = 0.75;
                    r.priority = 0.25;
                }
                _ => {}
            }
        }
        let corpus = probe_corpus(32, 11);
        let mut r = rng(12);
        let mut hflip_count = 0usize;
        let n = 20_000;
        for i in 0..n {
            let (scene, query) = &corpus[i % corpus.len()];
            let sel = select_for_step(&pool, scene, query, &mut r, &config);
            if pool.records[sel.op_index.unwrap()].op.id() == "hflip" {
                hflip_count += 1;
            }
        }
        let frac = hflip_count as f64 / n as f64;
        assert!((frac - 0.8).abs() < 0.02, "hflip fraction {frac}");
    }

    #[test]
    fn probe_all_covers_every_builtin_on_a_mixed_corpus() {
        let corpus = probe_corpus(256, 13);
        let (pool, _) = default_pool();
        let params = PolicyParams::zeros();
        let reports = probe_all(&params, &pool, &corpus, 0).unwrap();
        assert_eq!(reports.len(), pool.len());
    }

    #[test]
    fn pool_state_serde_round_trip() {
        let (mut pool, config) = default_pool();
        apply_transitions(&mut pool, &[report("hflip", 0.8, 100)], &config, 100).unwrap();
        let json = serde_json::to_string(&pool).unwrap();
        let back: PoolState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pool);
    }
}

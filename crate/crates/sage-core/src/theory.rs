//! Brute-force verification of the method's mathematical claims on
//! finite tasks: the suboptimality bounds for inconsistent classifiers,
//! the feasible-hypothesis count and VC bound under orbit constraints,
//! and the scheduler's potential-function convergence.

use crate::duality::DualityOp;
use crate::error::{Result, SageError};
use crate::scene::{ground_truth, sample_instance, AnswerIndex, EnvConfig, Query, Scene};
use rand::Rng;
use serde::{Deserialize, Serialize};

const MAX_ENUMERATION: u64 = 60_000;

/// A finite input space with an orbit pairing. The answer distribution is
/// uniform over `support` (the primal inputs); dual inputs are part of
/// the space (classifiers are defined on them) but carry no probability
/// mass of their own.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteTask {
    pub inputs: Vec<(Scene, Query)>,
    pub arity: usize,
    /// Oracle answer per input.
    pub truth: Vec<usize>,
    /// Indices of the primal inputs.
    pub support: Vec<usize>,
    /// Dual input per support entry; equals the support index itself for
    /// unpaired inputs (identity orbit).
    pub dual_index: Vec<usize>,
    /// Answer bijection per support entry: maps an answer index on the
    /// primal to the corresponding index on the dual.
    pub answer_map: Vec<Vec<usize>>,
}

impl FiniteTask {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Number of inputs that sit in a genuine (non-identity) orbit.
    pub fn paired_input_count(&self) -> usize {
        self.support
            .iter()
            .zip(&self.dual_index)
            .filter(|(s, d)| s != d)
            .count()
            * 2
    }

    fn validate(&self) -> Result<()> {
        for (k, &s) in self.support.iter().enumerate() {
            let d = self.dual_index[k];
            let map = &self.answer_map[k];
            if map.len() != self.arity {
                return Err(SageError::InvalidArg("answer map arity mismatch".into()));
            }
            let mut seen = vec![false; self.arity];
            for &m in map {
                if m >= self.arity || seen[m] {
                    return Err(SageError::InvalidArg("answer map is not a bijection".into()));
                }
                seen[m] = true;
            }
            // the oracle must commute with the pairing on every orbit
            if self.truth[d] != map[self.truth[s]] {
                return Err(SageError::InvalidArg(format!(
                    "orbit ({s}, {d}) breaks oracle commutation"
                )));
            }
        }
        Ok(())
    }
}

/// Build a task of `n_pairs` orbits under `op` plus `n_singles` unpaired
/// inputs, all with `arity` options, inputs pairwise distinct.
pub fn build_task<R: Rng>(
    rng: &mut R,
    env: &EnvConfig,
    op: &DualityOp,
    arity: usize,
    n_pairs: usize,
    n_singles: usize,
) -> Result<FiniteTask> {
    let n = 2 * n_pairs + n_singles;
    if n == 0 || n > 8 || arity > 3 {
        return Err(SageError::InvalidArg(
            "task size must be 1..=8 with arity <= 3".into(),
        ));
    }
    let mut inputs: Vec<(Scene, Query)> = Vec::with_capacity(n);
    let mut support = Vec::new();
    let mut dual_index = Vec::new();
    let mut answer_map = Vec::new();

    let mut attempts = 0usize;
    let mut draw = |rng: &mut R,
                    inputs: &[(Scene, Query)],
                    in_domain: Option<&DualityOp>|
     -> Result<(Scene, Query)> {
        loop {
            attempts += 1;
            if attempts > 40_000 {
                return Err(SageError::EmptyDomain {
                    op: in_domain.map(|o| o.id()).unwrap_or_else(|| "any".into()),
                    attempts,
                });
            }
            let (scene, query, _) = sample_instance(rng, env)?;
            if query.options.len() != arity {
                continue;
            }
            if let Some(op) = in_domain {
                if !op.applicable(&scene, &query) {
                    continue;
                }
            }
            if inputs.iter().any(|(s, q)| s == &scene && q == &query) {
                continue;
            }
            return Ok((scene, query));
        }
    };

    for _ in 0..n_pairs {
        let query = loop {
            let (scene, query) = draw(rng, &inputs, Some(op))?;
            let (ds, dq) = op.apply(&scene, &query)?;
            let self_dual = ds == scene && dq == query;
            let collides = inputs.iter().any(|(s, q)| s == &ds && q == &dq);
            if !self_dual && !collides {
                inputs.push((scene, query.clone()));
                inputs.push((ds, dq));
                break query;
            }
        };
        let primal = inputs.len() - 2;
        let dual = inputs.len() - 1;
        let map: Vec<usize> = (0..arity)
            .map(|a| {
                op.map_answer(&query, &inputs[dual].1, AnswerIndex(a))
                    .map(|i| i.0)
            })
            .collect::<Result<_>>()?;
        support.push(primal);
        dual_index.push(dual);
        answer_map.push(map);
    }
    for _ in 0..n_singles {
        let (scene, query) = draw(rng, &inputs, None)?;
        inputs.push((scene, query));
        let idx = inputs.len() - 1;
        support.push(idx);
        dual_index.push(idx);
        answer_map.push((0..arity).collect());
    }

    let truth: Vec<usize> = inputs
        .iter()
        .map(|(s, q)| ground_truth(s, q).map(|i| i.0))
        .collect::<Result<_>>()?;

    let task = FiniteTask {
        inputs,
        arity,
        truth,
        support,
        dual_index,
        answer_map,
    };
    task.validate()?;
    Ok(task)
}

/// 0-1 risks of an explicit classifier under the task's uniform support
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    /// Error rate on the primal inputs.
    pub r: f64,
    /// Error rate of the dual predictions against the mapped truth.
    pub r_dual: f64,
    /// (r + r_dual) / 2.
    pub r_aug: f64,
    /// Fraction of support points whose dual prediction equals the
    /// mapped primal prediction.
    pub consistency: f64,
}

struct RiskCounts {
    err: usize,
    err_dual: usize,
    inconsistent: usize,
    support: usize,
}

fn risk_counts(classifier: &[usize], task: &FiniteTask) -> Result<RiskCounts> {
    if classifier.len() != task.len() {
        return Err(SageError::InvalidArg(format!(
            "classifier defines {} inputs, task has {}",
            classifier.len(),
            task.len()
        )));
    }
    let mut counts = RiskCounts {
        err: 0,
        err_dual: 0,
        inconsistent: 0,
        support: task.support.len(),
    };
    for (k, &i) in task.support.iter().enumerate() {
        let j = task.dual_index[k];
        let map = &task.answer_map[k];
        if classifier[i] != task.truth[i] {
            counts.err += 1;
        }
        if classifier[j] != map[task.truth[i]] {
            counts.err_dual += 1;
        }
        if classifier[j] != map[classifier[i]] {
            counts.inconsistent += 1;
        }
    }
    Ok(counts)
}

pub fn risks(classifier: &[usize], task: &FiniteTask) -> Result<RiskReport> {
    let c = risk_counts(classifier, task)?;
    let n = c.support as f64;
    Ok(RiskReport {
        r: c.err as f64 / n,
        r_dual: c.err_dual as f64 / n,
        r_aug: (c.err + c.err_dual) as f64 / (2.0 * n),
        consistency: 1.0 - c.inconsistent as f64 / n,
    })
}

/// Result of enumerating every deterministic classifier on a task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub classifiers_checked: u64,
    /// Violations of `r_aug >= (1 - consistency) / 2`.
    pub violations_lower_bound: u64,
    /// Violations of `r == 0 implies r_dual >= 1 - consistency`.
    pub violations_zero_risk: u64,
    /// Violations of the pointwise inequality
    /// `[f(x) wrong] + [f(dual) wrong] >= [inconsistent at x]`.
    pub violations_pointwise: u64,
    /// Smallest integer slack `err + err_dual - inconsistent` seen.
    pub tightest_slack: i64,
    /// A classifier attaining the tightest slack, as answer indices.
    pub tightest_classifier: Vec<usize>,
}

impl Theorem1Report {
    pub fn holds(&self) -> bool {
        self.violations_lower_bound == 0
            && self.violations_zero_risk == 0
            && self.violations_pointwise == 0
    }
}

fn enumeration_size(arity: usize, n: usize) -> Result<u64> {
    let total = (arity as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    if total > MAX_ENUMERATION {
        return Err(SageError::EnumerationBudget(format!(
            "{arity}^{n} = {total} classifiers"
        )));
    }
    Ok(total)
}

/// Enumerate every classifier and check both suboptimality inequalities
/// exactly, in integer arithmetic.
pub fn verify_theorem1(task: &FiniteTask) -> Result<Theorem1Report> {
    let n = task.len();
    let total = enumeration_size(task.arity, n)?;
    let mut report = Theorem1Report {
        classifiers_checked: 0,
        violations_lower_bound: 0,
        violations_zero_risk: 0,
        violations_pointwise: 0,
        tightest_slack: i64::MAX,
        tightest_classifier: Vec::new(),
    };
    let mut classifier = vec![0usize; n];
    for code in 0..total {
        let mut rest = code;
        for slot in classifier.iter_mut() {
            *slot = (rest % task.arity as u64) as usize;
            rest /= task.arity as u64;
        }
        report.classifiers_checked += 1;

        let mut err = 0i64;
        let mut err_dual = 0i64;
        let mut incons = 0i64;
        for (k, &i) in task.support.iter().enumerate() {
            let j = task.dual_index[k];
            let map = &task.answer_map[k];
            let e = i64::from(classifier[i] != task.truth[i]);
            let ed = i64::from(classifier[j] != map[task.truth[i]]);
            let ic = i64::from(classifier[j] != map[classifier[i]]);
            if e + ed < ic {
                report.violations_pointwise += 1;
            }
            err += e;
            err_dual += ed;
            incons += ic;
        }
        // (i): R_aug >= (1 - C)/2  <=>  err + err_dual >= inconsistent
        if err + err_dual < incons {
            report.violations_lower_bound += 1;
        }
        // (ii): R = 0 implies R_dual >= 1 - C  <=>  err_dual >= inconsistent
        if err == 0 && err_dual < incons {
            report.violations_zero_risk += 1;
        }
        let slack = err + err_dual - incons;
        if slack < report.tightest_slack {
            report.tightest_slack = slack;
            report.tightest_classifier = classifier.clone();
        }
    }
    Ok(report)
}

/// Feasible-hypothesis count under the orbit constraints induced by
/// `ops`, with the exact VC dimension for binary tasks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibleReport {
    pub input_count: usize,
    /// Total size of the non-trivial orbits found.
    pub constrained_inputs: usize,
    pub feasible_count: u64,
    /// `arity^(n - orbits)`.
    pub bound: u64,
    pub equality_attained: bool,
    /// Exhaustive-shattering VC dimension; only computed for arity 2.
    pub vc_dim: Option<usize>,
    /// `n - constrained_inputs / 2`.
    pub vc_bound: usize,
}

/// Derive orbit pairs on the task's input list from `ops` directly: an
/// input pairs with its transform when the transform is itself one of
/// the listed inputs. Inputs claimed by two different orbits are
/// rejected. With no ops the class is unconstrained.
pub fn count_feasible_hypotheses(
    task: &FiniteTask,
    ops: &[DualityOp],
) -> Result<FeasibleReport> {
    let n = task.len();
    let total = enumeration_size(task.arity, n)?;

    let mut orbit_of: Vec<Option<usize>> = vec![None; n];
    let mut pairs: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    for op in ops {
        for i in 0..n {
            let (scene, query) = &task.inputs[i];
            if !op.applicable(scene, query) {
                continue;
            }
            let (ds, dq) = op.apply(scene, query)?;
            if ds == *scene && dq == *query {
                continue; // fixed point: no degree of freedom removed
            }
            let Some(j) = task.inputs.iter().position(|(s, q)| *s == ds && *q == dq) else {
                continue; // transform leaves the finite space
            };
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            if pairs.iter().any(|(x, y, _)| (*x, *y) == (a, b)) {
                continue; // same orbit rediscovered from the other side
            }
            if orbit_of[a].is_some() || orbit_of[b].is_some() {
                return Err(SageError::OverlappingOrbits(if orbit_of[a].is_some() {
                    a
                } else {
                    b
                }));
            }
            let forward: Vec<usize> = (0..task.arity)
                .map(|ans| op.map_answer(query, &dq, AnswerIndex(ans)).map(|m| m.0))
                .collect::<Result<_>>()?;
            let map = if a == i {
                forward
            } else {
                // store the map in a -> b direction
                let mut inverse = vec![0usize; task.arity];
                for (src, &dst) in forward.iter().enumerate() {
                    inverse[dst] = src;
                }
                inverse
            };
            let orbit_id = pairs.len();
            orbit_of[a] = Some(orbit_id);
            orbit_of[b] = Some(orbit_id);
            pairs.push((a, b, map));
        }
    }

    let mut feasible_count = 0u64;
    let mut feasible_masks: Vec<u32> = Vec::new();
    let mut classifier = vec![0usize; n];
    for code in 0..total {
        let mut rest = code;
        for slot in classifier.iter_mut() {
            *slot = (rest % task.arity as u64) as usize;
            rest /= task.arity as u64;
        }
        let ok = pairs
            .iter()
            .all(|(a, b, map)| classifier[*b] == map[classifier[*a]]);
        if ok {
            feasible_count += 1;
            if task.arity == 2 {
                let mask = classifier
                    .iter()
                    .enumerate()
                    .fold(0u32, |m, (i, &v)| m | ((v as u32) << i));
                feasible_masks.push(mask);
            }
        }
    }

    let constrained = 2 * pairs.len();
    let bound = (task.arity as u64).pow((n - pairs.len()) as u32);
    let vc_dim = if task.arity == 2 {
        Some(exact_vc_dimension(n, &feasible_masks))
    } else {
        None
    };
    Ok(FeasibleReport {
        input_count: n,
        constrained_inputs: constrained,
        feasible_count,
        bound,
        equality_attained: feasible_count == bound,
        vc_dim,
        vc_bound: n - pairs.len(),
    })
}

/// Largest subset of inputs on which the class realizes every labeling.
fn exact_vc_dimension(n: usize, masks: &[u32]) -> usize {
    let mut best = 0usize;
    for subset in 1u32..(1 << n) {
        let d = subset.count_ones() as usize;
        if d <= best {
            continue;
        }
        let mut seen = std::collections::HashSet::with_capacity(1 << d);
        for &m in masks {
            // project the mask onto the subset's bits
            let mut proj = 0u32;
            let mut bit = 0;
            for i in 0..n {
                if subset & (1 << i) != 0 {
                    proj |= ((m >> i) & 1) << bit;
                    bit += 1;
                }
            }
            seen.insert(proj);
            if seen.len() == 1 << d {
                best = d;
                break;
            }
        }
    }
    best
}

/// Trace of the idealized scheduler dynamics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialTrace {
    pub m: usize,
    pub k: usize,
    pub eps_step: f64,
    pub eta: f64,
    pub tau: f64,
    /// Potential after t whole steps; `phi[0]` is the initial value.
    pub phi: Vec<f64>,
    /// Predicted horizon m*tau / (k*eps - (m-k)*eta) when the rate
    /// condition holds.
    pub t_star: Option<f64>,
    pub condition_met: bool,
    /// First whole step at which the potential is exactly zero.
    pub converged_at: Option<u64>,
    /// First whole step during which an operation reached the threshold.
    pub first_mastery_step: Option<u64>,
}

impl PotentialTrace {
    pub fn decrements(&self) -> Vec<f64> {
        self.phi.windows(2).map(|w| w[0] - w[1]).collect()
    }
}

/// Simulate the idealized dynamics in the fluid limit the expected-rate
/// assumptions describe: within a step the K training slots time-share
/// across the lowest-consistency unmastered operations (tied groups move
/// together), an operation reaching the threshold retires instantly and
/// frees its slot, and unscheduled operations decay toward zero.
///
/// All operations start at consistency zero, the worst admissible state.
pub fn simulate_potential(
    m: usize,
    k: usize,
    eps_step: f64,
    eta: f64,
    tau: f64,
    max_steps: u64,
) -> Result<PotentialTrace> {
    if m == 0 || k == 0 || k > m {
        return Err(SageError::InvalidArg(format!(
            "need 1 <= k <= m, got k={k} m={m}"
        )));
    }
    if !(eps_step > 0.0) || eta < 0.0 || !(tau > 0.0 && tau <= 1.0) {
        return Err(SageError::InvalidArg(
            "need eps > 0, eta >= 0, 0 < tau <= 1".into(),
        ));
    }
    let rate_bound = k as f64 * eps_step - (m - k) as f64 * eta;
    let condition_met = rate_bound > 0.0;
    let t_star = condition_met.then(|| m as f64 * tau / rate_bound);

    // groups of tied consistency levels, ascending; only unmastered ops
    let mut groups: Vec<(f64, usize)> = vec![(0.0, m)];
    let mut phi = vec![tau * m as f64];
    let mut converged_at = None;
    let mut first_mastery_step = None;

    for step in 1..=max_steps {
        let mut remaining = 1.0f64;
        while remaining > 1e-12 && !groups.is_empty() {
            // slot assignment: lowest groups first
            let mut rates = Vec::with_capacity(groups.len());
            let mut before = 0usize;
            for &(level, count) in groups.iter() {
                let slots = k.saturating_sub(before).min(count);
                let decay = if level > 0.0 {
                    (count - slots) as f64 * eta
                } else {
                    0.0
                };
                rates.push((slots as f64 * eps_step - decay) / count as f64);
                before += count;
            }
            // earliest event: a group hits tau, adjacent groups meet, a
            // decaying group reaches zero, or the step ends
            let mut dt = remaining;
            for (i, &(level, _)) in groups.iter().enumerate() {
                let r = rates[i];
                if r > 0.0 {
                    dt = dt.min((tau - level) / r);
                } else if r < 0.0 {
                    dt = dt.min(level / -r);
                }
                if i + 1 < groups.len() && rates[i] > rates[i + 1] {
                    let gap = groups[i + 1].0 - level;
                    dt = dt.min(gap / (rates[i] - rates[i + 1]));
                }
            }
            if dt <= 0.0 {
                break; // stationary (e.g. exactly balanced rates)
            }
            for (i, g) in groups.iter_mut().enumerate() {
                g.0 += rates[i] * dt;
                if g.0 < 0.0 {
                    g.0 = 0.0;
                }
            }
            remaining -= dt;

            // retire groups that reached the threshold
            let before_len = groups.len();
            groups.retain(|&(level, _)| level < tau - 1e-12);
            if groups.len() != before_len && first_mastery_step.is_none() {
                first_mastery_step = Some(step);
            }
            // merge groups that met
            groups.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut merged: Vec<(f64, usize)> = Vec::with_capacity(groups.len());
            for &(level, count) in groups.iter() {
                match merged.last_mut() {
                    Some((l, c)) if (level - *l).abs() <= 1e-12 => *c += count,
                    _ => merged.push((level, count)),
                }
            }
            groups = merged;
        }
        let value: f64 = groups.iter().map(|&(l, c)| (tau - l) * c as f64).sum();
        phi.push(value.max(0.0));
        if groups.is_empty() {
            converged_at = Some(step);
            break;
        }
        // stationary potential: nothing will change from here on
        let len = phi.len();
        if !condition_met && len >= 2 && (phi[len - 1] - phi[len - 2]).abs() < 1e-15 {
            break;
        }
    }

    Ok(PotentialTrace {
        m,
        k,
        eps_step,
        eta,
        tau,
        phi,
        t_star,
        condition_met,
        converged_at,
        first_mastery_step,
    })
}

/// Potential of a set of consistencies against a threshold; diagnostic
/// overlay for real training journals.
pub fn potential_value(consistencies: &[f64], tau: f64) -> f64 {
    consistencies.iter().map(|c| (tau - c).max(0.0)).sum()
}

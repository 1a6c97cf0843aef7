//! Batch driver: training runs, consistency probing, verification
//! suites, report emission and corpus export.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 verification
//! violation, 3 runtime failure. Set SAGE_LOG=debug for diagnostics.

use clap::{Args, Parser, Subcommand};
use sage_core::artifacts::{
    self, load_checkpoint, load_policy, read_jsonl, save_checkpoint, write_consistency_csv,
    write_jsonl, write_rewards_csv, write_states_csv, RunManifest, CHECKPOINT_FILE, JOURNAL_FILE,
    MANIFEST_FILE, METRICS_FILE,
};
use sage_core::duality::{builtin_by_id, builtin_pool, compose, verify_axiom, DualityOp};
use sage_core::error::SageError;
use sage_core::pool::{estimate_consistency, ProbeReport};
use sage_core::scene::{sample_instance, CorpusRecord, EnvConfig};
use sage_core::theory::{
    build_task, count_feasible_hypotheses, simulate_potential, verify_theorem1,
};
use sage_core::trainer::{StepMetrics, TrainConfig, Trainer};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sage", version, about = "Duality-consistency training lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training session and write its artifacts.
    Train(TrainArgs),
    /// Estimate per-operation consistency of a checkpointed policy.
    Probe(ProbeArgs),
    /// Run a verification suite.
    Verify(VerifyArgs),
    /// Emit plot-ready CSV series from a finished run.
    Report(ReportArgs),
    /// Export a (scene, query, answer) corpus as JSONL.
    GenCorpus(GenCorpusArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for manifest, metrics, journal and checkpoints.
    #[arg(long, default_value = "sage-run")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override config total_steps.
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Args)]
struct ProbeArgs {
    /// Trainer checkpoint or bare policy checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated operation ids; defaults to the checkpoint's pool
    /// (or the built-ins for a bare policy).
    #[arg(long, value_delimiter = ',')]
    ops: Vec<String>,
    /// Probe-corpus size.
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Write the probe reports as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite: axiom, theorem1, prop2, prop3 or all.
    suite: String,
    /// In-domain samples per operation (axiom suite).
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Random depth-2 compositions to check (axiom suite).
    #[arg(long, default_value_t = 25)]
    compositions: usize,
    /// Random finite tasks (theorem1 / prop2 suites).
    #[arg(long, default_value_t = 100)]
    tasks: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    /// Pool size for the convergence simulation.
    #[arg(long, default_value_t = 4)]
    m: usize,
    /// Active slots for the convergence simulation.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0.02)]
    eps: f64,
    #[arg(long, default_value_t = 0.004)]
    eta: f64,
    #[arg(long, default_value_t = 0.75)]
    tau: f64,
    /// Write the verification summaries as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding metrics.jsonl and lifecycle.jsonl.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value = "corpus.jsonl")]
    out: PathBuf,
    /// Optional train config supplying the environment settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VerificationSummary {
    claim: String,
    instances: u64,
    violations: u64,
    tightest_case: Option<String>,
}

fn exit_code_for(err: &SageError) -> u8 {
    match err {
        SageError::Config { .. } | SageError::InvalidArg(_) | SageError::UnknownOp(_) => 1,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("SAGE_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Report(args) => cmd_report(args),
        Command::GenCorpus(args) => cmd_gen_corpus(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn load_config(path: Option<&Path>) -> sage_core::Result<TrainConfig> {
    let config = match path {
        Some(p) => {
            let raw = std::fs::read_to_string(p)?;
            serde_json::from_str(&raw).map_err(|e| SageError::Config {
                field: p.display().to_string(),
                reason: e.to_string(),
            })?
        }
        None => TrainConfig::default(),
    };
    Ok(config)
}

fn cmd_train(args: TrainArgs) -> sage_core::Result<u8> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(steps) = args.steps {
        config.total_steps = steps;
    }
    config.validate()?;
    std::fs::create_dir_all(&args.out)?;

    let started = artifacts::unix_now();
    let mut trainer = Trainer::new(config.clone())?;
    let mut metrics: Vec<StepMetrics> = Vec::new();
    let mut journal = Vec::new();
    log::info!("training {} steps with seed {}", config.total_steps, config.seed);
    while trainer.step < config.total_steps {
        match trainer.train_step() {
            Ok((m, events)) => {
                metrics.push(m);
                journal.extend(events);
            }
            Err(e) => {
                // leave behind what we have plus a diagnostic snapshot
                write_jsonl(&args.out.join(METRICS_FILE), &metrics)?;
                write_jsonl(&args.out.join(JOURNAL_FILE), &journal)?;
                let _ = save_checkpoint(&args.out.join("diagnostic"), &trainer);
                return Err(e);
            }
        }
        if config.checkpoint_interval > 0 && trainer.step % config.checkpoint_interval == 0 {
            save_checkpoint(&args.out, &trainer)?;
        }
    }
    write_jsonl(&args.out.join(METRICS_FILE), &metrics)?;
    write_jsonl(&args.out.join(JOURNAL_FILE), &journal)?;
    let checkpoint = save_checkpoint(&args.out, &trainer)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config,
        started_unix: started,
        finished_unix: artifacts::unix_now(),
        metrics_path: METRICS_FILE.to_string(),
        journal_path: JOURNAL_FILE.to_string(),
        checkpoint_path: CHECKPOINT_FILE.to_string(),
    };
    let file = std::fs::File::create(args.out.join(MANIFEST_FILE))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &manifest)?;
    println!(
        "run complete: {} steps, artifacts in {}",
        trainer.step,
        args.out.display()
    );
    let _ = checkpoint;
    Ok(0)
}

fn cmd_probe(args: ProbeArgs) -> sage_core::Result<u8> {
    if args.samples == 0 {
        return Err(SageError::InvalidArg("--samples must be >= 1".into()));
    }
    let (params, pool_ops, env) = match load_checkpoint(&args.checkpoint) {
        Ok(trainer) => {
            let ops: Vec<DualityOp> =
                trainer.pool.records.iter().map(|r| r.op.clone()).collect();
            (trainer.params.clone(), ops, trainer.config.env.clone())
        }
        Err(_) => (
            load_policy(&args.checkpoint)?,
            builtin_pool(),
            EnvConfig::default(),
        ),
    };
    let ops: Vec<DualityOp> = if args.ops.is_empty() {
        pool_ops
    } else {
        args.ops
            .iter()
            .map(|id| {
                pool_ops
                    .iter()
                    .find(|op| op.id() == *id)
                    .cloned()
                    .ok_or_else(|| SageError::UnknownOp(id.clone()))
            })
            .collect::<sage_core::Result<_>>()?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut corpus = Vec::with_capacity(args.samples);
    while corpus.len() < args.samples {
        let (scene, query, _) = sample_instance(&mut rng, &env)?;
        corpus.push((scene, query));
    }

    let mut reports: Vec<ProbeReport> = Vec::new();
    println!("{:<28} {:>11} {:>8}", "operation", "consistency", "samples");
    for op in &ops {
        let filtered: Vec<_> = corpus
            .iter()
            .filter(|(s, q)| op.applicable(s, q))
            .cloned()
            .collect();
        if filtered.is_empty() {
            println!("{:<28} {:>11} {:>8}", op.id(), "-", 0);
            continue;
        }
        let report = estimate_consistency(&params, op, &filtered, 0)?;
        println!(
            "{:<28} {:>11.4} {:>8}",
            report.op_id, report.consistency, report.sample_count
        );
        reports.push(report);
    }
    if let Some(out) = args.out {
        let file = std::fs::File::create(out)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &reports)?;
    }
    Ok(0)
}

fn verify_axiom_suite(args: &VerifyArgs) -> sage_core::Result<VerificationSummary> {
    let env = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut instances = 0u64;
    let mut violations = 0u64;
    for op in builtin_pool() {
        let report = verify_axiom(&op, args.samples, &mut rng, &env)?;
        println!(
            "axiom {:<28} {:>7} samples  {} violations",
            report.op_id,
            report.samples_tested,
            report.violations.len()
        );
        instances += report.samples_tested as u64;
        violations += report.violations.len() as u64;
    }
    let builtins = builtin_pool();
    for _ in 0..args.compositions {
        let a = builtins.choose(&mut rng).expect("non-empty");
        let b = builtins.choose(&mut rng).expect("non-empty");
        let chain = compose(a, b);
        let report = verify_axiom(&chain, args.samples.min(2000), &mut rng, &env)?;
        instances += report.samples_tested as u64;
        violations += report.violations.len() as u64;
        if !report.holds() {
            println!("axiom {:<28} VIOLATED", report.op_id);
        }
    }
    Ok(VerificationSummary {
        claim: "oracle commutes with every operation on its domain".into(),
        instances,
        violations,
        tightest_case: None,
    })
}

fn theory_task_shapes(i: usize) -> (&'static str, usize, usize, usize) {
    // rotate op, arity and orbit structure
    const OPS2: [&str; 6] = [
        "hflip",
        "vflip",
        "rot180",
        "negation",
        "option_reverse",
        "paraphrase",
    ];
    const OPS3: [&str; 3] = ["paraphrase", "option_cycle", "hflip"];
    if i % 3 == 2 {
        let op = OPS3[(i / 3) % OPS3.len()];
        let pairs = 1 + i % 2; // N <= 7 keeps 3^N enumerable
        (op, 3, pairs, (7 - 2 * pairs).min(i % 3))
    } else {
        let op = OPS2[i % OPS2.len()];
        let pairs = 1 + i % 3;
        (op, 2, pairs, (8 - 2 * pairs).min(i % 3))
    }
}

fn verify_theorem1_suite(args: &VerifyArgs) -> sage_core::Result<VerificationSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut instances = 0u64;
    let mut violations = 0u64;
    let mut tightest: Option<(i64, String)> = None;
    for i in 0..args.tasks {
        let (op_id, arity, pairs, singles) = theory_task_shapes(i);
        let env = EnvConfig {
            option_counts: vec![arity],
            ..EnvConfig::default()
        };
        let op = builtin_by_id(op_id)?;
        let task = build_task(&mut rng, &env, &op, arity, pairs, singles)?;
        let report = verify_theorem1(&task)?;
        instances += report.classifiers_checked;
        violations += report.violations_lower_bound
            + report.violations_zero_risk
            + report.violations_pointwise;
        if tightest.as_ref().map_or(true, |(s, _)| report.tightest_slack < *s) {
            tightest = Some((
                report.tightest_slack,
                format!(
                    "op {op_id}, N {}, slack {}",
                    task.len(),
                    report.tightest_slack
                ),
            ));
        }
    }
    println!(
        "theorem1: {} classifiers over {} tasks, {} violations",
        instances, args.tasks, violations
    );
    Ok(VerificationSummary {
        claim: "augmented risk is bounded below by half the inconsistency".into(),
        instances,
        violations,
        tightest_case: tightest.map(|(_, s)| s),
    })
}

fn verify_prop2_suite(args: &VerifyArgs) -> sage_core::Result<VerificationSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut instances = 0u64;
    let mut violations = 0u64;
    let mut equality_seen = false;
    for i in 0..args.tasks {
        let (op_id, arity, pairs, singles) = theory_task_shapes(i);
        let env = EnvConfig {
            option_counts: vec![arity],
            ..EnvConfig::default()
        };
        let op = builtin_by_id(op_id)?;
        let task = build_task(&mut rng, &env, &op, arity, pairs, singles)?;
        let report = count_feasible_hypotheses(&task, &[op])?;
        instances += 1;
        if report.feasible_count > report.bound {
            violations += 1;
        }
        if let Some(vc) = report.vc_dim {
            if vc > report.vc_bound {
                violations += 1;
            }
        }
        equality_seen |= report.equality_attained;
    }
    println!(
        "prop2: {} tasks, {} violations, equality attained: {}",
        instances, violations, equality_seen
    );
    Ok(VerificationSummary {
        claim: "orbit constraints cap the feasible class and its VC dimension".into(),
        instances,
        violations,
        tightest_case: equality_seen.then(|| "count bound attained with equality".into()),
    })
}

fn verify_prop3_suite(args: &VerifyArgs) -> sage_core::Result<(VerificationSummary, bool)> {
    let trace = simulate_potential(args.m, args.k, args.eps, args.eta, args.tau, 100_000)?;
    if !trace.condition_met {
        println!(
            "prop3: non-convergent, condition unmet (k*eps = {} <= (m-k)*eta = {})",
            args.k as f64 * args.eps,
            (args.m - args.k) as f64 * args.eta
        );
        return Ok((
            VerificationSummary {
                claim: "potential reaches zero within the predicted horizon".into(),
                instances: 1,
                violations: 0,
                tightest_case: Some("rate condition unmet; nothing to assert".into()),
            },
            false,
        ));
    }
    let t_star = trace.t_star.expect("condition met");
    let horizon = t_star.ceil() as u64;
    let converged = trace.converged_at;
    let ok = converged.map_or(false, |t| t <= horizon);
    println!(
        "prop3: T* = {t_star:.4}, converged at {:?}, horizon {horizon}, ok: {ok}",
        converged
    );
    Ok((
        VerificationSummary {
            claim: "potential reaches zero within the predicted horizon".into(),
            instances: 1,
            violations: u64::from(!ok),
            tightest_case: converged.map(|t| format!("zero at step {t} of {horizon}")),
        },
        true,
    ))
}

fn cmd_verify(args: VerifyArgs) -> sage_core::Result<u8> {
    let mut summaries = Vec::new();
    match args.suite.as_str() {
        "axiom" => summaries.push(verify_axiom_suite(&args)?),
        "theorem1" => summaries.push(verify_theorem1_suite(&args)?),
        "prop2" => summaries.push(verify_prop2_suite(&args)?),
        "prop3" => summaries.push(verify_prop3_suite(&args)?.0),
        "all" => {
            summaries.push(verify_axiom_suite(&args)?);
            summaries.push(verify_theorem1_suite(&args)?);
            summaries.push(verify_prop2_suite(&args)?);
            summaries.push(verify_prop3_suite(&args)?.0);
        }
        other => {
            return Err(SageError::InvalidArg(format!(
                "unknown suite `{other}` (expected axiom|theorem1|prop2|prop3|all)"
            )))
        }
    }
    if let Some(out) = &args.out {
        let file = std::fs::File::create(out)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &summaries)?;
    }
    let violations: u64 = summaries.iter().map(|s| s.violations).sum();
    for s in &summaries {
        println!("{}: {} instances, {} violations", s.claim, s.instances, s.violations);
    }
    Ok(if violations > 0 { 2 } else { 0 })
}

fn cmd_report(args: ReportArgs) -> sage_core::Result<u8> {
    let metrics_path = args.run.join(METRICS_FILE);
    let journal_path = args.run.join(JOURNAL_FILE);
    if !metrics_path.exists() || !journal_path.exists() {
        return Err(SageError::Checkpoint(format!(
            "{} does not contain {METRICS_FILE} and {JOURNAL_FILE}",
            args.run.display()
        )));
    }
    let metrics: Vec<StepMetrics> = read_jsonl(&metrics_path)?;
    let journal: Vec<sage_core::pool::LifecycleEvent> = read_jsonl(&journal_path)?;
    write_rewards_csv(&args.run.join("rewards.csv"), &metrics)?;
    write_consistency_csv(&args.run.join("consistency.csv"), &journal)?;
    write_states_csv(&args.run.join("states.csv"), &journal)?;
    println!(
        "wrote rewards.csv, consistency.csv, states.csv to {}",
        args.run.display()
    );
    Ok(0)
}

fn cmd_gen_corpus(args: GenCorpusArgs) -> sage_core::Result<u8> {
    if args.count == 0 {
        return Err(SageError::InvalidArg("--count must be >= 1".into()));
    }
    let env = load_config(args.config.as_deref())?.env;
    env.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut records = Vec::with_capacity(args.count);
    while records.len() < args.count {
        let (scene, query, truth) = sample_instance(&mut rng, &env)?;
        records.push(CorpusRecord::new(&scene, &query, truth));
    }
    write_jsonl(&args.out, &records)?;
    println!("wrote {} records to {}", records.len(), args.out.display());
    Ok(0)
}

//! Experiment families: each expands a config into independent runs,
//! executes them on a worker pool and writes per-run record streams,
//! aggregated curves and a summary.
//!
//! Output layout under the output directory:
//!
//! ```text
//! config.toml                 resolved configuration
//! runs/<cell>/seed_<s>.jsonl  record stream of one run
//! curves/<cell>_<metric>.csv  x,mean,ci_low,ci_high,n
//! checkpoints/<mode>_seed_<s>.ckpt   (transfer only)
//! summary.json                final scores per cell
//! metadata.json               wall-clock timestamps (the only
//!                             non-reproducible file)
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, curve, mean_ci, median, write_csv, Metric};
use super::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::residual::{evaluate, train, EvalRecord, Mode, Policy, RunSpec};

/// One training run of the experiment.
#[derive(Debug, Clone)]
pub struct Job {
    pub cell: String,
    pub sweep_value: Option<f64>,
    pub spec: RunSpec,
    /// Where to save the final agent, if anywhere.
    pub save_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub cell: String,
    pub seed: u64,
    pub evals: Vec<EvalRecord>,
    pub aborted: Option<String>,
}

/// Spread of one score over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    /// 95% normal CI half-width (0 for a single seed).
    pub ci_half_width: f64,
}

impl Stat {
    pub fn new(per_seed: Vec<f64>) -> Self {
        let (mean, ci_half_width) = mean_ci(&per_seed);
        Self { mean, median: median(&per_seed), ci_half_width, per_seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub name: String,
    pub mode: Mode,
    pub sweep_value: Option<f64>,
    /// Seeds that completed, in config order.
    pub seeds: Vec<u64>,
    pub aborted_seeds: Vec<u64>,
    pub final_return: Stat,
    pub final_success: Stat,
    /// First evaluation step of a sustained solve, per seed (`None` when the
    /// run never solved the task).
    pub steps_to_solve: Vec<Option<u64>>,
    /// Median over seeds with unsolved runs counted as infinite; `None`
    /// when that median is infinite.
    pub median_steps_to_solve: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellSummary>,
}

impl Summary {
    pub fn cell(&self, name: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.name == name)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Median treating `None` as +infinity.
pub fn censored_median(values: &[Option<u64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|s| s.map_or(f64::INFINITY, |s| s as f64)).collect();
    v.sort_by(f64::total_cmp);
    let m = median(&v);
    m.is_finite().then_some(m)
}

/// Mean of the last `k` evaluations.
fn final_score(evals: &[EvalRecord], k: usize, metric: Metric) -> f64 {
    let tail = &evals[evals.len().saturating_sub(k)..];
    tail.iter().map(|e| metric.of(e)).sum::<f64>() / tail.len() as f64
}

pub fn cell_name(prefix: &str, value: Option<f64>, kind: ExperimentKind) -> String {
    let tag = match kind {
        ExperimentKind::VariationSweep => "r",
        ExperimentKind::NoiseSweep => "sigma",
        ExperimentKind::BiasSweep => "mu",
        _ => "",
    };
    match value {
        Some(v) => format!("{prefix}_{tag}{v}"),
        None => prefix.to_string(),
    }
}

fn run_path(out: &Path, cell: &str, seed: u64) -> PathBuf {
    out.join("runs").join(cell).join(format!("seed_{seed}.jsonl"))
}

fn checkpoint_path(out: &Path, mode: Mode, seed: u64) -> PathBuf {
    out.join("checkpoints").join(format!("{}_seed_{seed}.ckpt", mode.name()))
}

fn execute(job: &Job, out: &Path) -> Result<RunResult> {
    let path = run_path(out, &job.cell, job.spec.seed);
    fs::create_dir_all(path.parent().expect("run path has a parent"))?;
    let mut w = BufWriter::new(File::create(&path)?);
    let outcome = train(&job.spec, Some(&mut w))?;
    w.flush()?;
    if let (Some(ckpt), Some(agent)) = (&job.save_checkpoint, &outcome.agent) {
        if outcome.log.aborted.is_none() {
            fs::create_dir_all(ckpt.parent().expect("checkpoint path has a parent"))?;
            agent.save(ckpt)?;
        }
    }
    log::info!("{} seed {}: done", job.cell, job.spec.seed);
    Ok(RunResult { cell: job.cell.clone(), seed: job.spec.seed, evals: outcome.log.evals, aborted: outcome.log.aborted })
}

/// Runs every job, `workers` at a time. Results come back in job order, so
/// the worker count never changes any output.
pub fn run_jobs(jobs: &[Job], workers: usize, out: &Path) -> Result<Vec<RunResult>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunResult>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = execute(&jobs[i], out);
                results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Builds the summary of one trained cell and writes its curves.
fn summarize_cell(cfg: &ExperimentConfig, out: &Path, job: &Job, runs: &[&RunResult]) -> Result<CellSummary> {
    let (ok, aborted): (Vec<&&RunResult>, Vec<&&RunResult>) = runs.iter().partition(|r| r.aborted.is_none());
    for r in &aborted {
        log::warn!("{} seed {} aborted: {}", r.cell, r.seed, r.aborted.as_deref().unwrap_or(""));
    }
    if aborted.len() * 2 > runs.len() {
        return Err(Error::RunAborted(format!("{}: {} of {} seeds aborted", job.cell, aborted.len(), runs.len())));
    }
    for metric in [Metric::Return, Metric::Success] {
        let curves: Vec<Vec<(f64, f64)>> = ok.iter().map(|r| curve(&r.evals, metric)).collect();
        let grid = eval_grid(&job.spec);
        let agg = aggregate(&curves, &grid)?;
        if agg.single_run {
            log::warn!("{}: single run, confidence interval collapsed onto the mean", job.cell);
        }
        write_curve(out, &job.cell, metric, &agg.points)?;
    }
    let steps: Vec<Option<u64>> =
        ok.iter().map(|r| steps_to_solve(&r.evals, cfg.solve_threshold, cfg.solve_sustain)).collect();
    Ok(CellSummary {
        name: job.cell.clone(),
        mode: job.spec.mode,
        sweep_value: job.sweep_value,
        seeds: ok.iter().map(|r| r.seed).collect(),
        aborted_seeds: aborted.iter().map(|r| r.seed).collect(),
        final_return: Stat::new(ok.iter().map(|r| final_score(&r.evals, cfg.final_evals, Metric::Return)).collect()),
        final_success: Stat::new(ok.iter().map(|r| final_score(&r.evals, cfg.final_evals, Metric::Success)).collect()),
        median_steps_to_solve: censored_median(&steps),
        steps_to_solve: steps,
    })
}

pub fn steps_to_solve(evals: &[EvalRecord], threshold: f64, sustain: usize) -> Option<u64> {
    crate::residual::TrainLog { evals: evals.to_vec(), ..Default::default() }.steps_to_solve(threshold, sustain)
}

fn eval_grid(spec: &RunSpec) -> Vec<f64> {
    let t = &spec.train;
    let mut g: Vec<f64> = (0..=t.total_steps / t.eval_interval).map(|k| (k * t.eval_interval) as f64).collect();
    if t.total_steps % t.eval_interval != 0 {
        g.push(t.total_steps as f64);
    }
    g
}

fn write_curve(out: &Path, cell: &str, metric: Metric, points: &[super::aggregate::CurvePoint]) -> Result<()> {
    let dir = out.join("curves");
    fs::create_dir_all(&dir)?;
    let name = match metric {
        Metric::Return => "return",
        Metric::Success => "success",
    };
    let mut w = BufWriter::new(File::create(dir.join(format!("{cell}_{name}.csv")))?);
    write_csv(&mut w, points)?;
    Ok(w.flush()?)
}

/// The hand controller does not learn, so it is evaluated once per seed
/// (on that seed's evaluation episodes) and drawn as a flat curve.
fn hand_only_cell(cfg: &ExperimentConfig, out: &Path, name: String, value: Option<f64>, like: &RunSpec) -> Result<CellSummary> {
    let mut rets = Vec::new();
    let mut succ = Vec::new();
    for &seed in &cfg.seeds {
        let r = evaluate(
            Policy::HandOnly,
            &like.physics,
            &like.env,
            &like.controller,
            &like.train,
            like.train.eval_episodes,
            seed,
        )?;
        rets.push(r.mean_return);
        succ.push(r.success_rate);
    }
    let grid = eval_grid(like);
    for (metric, vals) in [(Metric::Return, &rets), (Metric::Success, &succ)] {
        let curves: Vec<Vec<(f64, f64)>> = vals.iter().map(|&v| vec![(0.0, v)]).collect();
        write_curve(out, &name, metric, &aggregate(&curves, &grid)?.points)?;
    }
    Ok(CellSummary {
        name,
        mode: Mode::HandOnly,
        sweep_value: value,
        seeds: cfg.seeds.clone(),
        aborted_seeds: vec![],
        final_return: Stat::new(rets),
        final_success: Stat::new(succ),
        steps_to_solve: vec![],
        median_steps_to_solve: None,
    })
}

/// Spec for a sweep point: the sweep value replaces one environment field.
fn swept(cfg: &ExperimentConfig, mode: Mode, seed: u64, value: f64) -> RunSpec {
    let mut spec = cfg.spec(mode, seed);
    match cfg.kind {
        ExperimentKind::VariationSweep => spec.env.rotation_range = value,
        ExperimentKind::NoiseSweep => spec.env.noise.std = value,
        ExperimentKind::BiasSweep => spec.env.noise.bias = value,
        _ => unreachable!("only sweeps have sweep values"),
    }
    spec
}

/// Group results by cell in job order and summarise each.
fn summarize_jobs(cfg: &ExperimentConfig, out: &Path, jobs: &[Job], results: &[RunResult]) -> Result<Vec<CellSummary>> {
    let mut cells = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    for job in jobs {
        if seen.contains(&job.cell.as_str()) {
            continue;
        }
        seen.push(&job.cell);
        let runs: Vec<&RunResult> = results.iter().filter(|r| r.cell == job.cell).collect();
        cells.push(summarize_cell(cfg, out, job, &runs)?);
    }
    Ok(cells)
}

/// Runs the configured experiment into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    cfg.validate()?;
    let started = SystemTime::now();
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;

    let mut cells = Vec::new();
    match cfg.kind {
        ExperimentKind::SampleEfficiency => {
            let jobs: Vec<Job> = [Mode::Residual, Mode::PureRl]
                .into_iter()
                .flat_map(|mode| {
                    cfg.seeds.iter().map(move |&seed| Job {
                        cell: mode.name().to_string(),
                        sweep_value: None,
                        spec: cfg.spec(mode, seed),
                        save_checkpoint: None,
                    })
                })
                .collect();
            let results = run_jobs(&jobs, cfg.workers, out)?;
            cells.extend(summarize_jobs(cfg, out, &jobs, &results)?);
            cells.push(hand_only_cell(cfg, out, "hand_only".into(), None, &cfg.spec(Mode::HandOnly, 0))?);
        }
        ExperimentKind::VariationSweep | ExperimentKind::NoiseSweep | ExperimentKind::BiasSweep => {
            let jobs: Vec<Job> = cfg
                .sweep
                .iter()
                .flat_map(|&v| {
                    cfg.seeds.iter().map(move |&seed| Job {
                        cell: cell_name("residual", Some(v), cfg.kind),
                        sweep_value: Some(v),
                        spec: swept(cfg, Mode::Residual, seed, v),
                        save_checkpoint: None,
                    })
                })
                .collect();
            let results = run_jobs(&jobs, cfg.workers, out)?;
            cells.extend(summarize_jobs(cfg, out, &jobs, &results)?);
            for &v in &cfg.sweep {
                let like = swept(cfg, Mode::HandOnly, 0, v);
                cells.push(hand_only_cell(cfg, out, cell_name("hand_only", Some(v), cfg.kind), Some(v), &like)?);
            }
        }
        ExperimentKind::Transfer => cells = run_transfer(cfg, out)?,
    }

    let summary = Summary { kind: cfg.kind, seeds: cfg.seeds.clone(), cells };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    write_metadata(out, started)?;
    Ok(summary)
}

fn run_transfer(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<CellSummary>> {
    let t = &cfg.transfer;
    let modes = [Mode::Residual, Mode::PureRl];
    let source: Vec<Job> = modes
        .iter()
        .flat_map(|&mode| {
            cfg.seeds.iter().map(move |&seed| {
                let mut spec = cfg.spec(mode, seed);
                spec.train.total_steps = t.source_steps;
                Job {
                    cell: format!("source_{}", mode.name()),
                    sweep_value: None,
                    spec,
                    save_checkpoint: Some(checkpoint_path(out, mode, seed)),
                }
            })
        })
        .collect();
    let source_results = run_jobs(&source, cfg.workers, out)?;
    let mut cells = summarize_jobs(cfg, out, &source, &source_results)?;

    let target_physics = t.target_physics(&cfg.physics);
    let mut target = Vec::new();
    for &mode in &modes {
        for init in ["scratch", "sim"] {
            for r in source_results.iter().filter(|r| r.cell == format!("source_{}", mode.name())) {
                if init == "sim" && r.aborted.is_some() {
                    continue;
                }
                let mut spec = cfg.spec(mode, r.seed);
                spec.physics = target_physics.clone();
                spec.train.total_steps = t.target_steps;
                if init == "sim" {
                    spec.init_checkpoint = Some(checkpoint_path(out, mode, r.seed));
                    // The loaded policy acts from the first step.
                    spec.agent.warmup_steps = 0;
                }
                target.push(Job { cell: format!("{init}_{}", mode.name()), sweep_value: None, spec, save_checkpoint: None });
            }
        }
    }
    let target_results = run_jobs(&target, cfg.workers, out)?;
    cells.extend(summarize_jobs(cfg, out, &target, &target_results)?);
    Ok(cells)
}

#[derive(Serialize)]
struct Metadata {
    started_unix: f64,
    finished_unix: f64,
    version: &'static str,
}

fn write_metadata(out: &Path, started: SystemTime) -> Result<()> {
    let secs = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let meta = Metadata { started_unix: secs(started), finished_unix: secs(SystemTime::now()), version: env!("CARGO_PKG_VERSION") };
    fs::write(out.join("metadata.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Aggregates every record stream found under `dir` (recursively) into one
/// curve of `metric`. Aborted runs are skipped.
pub fn aggregate_dir(dir: &Path, metric: Metric) -> Result<(Vec<super::aggregate::CurvePoint>, usize)> {
    let mut files = Vec::new();
    collect_jsonl(dir, &mut files)?;
    files.sort();
    let mut curves = Vec::new();
    for f in &files {
        let reader = std::io::BufReader::new(File::open(f)?);
        match super::aggregate::read_evals(reader)? {
            Some(evals) if !evals.is_empty() => curves.push(curve(&evals, metric)),
            Some(_) => {}
            None => log::warn!("{} aborted; skipped", f.display()),
        }
    }
    let grid = super::aggregate::union_grid(&curves);
    let agg = aggregate(&curves, &grid)?;
    Ok((agg.points, curves.len()))
}

fn collect_jsonl(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_jsonl(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "jsonl") {
            out.push(path);
        }
    }
    Ok(())
}

//! One configured run end to end, and the files it leaves behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::{parse_config, EnvKind, TrainConfig};
use super::evaluate::{evaluate, rollout_policy, two_period_allocations, write_allocations_csv, Evaluation, Rollout};
use super::split::split_data;
use super::train::{train, train_model_based, TrainOutcome, STREAM_EVAL};
use crate::actor::ActorParams;
use crate::critic::CriticParams;
use crate::env::{
    load_returns_csv, CostSchedule, Environment, FeatureScaling, HistoricalEnv, RegimeVarModel, ReturnData, RsVarEnv,
    TwoPeriodRegimeEnv,
};
use crate::error::{Error, Result};
use crate::mathcore::Rng;
use crate::metrics::{
    csv_err, format_value, performance_summary, weight_summary, write_metrics_csv, CrossingStats, PerfSummary,
    WeightSummary, METRIC_ROWS,
};

pub const CONFIG_FILE: &str = "config.txt";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_BEST: &str = "checkpoint_best";
pub const CHECKPOINT_LAST: &str = "checkpoint_last";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const ICDF_FILE: &str = "icdf.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const BENCHMARK_FILE: &str = "benchmark.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const ALLOCATIONS_FILE: &str = "allocations.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Everything computed from a set of trained parameters.
#[derive(Clone, Debug)]
pub struct Report {
    pub evaluation: Evaluation,
    /// Equal-weight portfolio over the same evaluation paths.
    pub benchmark: Option<Rollout>,
    pub metrics: Option<PerfSummary>,
    pub benchmark_metrics: Option<PerfSummary>,
    pub weights: WeightSummary,
    pub allocations: Option<[[f64; 2]; 2]>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub config: TrainConfig,
    pub outcome: TrainOutcome,
    /// Absent when training diverged.
    pub report: Option<Report>,
}

struct HistoricalEnvs {
    train: HistoricalEnv,
    validation: Option<HistoricalEnv>,
    test: HistoricalEnv,
}

fn load_data(cfg: &TrainConfig) -> Result<Arc<ReturnData>> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("historical runs need a data file (data = <csv>)".into()))?;
    Ok(Arc::new(load_returns_csv(path, cfg.forward_fill)?))
}

fn historical_envs(cfg: &TrainConfig, data: Arc<ReturnData>) -> Result<HistoricalEnvs> {
    let split = split_data(data.rows(), cfg.train_frac, cfg.val_frac)?;
    let cost = CostSchedule::new(cfg.cost, cfg.interest)?;
    let build = |range| {
        HistoricalEnv::new(
            data.clone(),
            range,
            cost,
            cfg.reward_scale,
            cfg.initial_wealth,
            cfg.window,
            FeatureScaling::default(),
        )
        .map(|e| e.with_cash_slot(cfg.cash_slot))
    };
    let train = build(split.train.clone())?;
    let optional = |range: std::ops::Range<usize>| {
        if range.is_empty() {
            Ok(None)
        } else {
            match build(range) {
                Ok(e) => Ok(Some(e)),
                Err(Error::InsufficientData { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        }
    };
    let validation = optional(split.validation)?;
    let test = optional(split.test)?.unwrap_or_else(|| train.clone());
    Ok(HistoricalEnvs { train, validation, test })
}

fn rs_var_model(cfg: &TrainConfig) -> RegimeVarModel {
    let mut m = RegimeVarModel::preset(cfg.scenario);
    m.rf = cfg.rf;
    m
}

fn two_period_env(cfg: &TrainConfig) -> Result<TwoPeriodRegimeEnv> {
    Ok(TwoPeriodRegimeEnv::new(cfg.two_period_model(), cfg.reward_scale)?.with_start(cfg.start_regime))
}

fn equal_weight(dim: usize) -> impl FnMut(&[f64]) -> Result<Vec<f64>> {
    move |_| Ok(vec![1.0 / dim as f64; dim])
}

fn summarize(returns: &[f64]) -> Result<Option<PerfSummary>> {
    match performance_summary(returns) {
        Ok(s) => Ok(Some(s)),
        Err(Error::InsufficientData { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn report_for(
    env: &mut dyn Environment,
    actor: &ActorParams,
    critic: &CriticParams,
    paths: usize,
    steps: usize,
    seed: u64,
    benchmark: bool,
) -> Result<Report> {
    let rng = Rng::new(seed).derive(STREAM_EVAL);
    let evaluation = evaluate(actor, critic, env, paths, steps, &mut rng.clone())?;
    let bench = if benchmark {
        let mut policy = equal_weight(env.action_dim());
        Some(rollout_policy(env, &mut policy, paths, steps, &mut rng.clone())?)
    } else {
        None
    };
    let regimes = evaluation.rollout.regimes();
    let weights = weight_summary(&evaluation.rollout.weights(), regimes.as_deref())?;
    let (metrics, benchmark_metrics) = if benchmark {
        (
            summarize(&evaluation.rollout.returns())?,
            match &bench {
                Some(b) => summarize(&b.returns())?,
                None => None,
            },
        )
    } else {
        (None, None)
    };
    Ok(Report {
        evaluation,
        benchmark: bench,
        metrics,
        benchmark_metrics,
        weights,
        allocations: None,
    })
}

/// Evaluates given parameters in the environment described by `cfg`
/// (out-of-sample rows for historical data when there are any).
pub fn evaluate_params(cfg: &TrainConfig, actor: &ActorParams, critic: &CriticParams) -> Result<Report> {
    match cfg.env {
        EnvKind::TwoPeriod => {
            let mut env = two_period_env(cfg)?;
            let mut report = report_for(&mut env, actor, critic, cfg.eval_paths, 0, cfg.seed, false)?;
            report.allocations = Some(two_period_allocations(actor, &env)?);
            Ok(report)
        }
        EnvKind::RsVar => {
            let mut env = RsVarEnv::new(rs_var_model(cfg), cfg.cost, cfg.reward_scale, cfg.eval_steps)?;
            report_for(&mut env, actor, critic, cfg.eval_paths, cfg.eval_steps, cfg.seed, true)
        }
        EnvKind::Historical => {
            let mut envs = historical_envs(cfg, load_data(cfg)?)?;
            report_for(&mut envs.test, actor, critic, 1, 0, cfg.seed, true)
        }
    }
}

/// Trains per `cfg` and evaluates the best parameters.
pub fn execute(cfg: &TrainConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let outcome = match cfg.env {
        EnvKind::TwoPeriod => train(&mut two_period_env(cfg)?, None, cfg)?,
        EnvKind::RsVar => train_model_based(rs_var_model(cfg), cfg)?,
        EnvKind::Historical => {
            let mut envs = historical_envs(cfg, load_data(cfg)?)?;
            let val = envs.validation.as_mut().map(|e| e as &mut dyn Environment);
            train(&mut envs.train, val, cfg)?
        }
    };
    let report = if outcome.divergence.is_none() {
        Some(evaluate_params(cfg, &outcome.actor, &outcome.critic)?)
    } else {
        None
    };
    Ok(RunOutput {
        config: cfg.clone(),
        outcome,
        report,
    })
}

fn create(dir: &Path, name: &str) -> Result<fs::File> {
    Ok(fs::File::create(dir.join(name))?)
}

#[derive(Serialize)]
struct Summary<'a> {
    env: String,
    tau: f64,
    seed: u64,
    episodes_run: usize,
    best_episode: usize,
    stopped_early: bool,
    divergence: Option<&'a str>,
    crossing: Option<CrossingStats>,
    allocations: Option<[[f64; 2]; 2]>,
}

/// Writes the per-run outputs that depend only on a report.
pub fn write_report(dir: &Path, report: &Report, label: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let ev = &report.evaluation;
    ev.rollout.write_csv(create(dir, TRAJECTORY_FILE)?)?;
    ev.write_icdf_csv(create(dir, ICDF_FILE)?)?;
    write_weights_csv(&report.weights, &ev.rollout, create(dir, WEIGHTS_FILE)?)?;
    if let Some(m) = &report.metrics {
        write_metrics_csv(&[(label.to_string(), m.clone())], create(dir, METRICS_FILE)?)?;
    }
    if let Some(m) = &report.benchmark_metrics {
        write_metrics_csv(&[("equal_weight".to_string(), m.clone())], create(dir, BENCHMARK_FILE)?)?;
    }
    if let Some(a) = &report.allocations {
        write_allocations_csv(a, create(dir, ALLOCATIONS_FILE)?)?;
    }
    Ok(())
}

/// Writes the full run-directory layout.
pub fn write_run_dir(dir: &Path, run: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), run.config.to_text())?;
    let out = &run.outcome;
    out.history.write_csv(create(dir, HISTORY_FILE)?)?;
    Checkpoint::new(&out.actor, &out.critic, out.history.best_episode).save(dir.join(CHECKPOINT_BEST))?;
    Checkpoint::new(&out.last_actor, &out.last_critic, out.history.records.len()).save(dir.join(CHECKPOINT_LAST))?;
    if let Some(report) = &run.report {
        write_report(dir, report, &run_label(dir))?;
    }
    let summary = Summary {
        env: run.config.env.to_string(),
        tau: run.config.tau,
        seed: run.config.seed,
        episodes_run: out.history.records.len(),
        best_episode: out.history.best_episode,
        stopped_early: out.history.stopped_early,
        divergence: out.divergence.as_deref(),
        crossing: run.report.as_ref().map(|r| r.evaluation.crossing),
        allocations: run.report.as_ref().and_then(|r| r.allocations),
    };
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

/// Column name used for a run directory.
pub fn run_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .filter(|n| !n.is_empty() && n != ".")
        .unwrap_or_else(|| "run".into())
}

/// Reads `config.txt` and a checkpoint back from a run directory.
pub fn load_run(dir: &Path, best: bool) -> Result<(TrainConfig, ActorParams, CriticParams)> {
    let text = fs::read_to_string(dir.join(CONFIG_FILE))
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.join(CONFIG_FILE).display())))?;
    let cfg = TrainConfig::from_pairs(&parse_config(&text)?)?;
    let ck = Checkpoint::load(dir.join(if best { CHECKPOINT_BEST } else { CHECKPOINT_LAST }))?;
    let (actor, critic) = ck.restore()?;
    Ok((cfg, actor, critic))
}

/// Re-evaluates a saved run and writes the report files into `out`.
pub fn evaluate_run_dir(dir: &Path, out: &Path) -> Result<Report> {
    let (cfg, actor, critic) = load_run(dir, true)?;
    let report = evaluate_params(&cfg, &actor, &critic)?;
    write_report(out, &report, &run_label(dir))?;
    Ok(report)
}

fn regime_names(rollout: &Rollout) -> BTreeMap<usize, String> {
    let mut names = BTreeMap::new();
    for r in &rollout.rows {
        if let Some(k) = r.regime {
            names.entry(k).or_insert_with(|| r.label.clone());
        }
    }
    names
}

/// `group,count,<asset labels>`: the overall mean and one row per regime.
pub fn write_weights_csv<W: Write>(summary: &WeightSummary, rollout: &Rollout, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["group".to_string(), "count".into()];
    header.extend(rollout.action_labels.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    let mut row = |group: String, count: usize, values: &[f64]| {
        let mut rec = vec![group, count.to_string()];
        rec.extend(values.iter().map(|v| format_value(*v)));
        w.write_record(&rec).map_err(csv_err)
    };
    row("overall".into(), rollout.rows.len(), &summary.overall)?;
    let names = regime_names(rollout);
    for (k, mean, count) in &summary.by_regime {
        let name = names.get(k).cloned().unwrap_or_else(|| k.to_string());
        row(name, *count, mean)?;
    }
    w.flush()?;
    Ok(())
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(csv_err)?;
    Ok((header, rows))
}

/// Joins the `metrics.csv` of several runs side by side, one column per run
/// column, named after the run directory.
pub fn combine_metrics<W: Write>(runs: &[PathBuf], writer: W) -> Result<()> {
    let mut header = vec!["metric".to_string()];
    let mut columns: Vec<Vec<String>> = Vec::new();
    for dir in runs {
        let (h, rows) = read_table(&dir.join(METRICS_FILE))?;
        let names: Vec<&str> = rows.iter().map(|r| r.first().map_or("", String::as_str)).collect();
        if names != METRIC_ROWS {
            return Err(Error::Data(format!("{} does not have the metric rows", dir.display())));
        }
        let label = run_label(dir);
        for c in 1..h.len() {
            header.push(if h.len() == 2 { label.clone() } else { format!("{label}/{}", h[c]) });
            columns.push(rows.iter().map(|r| r.get(c).cloned().unwrap_or_default()).collect());
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&header).map_err(csv_err)?;
    for (i, name) in METRIC_ROWS.iter().enumerate() {
        let mut rec = vec![name.to_string()];
        rec.extend(columns.iter().map(|c| c[i].clone()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Stacks the `weights.csv` of several runs with a leading `run` column.
/// All runs must share the same asset labels.
pub fn combine_weights<W: Write>(runs: &[PathBuf], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut expected: Option<Vec<String>> = None;
    for dir in runs {
        let (h, rows) = read_table(&dir.join(WEIGHTS_FILE))?;
        match &expected {
            None => {
                let mut header = vec!["run".to_string()];
                header.extend(h.iter().cloned());
                w.write_record(&header).map_err(csv_err)?;
                expected = Some(h);
            }
            Some(e) if *e != h => {
                return Err(Error::Config(format!(
                    "{} has different columns ({}) from earlier runs",
                    dir.display(),
                    h.join(",")
                )))
            }
            Some(_) => {}
        }
        let label = run_label(dir);
        for r in rows {
            let mut rec = vec![label.clone()];
            rec.extend(r);
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Seed statistics of the overall mean weights for one `(scenario, tau)` cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightBand {
    pub group: String,
    pub tau: f64,
    pub seeds: usize,
    pub labels: Vec<String>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn weight_band(group: &str, tau: f64, labels: &[String], per_seed: &[Vec<f64>]) -> Result<WeightBand> {
    let dim = labels.len();
    if per_seed.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if let Some(bad) = per_seed.iter().find(|w| w.len() != dim) {
        return Err(Error::Shape {
            expected: dim,
            got: bad.len(),
        });
    }
    let n = per_seed.len() as f64;
    let col = |i: usize| per_seed.iter().map(move |w| w[i]);
    Ok(WeightBand {
        group: group.to_string(),
        tau,
        seeds: per_seed.len(),
        labels: labels.to_vec(),
        mean: (0..dim).map(|i| col(i).sum::<f64>() / n).collect(),
        min: (0..dim).map(|i| col(i).fold(f64::INFINITY, f64::min)).collect(),
        max: (0..dim).map(|i| col(i).fold(f64::NEG_INFINITY, f64::max)).collect(),
    })
}

/// Long format: `group,tau,seeds,asset,mean,min,max`.
pub fn write_weight_bands<W: Write>(bands: &[WeightBand], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "tau", "seeds", "asset", "mean", "min", "max"])
        .map_err(csv_err)?;
    for b in bands {
        for (i, label) in b.labels.iter().enumerate() {
            w.write_record([
                b.group.clone(),
                b.tau.to_string(),
                b.seeds.to_string(),
                label.clone(),
                format_value(b.mean[i]),
                format_value(b.min[i]),
                format_value(b.max[i]),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands_cover_the_seeds() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let b = weight_band("x", 0.5, &labels, &[vec![0.2, 0.8], vec![0.4, 0.6]]).unwrap();
        assert!((b.mean[0] - 0.3).abs() < 1e-15);
        assert_eq!(b.min, vec![0.2, 0.6]);
        assert_eq!(b.max, vec![0.4, 0.8]);
        assert!(weight_band("x", 0.5, &labels, &[vec![1.0]]).is_err());
        let mut buf = Vec::new();
        write_weight_bands(&[b], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn two_period_run_writes_layout() {
        let mut cfg = TrainConfig::defaults(EnvKind::TwoPeriod);
        cfg.episodes = 2;
        cfg.min_epochs = 1;
        cfg.iterations_per_episode = 2;
        cfg.paths_per_episode = 16;
        cfg.eval_paths = 8;
        let run = execute(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("tp");
        write_run_dir(&d, &run).unwrap();
        for f in [CONFIG_FILE, HISTORY_FILE, CHECKPOINT_BEST, CHECKPOINT_LAST, TRAJECTORY_FILE, ICDF_FILE, WEIGHTS_FILE, ALLOCATIONS_FILE, SUMMARY_FILE] {
            assert!(d.join(f).exists(), "{f}");
        }
        let (back, actor, _) = load_run(&d, true).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(actor, run.outcome.actor);
        let again = evaluate_run_dir(&d, &d.join("re")).unwrap();
        assert_eq!(again.evaluation, run.report.unwrap().evaluation);
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use qprl::env::TwoPeriodRegimeModel;
use qprl::quantile_dp::{
    corner_rule_mdp, corner_rule_value, regime_example_solver, static_choice_comparator, value_iteration,
    write_oracle_csv, OracleRow,
};
use qprl::trainer::{
    combine_metrics, combine_weights, evaluate_run_dir, execute, parse_config, parse_override, weight_band,
    write_run_dir, write_weight_bands, EnvKind, RunOutput, TrainConfig,
};
use qprl::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

/// Quantile-targeted portfolio choice: exact oracles and actor-critic training.
///
/// Exit codes: 0 success, 2 usage or configuration error, 3 unreadable
/// data, 4 training diverged (checkpoints are still written).
#[derive(Parser, Debug)]
#[command(name = "qprl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form and brute-force solutions of the textbook examples.
    Oracle(OracleArgs),
    /// Tabular quantile value iteration on the discretised two-period problem.
    Dp(DpArgs),
    /// Train on any environment (see `env`).
    Train(TrainArgs),
    /// Train on the regime-switching VAR simulator.
    TrainSim(TrainArgs),
    /// Re-evaluate a saved run from its checkpoint.
    Evaluate(EvaluateArgs),
    /// Combine metrics and weights of several runs.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Example {
    Regime,
    Static,
    Corner,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, value_enum)]
    example: Example,
    /// Comma-separated quantile levels.
    #[arg(long = "tau", visible_alias = "taus", default_value = "0.1,0.5,0.9")]
    taus: String,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    rf: Option<f64>,
    /// Points on the risky-share grid.
    #[arg(long, default_value_t = 1001)]
    grid: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Regime model fields as key=value (p_ll, p_hh, sigma_low, sigma_high, beta, w0).
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct DpArgs {
    #[arg(long = "tau", visible_alias = "taus", default_value = "0.1,0.5,0.9")]
    taus: String,
    /// Comma-separated numbers of return atoms.
    #[arg(long, default_value = "10,40,160")]
    atoms: String,
    #[arg(long, default_value_t = 0.1)]
    mu: f64,
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    #[arg(long, default_value_t = 0.02)]
    rf: f64,
    #[arg(long, default_value_t = 0.96)]
    beta: f64,
    /// Points on the risky-share grid.
    #[arg(long, default_value_t = 3)]
    grid: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// A count `N` (seeds `seed..seed+N`) or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long = "tau", visible_alias = "taus")]
    taus: Option<String>,
    #[arg(long)]
    cost: Option<f64>,
    /// Scenario name, a comma-separated list, or `all` (simulator only).
    #[arg(long)]
    scenario: Option<String>,
    /// Extra settings as key=value.
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    /// Where to write the report files (defaults to the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Comma-separated run directories.
    #[arg(long, value_delimiter = ',', required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Data(String),
    Diverged,
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Data(_) | Error::InsufficientData { .. } | Error::Json(_) => Failure::Data(msg),
            Error::Io(_) | Error::Numerical(_) | Error::Diverged { .. } | Error::NonConvergence { .. } => {
                Failure::Other(msg)
            }
            _ => Failure::Usage(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn parse_list<T: std::str::FromStr>(what: &str, text: &str) -> CliResult<Vec<T>> {
    let items = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Failure::Usage(format!("invalid {what} '{s}'"))))
        .collect::<CliResult<Vec<T>>>()?;
    if items.is_empty() {
        return Err(Failure::Usage(format!("no {what} given")));
    }
    Ok(items)
}

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("QPRL_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Failure::Usage(format!("QPRL_THREADS must be a positive integer, got '{v}'")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Failure::Other(e.to_string()))
}

fn regime_model(args: &OracleArgs) -> CliResult<TwoPeriodRegimeModel> {
    let mut m = TwoPeriodRegimeModel::default();
    if let Some(v) = args.mu {
        m.mu = v;
    }
    if let Some(v) = args.rf {
        m.rf = v;
    }
    if let Some(v) = args.sigma {
        m.sigma_low = v;
        m.sigma_high = 1.7 * v;
    }
    for o in &args.overrides {
        let (k, v) = parse_override(o)?;
        let x: f64 = v
            .parse()
            .map_err(|_| Failure::Usage(format!("invalid value '{v}' for '{k}'")))?;
        match k.as_str() {
            "p_ll" => m.p_ll = x,
            "p_hh" => m.p_hh = x,
            "sigma_low" => m.sigma_low = x,
            "sigma_high" => m.sigma_high = x,
            "beta" => m.beta = x,
            "w0" => m.w0 = x,
            "mu" => m.mu = x,
            "rf" => m.rf = x,
            _ => return Err(Failure::Usage(format!("unknown model key '{k}'"))),
        }
    }
    m.validate()?;
    Ok(m)
}

fn cmd_oracle(args: &OracleArgs) -> CliResult<()> {
    let taus: Vec<f64> = parse_list("tau", &args.taus)?;
    fs::create_dir_all(&args.out)?;
    let mut rows = Vec::new();
    match args.example {
        Example::Regime => {
            let model = regime_model(args)?;
            for &tau in &taus {
                let s = regime_example_solver(&model, tau, args.grid)?;
                println!(
                    "tau={tau}: alpha0* L={:.3} H={:.3}; alpha1* L={} H={}",
                    s.alpha0[0],
                    s.alpha0[1],
                    s.alpha1[0].share(),
                    s.alpha1[1].share()
                );
                rows.extend(s.rows());
            }
        }
        Example::Static => {
            let mu = args.mu.unwrap_or(0.03);
            let sigma = args.sigma.unwrap_or(0.1);
            let rf = args.rf.unwrap_or(0.04);
            let c = static_choice_comparator(mu, sigma, rf, &taus, 2.0, 2.0)?;
            println!(
                "risk-neutral {} | CARA(a=2) {:.4} | mean-variance(gamma=2) {:.4}",
                c.risk_neutral, c.cara, c.mean_variance
            );
            for q in &c.quantile {
                println!("tau={}: Q={:.6} alpha*={}", q.tau, q.quantile, q.alpha);
                rows.push(OracleRow {
                    tau: q.tau,
                    regime: "static".into(),
                    alpha_star: q.alpha,
                    value: q.quantile,
                });
            }
            fs::write(
                args.out.join("static.json"),
                serde_json::to_string_pretty(&c).map_err(Error::from)?,
            )?;
        }
        Example::Corner => {
            let model = regime_model(args)?;
            for &tau in &taus {
                let q = model.mu + model.sigma_low * qprl::mathcore::inv_std_normal_cdf(tau)?;
                let rule = corner_rule_value(&[q, q], model.rf, model.beta, model.w0, 0)?;
                println!("tau={tau}: value={:.6}", rule.value);
                rows.push(OracleRow {
                    tau,
                    regime: "iid".into(),
                    alpha_star: rule.allocations[0].share(),
                    value: rule.value,
                });
            }
        }
    }
    write_oracle_csv(&rows, fs::File::create(args.out.join("oracle.csv"))?)?;
    Ok(())
}

fn cmd_dp(args: &DpArgs) -> CliResult<()> {
    let taus: Vec<f64> = parse_list("tau", &args.taus)?;
    let atoms: Vec<usize> = parse_list("atom count", &args.atoms)?;
    if args.grid < 2 {
        return Err(Failure::Usage("--grid needs at least 2 points".into()));
    }
    let alphas: Vec<f64> = (0..args.grid).map(|i| i as f64 / (args.grid - 1) as f64).collect();
    fs::create_dir_all(&args.out)?;
    let mut out = String::from("tau,atoms,value,analytic,abs_error,sweeps,alpha0\n");
    for &tau in &taus {
        let q = args.mu + 1.0 + args.sigma * qprl::mathcore::inv_std_normal_cdf(tau)?;
        let rf = 1.0 + args.rf;
        let analytic = corner_rule_value(&[q, q], rf, args.beta, 1.0, 0)?.value;
        for &n in &atoms {
            let p = corner_rule_mdp(1.0 + args.mu, args.sigma, rf, args.beta, 1.0, n, &alphas)?;
            let vi = value_iteration(&p.mdp, tau, 1e-12, 10_000)?;
            let v = vi.values[p.initial_state];
            let a0 = alphas[vi.policy[p.initial_state]];
            println!("tau={tau} atoms={n}: value={v:.6} analytic={analytic:.6}");
            out.push_str(&format!(
                "{tau},{n},{v},{analytic},{},{},{a0}\n",
                (v - analytic).abs(),
                vi.sweeps()
            ));
        }
    }
    fs::write(args.out.join("dp.csv"), out)?;
    Ok(())
}

/// Config-file pairs, then flags, then positional overrides; the last `env`
/// wins and is the only one kept.
fn resolve_pairs(args: &TrainArgs, forced_env: Option<EnvKind>) -> CliResult<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        pairs.extend(parse_config(&text)?);
    }
    if let Some(e) = &args.env {
        pairs.push(("env".into(), e.clone()));
    }
    if let Some(d) = &args.data {
        pairs.push(("data".into(), d.display().to_string()));
    }
    if let Some(c) = args.cost {
        pairs.push(("cost".into(), c.to_string()));
    }
    if let Some(s) = args.seed {
        pairs.push(("seed".into(), s.to_string()));
    }
    for o in &args.overrides {
        pairs.push(parse_override(o)?);
    }
    let env = match forced_env {
        Some(e) => {
            if let Some((_, v)) = pairs.iter().rev().find(|(k, _)| k == "env") {
                if v.parse::<EnvKind>()? != e {
                    return Err(Failure::Usage(format!("this command only runs env = {e}")));
                }
            }
            Some(e.to_string())
        }
        None => pairs.iter().rev().find(|(k, _)| k == "env").map(|(_, v)| v.clone()),
    };
    pairs.retain(|(k, _)| k != "env");
    if let Some(e) = env {
        pairs.insert(0, ("env".into(), e));
    }
    Ok(pairs)
}

struct Job {
    dir: PathBuf,
    group: String,
    cfg: TrainConfig,
}

fn fmt_tau(tau: f64) -> String {
    format!("tau{tau}")
}

fn plan_jobs(args: &TrainArgs, forced_env: Option<EnvKind>) -> CliResult<Vec<Job>> {
    let pairs = resolve_pairs(args, forced_env)?;
    let base = TrainConfig::from_pairs(&pairs)?;
    let taus: Vec<f64> = match &args.taus {
        Some(t) => parse_list("tau", t)?,
        None => vec![base.tau],
    };
    let seeds: Vec<u64> = match &args.seeds {
        Some(s) if !s.contains(',') => {
            let n: u64 = s
                .trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("invalid seed count '{s}'")))?;
            if n == 0 {
                return Err(Failure::Usage("--seeds must be positive".into()));
            }
            (base.seed..base.seed + n).collect()
        }
        Some(s) => parse_list("seed", s)?,
        None => vec![base.seed],
    };
    let scenarios: Vec<Option<String>> = match &args.scenario {
        None => vec![None],
        Some(_) if base.env != EnvKind::RsVar => {
            return Err(Failure::Usage("--scenario only applies to the simulator".into()))
        }
        Some(s) if s.trim() == "all" => ["bull-bear", "neutral-bear", "bull-neutral"]
            .iter()
            .map(|s| Some(s.to_string()))
            .collect(),
        Some(s) => parse_list::<String>("scenario", s)?.into_iter().map(Some).collect(),
    };
    let single = taus.len() == 1 && seeds.len() == 1 && scenarios.len() == 1;
    let mut jobs = Vec::new();
    for scenario in &scenarios {
        for &tau in &taus {
            for &seed in &seeds {
                let mut cfg = base.clone();
                let mut extra = vec![("tau".to_string(), tau.to_string()), ("seed".into(), seed.to_string())];
                if let Some(s) = scenario {
                    extra.push(("scenario".into(), s.clone()));
                }
                for (k, v) in &extra {
                    cfg.set(k, v)?;
                }
                cfg.validate()?;
                let group = match scenario {
                    Some(s) => format!("{s}/{}", fmt_tau(tau)),
                    None => fmt_tau(tau),
                };
                let dir = if single {
                    args.out.clone()
                } else {
                    let mut d = args.out.clone();
                    if let Some(s) = scenario {
                        d = d.join(s);
                    }
                    d.join(format!("{}_seed{seed}", fmt_tau(tau)))
                };
                jobs.push(Job { dir, group, cfg });
            }
        }
    }
    Ok(jobs)
}

fn run_jobs(jobs: Vec<Job>, out: &Path) -> CliResult<()> {
    let pool = thread_pool()?;
    let results: Vec<(Job, Result<RunOutput, Error>)> = pool.install(|| {
        jobs.into_par_iter()
            .map(|job| {
                let res = execute(&job.cfg).and_then(|run| {
                    write_run_dir(&job.dir, &run)?;
                    Ok(run)
                });
                (job, res)
            })
            .collect()
    });
    let mut diverged = Vec::new();
    let mut bands: Vec<(String, f64, Vec<String>, Vec<Vec<f64>>)> = Vec::new();
    for (job, res) in &results {
        match res {
            Err(e) => {
                eprintln!("{}: {e}", job.dir.display());
                return Err(Failure::from(clone_error(e)));
            }
            Ok(run) => {
                if let Some(reason) = &run.outcome.divergence {
                    eprintln!("{}: training diverged ({reason}); checkpoints written", job.dir.display());
                    diverged.push(job.dir.clone());
                    continue;
                }
                if let Some(r) = &run.report {
                    let labels = r.evaluation.rollout.action_labels.clone();
                    println!(
                        "{}: weights {}",
                        job.dir.display(),
                        labels
                            .iter()
                            .zip(&r.weights.overall)
                            .map(|(l, w)| format!("{l}={w:.3}"))
                            .collect::<Vec<_>>()
                            .join(" ")
                    );
                    match bands.iter_mut().find(|b| b.0 == job.group) {
                        Some(b) => b.3.push(r.weights.overall.clone()),
                        None => bands.push((job.group.clone(), job.cfg.tau, labels, vec![r.weights.overall.clone()])),
                    }
                }
            }
        }
    }
    if results.len() > 1 && !bands.is_empty() {
        let bands = bands
            .iter()
            .map(|(g, tau, labels, w)| weight_band(g, *tau, labels, w))
            .collect::<Result<Vec<_>, _>>()?;
        fs::create_dir_all(out)?;
        write_weight_bands(&bands, fs::File::create(out.join("summary.csv"))?)?;
    }
    if !diverged.is_empty() {
        eprintln!("error: {} run(s) diverged", diverged.len());
        return Err(Failure::Diverged);
    }
    Ok(())
}

fn clone_error(e: &Error) -> Error {
    match e {
        Error::Data(m) => Error::Data(m.clone()),
        Error::InsufficientData { needed, got } => Error::InsufficientData {
            needed: *needed,
            got: *got,
        },
        Error::Config(m) => Error::Config(m.clone()),
        Error::Domain(m) => Error::Domain(m.clone()),
        other => Error::Numerical(other.to_string()),
    }
}

fn cmd_report(args: &ReportArgs) -> CliResult<()> {
    fs::create_dir_all(&args.out)?;
    let with_metrics: Vec<PathBuf> = args
        .runs
        .iter()
        .filter(|d| d.join(qprl::trainer::METRICS_FILE).exists())
        .cloned()
        .collect();
    for d in &args.runs {
        if !d.join(qprl::trainer::CONFIG_FILE).exists() {
            return Err(Failure::Data(format!("{} is not a run directory", d.display())));
        }
    }
    if !with_metrics.is_empty() {
        combine_metrics(&with_metrics, fs::File::create(args.out.join("metrics.csv"))?)?;
    }
    combine_weights(&args.runs, fs::File::create(args.out.join("weights.csv"))?)?;
    println!("combined {} runs into {}", args.runs.len(), args.out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Dp(a) => cmd_dp(&a),
        Command::Train(a) => {
            let jobs = plan_jobs(&a, None)?;
            run_jobs(jobs, &a.out)
        }
        Command::TrainSim(a) => {
            let jobs = plan_jobs(&a, Some(EnvKind::RsVar))?;
            run_jobs(jobs, &a.out)
        }
        Command::Evaluate(a) => {
            let out = a.out.clone().unwrap_or_else(|| a.run.clone());
            let r = evaluate_run_dir(&a.run, &out)?;
            if let Some(m) = &r.metrics {
                println!("ann. mean {:.4}% | sharpe {:.4} | cvar95 {:.4}%", m.ann_mean, m.sharpe, m.cvar95);
            }
            Ok(())
        }
        Command::Report(a) => cmd_report(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Diverged) => ExitCode::from(EXIT_DIVERGED),
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::FAILURE
        }
    }
}

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use qprl::actor::{actor_loss, ActorBatch, ActorParams, PolicyHead};
use qprl::critic::{critic_loss, CriticBatch, CriticParams};
use qprl::env::{load_returns_csv, CostSchedule, FeatureScaling, HistoricalEnv, Scenario, TwoPeriodRegimeModel};
use qprl::mathcore::{pinball_derivative, pinball_loss, std_normal_pdf, inv_std_normal_cdf, Mlp, Rng};
use qprl::metrics::{performance_summary, METRIC_ROWS};
use qprl::quantile_dp::{
    corner_rule_mdp, corner_rule_value, optimality_operator, policy_operator, regime_example_solver, value_iteration,
    Allocation, Policy, QuantileGrid, TabularMdp,
};
use qprl::trainer::{execute, rollout_policy, split_data, EnvKind, RunOutput, TrainConfig};

const TAUS: [f64; 3] = [0.1, 0.5, 0.9];
const SEEDS: u64 = 5;

/// Writes straight to the process stdout so the verdict lines appear even
/// when the harness captures test output.
fn verdict(n: usize, pass: bool, detail: &str) {
    let line = format!("criterion {n:>2}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn conclude(n: usize, checks: &[(bool, String)], elapsed: Duration, limit: Option<Duration>) {
    let mut all: Vec<(bool, String)> = checks.to_vec();
    if let Some(limit) = limit {
        all.push((elapsed < limit, format!("runtime {:.1}s < {}s", elapsed.as_secs_f64(), limit.as_secs())));
    }
    let pass = all.iter().all(|(ok, _)| *ok);
    let detail = all
        .iter()
        .map(|(ok, d)| format!("{}{d}", if *ok { "" } else { "[x] " }))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(n, pass, &detail);
    assert!(pass, "criterion {n} failed: {detail}");
}

fn workers() -> usize {
    std::env::var("QPRL_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|n: &usize| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every configuration, `workers()` at a time; results keep input order.
fn run_all(cfgs: Vec<TrainConfig>) -> Vec<RunOutput> {
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<RunOutput>>> = cfgs.iter().map(|_| Default::default()).collect();
    std::thread::scope(|s| {
        for _ in 0..workers().min(cfgs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= cfgs.len() {
                    break;
                }
                let run = execute(&cfgs[i]).expect("training runs");
                *slots[i].lock().unwrap() = Some(run);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().unwrap()).collect()
}

fn config(env: EnvKind, tau: f64, seed: u64, extra: &[(&str, String)]) -> TrainConfig {
    let mut pairs = vec![
        ("env".to_string(), env.to_string()),
        ("tau".into(), tau.to_string()),
        ("seed".into(), seed.to_string()),
    ];
    pairs.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    TrainConfig::from_pairs(&pairs).unwrap()
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

struct TwoPeriodRuns {
    taus: Vec<f64>,
    runs: Vec<RunOutput>,
    elapsed: Duration,
}

fn two_period_runs() -> &'static TwoPeriodRuns {
    static RUNS: OnceLock<TwoPeriodRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let taus = vec![0.1, 0.9];
        let cfgs = taus
            .iter()
            .flat_map(|&tau| (0..SEEDS).map(move |s| config(EnvKind::TwoPeriod, tau, s, &[])))
            .collect();
        let runs = run_all(cfgs);
        TwoPeriodRuns { taus, runs, elapsed: start.elapsed() }
    })
}

struct SimRuns {
    /// `(scenario, tau, run)`.
    runs: Vec<(Scenario, f64, RunOutput)>,
    elapsed: Duration,
}

fn sim_runs() -> &'static SimRuns {
    static RUNS: OnceLock<SimRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let mut keys = Vec::new();
        let mut cfgs = Vec::new();
        for sc in Scenario::ALL {
            for tau in TAUS {
                for seed in 0..SEEDS {
                    keys.push((sc, tau));
                    cfgs.push(config(EnvKind::RsVar, tau, seed, &[("scenario", sc.to_string())]));
                }
            }
        }
        let runs = keys.into_iter().zip(run_all(cfgs)).map(|((sc, tau), r)| (sc, tau, r)).collect();
        SimRuns { runs, elapsed: start.elapsed() }
    })
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_01_contraction_audit() {
    let start = Instant::now();
    let mut rng = Rng::new(2024);
    let betas = [0.5, 0.9, 0.96];
    let (mut checks, mut violations, mut worst_ratio) = (0usize, 0usize, 0.0f64);
    let mut ratio_violations = 0usize;
    for m in 0..100 {
        let s = 1 + rng.index(20);
        let a = 1 + rng.index(5);
        let beta = betas[m % 3];
        let tau = 0.02 + 0.96 * rng.uniform();
        let mdp = TabularMdp::random(s, a, beta, &mut rng).unwrap();
        let probs: Vec<f64> = (0..s)
            .flat_map(|_| {
                let raw: Vec<f64> = (0..a).map(|_| rng.uniform() + 1e-3).collect();
                let t: f64 = raw.iter().sum();
                raw.into_iter().map(move |x| x / t)
            })
            .collect();
        let policy = Policy::new(s, a, probs).unwrap();
        for _ in 0..100 {
            let v: Vec<f64> = (0..s).map(|_| 20.0 * rng.uniform() - 10.0).collect();
            let w: Vec<f64> = (0..s).map(|_| 20.0 * rng.uniform() - 10.0).collect();
            let bound = beta * sup(&v, &w) + 1e-12;
            let tv = optimality_operator(&mdp, &v, tau).unwrap().0;
            let tw = optimality_operator(&mdp, &w, tau).unwrap().0;
            let pv = policy_operator(&mdp, &v, &policy, tau).unwrap();
            let pw = policy_operator(&mdp, &w, &policy, tau).unwrap();
            checks += 2;
            violations += usize::from(sup(&tv, &tw) > bound) + usize::from(sup(&pv, &pw) > bound);
        }
        let vi = value_iteration(&mdp, tau, 1e-4, 10_000).unwrap();
        for pair in vi.residuals.windows(2) {
            if pair[0] > 0.0 {
                let r = pair[1] / pair[0];
                worst_ratio = worst_ratio.max(r - beta);
                ratio_violations += usize::from(r > beta + 1e-9);
            }
        }
    }
    conclude(
        1,
        &[
            (violations == 0, format!("{violations} sup-norm violations in {checks} operator pairs")),
            (
                ratio_violations == 0,
                format!("{ratio_violations} residual ratios above beta+1e-9 (max excess {worst_ratio:.2e})"),
            ),
        ],
        start.elapsed(),
        Some(Duration::from_secs(10)),
    );
}

#[test]
fn criterion_02_corner_rule_oracle() {
    let start = Instant::now();
    let (mu, sigma, rf, beta, w0) = (1.1, 0.2, 1.02, 0.96, 1.0);
    let alphas: Vec<f64> = (0..=4).map(|i| i as f64 / 4.0).collect();
    let mut checks = Vec::new();
    for tau in TAUS {
        let m = (mu + sigma * inv_std_normal_cdf(tau).unwrap()).max(rf);
        let hand = beta * beta * w0 * m * m;
        let q = mu + sigma * inv_std_normal_cdf(tau).unwrap();
        let analytic = corner_rule_value(&[q, q], rf, beta, w0, 0).unwrap().value;
        checks.push((
            (analytic - hand).abs() <= 4.0 * f64::EPSILON * hand,
            format!("tau {tau}: analytic {analytic:.12} vs hand {hand:.12}"),
        ));
        let errors: Vec<f64> = [10, 40, 160]
            .iter()
            .map(|&n| {
                let p = corner_rule_mdp(mu, sigma, rf, beta, w0, n, &alphas).unwrap();
                let vi = value_iteration(&p.mdp, tau, 1e-12, 1000).unwrap();
                (vi.values[p.initial_state] - hand).abs()
            })
            .collect();
        // a risk-free corner is exact on every grid
        let shrinking = errors[0] >= errors[1] && errors[1] >= errors[2] && (errors[2] < errors[0] || errors[0] == 0.0);
        checks.push((shrinking, format!("tau {tau}: errors {:.2e} >= {:.2e} >= {:.2e}", errors[0], errors[1], errors[2])));
    }
    conclude(2, &checks, start.elapsed(), Some(Duration::from_secs(5)));
}

#[test]
fn criterion_03_regime_example() {
    let start = Instant::now();
    let model = TwoPeriodRegimeModel::default();
    let low = regime_example_solver(&model, 0.1, 1001).unwrap();
    let mut checks = vec![
        (
            (0.41..=0.51).contains(&low.alpha0[1]),
            format!("tau 0.1 alpha0*(H) = {:.3} in [0.41, 0.51]", low.alpha0[1]),
        ),
        (
            low.alpha1 == [Allocation::Risky, Allocation::RiskFree],
            format!("tau 0.1 alpha1* (L, H) = {:?}", low.alpha1),
        ),
    ];
    for tau in [0.5, 0.9] {
        let s = regime_example_solver(&model, tau, 1001).unwrap();
        let ok = s.alpha0 == [1.0, 1.0] && s.alpha1 == [Allocation::Risky, Allocation::Risky];
        checks.push((ok, format!("tau {tau}: alpha0* {:?}, alpha1* {:?}", s.alpha0, s.alpha1)));
    }
    conclude(3, &checks, start.elapsed(), Some(Duration::from_secs(5)));
}

#[test]
fn criterion_04_learner_vs_oracle() {
    let tp = two_period_runs();
    let oracle = regime_example_solver(&TwoPeriodRegimeModel::default(), 0.1, 1001).unwrap().alpha0[1];
    let alloc = |tau: f64| -> Vec<[[f64; 2]; 2]> {
        tp.taus
            .iter()
            .flat_map(|t| std::iter::repeat(*t).take(SEEDS as usize))
            .zip(&tp.runs)
            .filter(|(t, _)| *t == tau)
            .map(|(_, r)| r.report.as_ref().expect("no divergence").allocations.unwrap())
            .collect()
    };
    let low = alloc(0.1);
    let high = alloc(0.9);
    let h0 = mean(low.iter().map(|a| a[0][1]));
    let upside = mean(high.iter().flat_map(|a| a.iter().flatten().copied().collect::<Vec<_>>()));
    conclude(
        4,
        &[
            (
                (h0 - oracle).abs() <= 0.15,
                format!("tau 0.1 mean alpha0(H) {h0:.3} vs solver {oracle:.3} (+-0.15), {} seeds", low.len()),
            ),
            (upside >= 0.85, format!("tau 0.9 mean allocation {upside:.3} >= 0.85, {} seeds", high.len())),
        ],
        tp.elapsed,
        Some(Duration::from_secs(600)),
    );
}

const FD_STEP: f64 = 1e-5;

/// Worst relative error between central differences of the value and the
/// analytic gradient, or `None` when the point sits within one step of a
/// kink (the analytic gradient jumps across the stencil).
fn fd_check(theta: &[f64], mut eval: impl FnMut(&[f64]) -> (f64, Vec<f64>)) -> Option<f64> {
    let (f, g) = eval(theta);
    // entries below this are under the resolution of a difference quotient
    let floor = 1e-6 * f.abs().max(1.0);
    let mut worst = 0.0f64;
    let mut p = theta.to_vec();
    for k in 0..theta.len() {
        p[k] = theta[k] + FD_STEP;
        let (up, gu) = eval(&p);
        p[k] = theta[k] - FD_STEP;
        let (down, gd) = eval(&p);
        p[k] = theta[k];
        let scale = g[k].abs().max(floor);
        if (gu[k] - gd[k]).abs() > 1e-3 * scale {
            return None;
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max((numeric - g[k]).abs() / numeric.abs().max(scale));
    }
    Some(worst)
}

/// Draws points until `n` of them are differentiable; returns the worst
/// error and how many draws were rejected.
fn fd_audit(n: usize, rng: &mut Rng, mut point: impl FnMut(&mut Rng) -> Option<f64>) -> (f64, usize) {
    let (mut worst, mut done, mut rejected) = (0.0f64, 0, 0);
    while done < n {
        match point(rng) {
            Some(e) => {
                worst = worst.max(e);
                done += 1;
            }
            None => {
                rejected += 1;
                assert!(rejected < 10 * n, "too many points at kinks");
            }
        }
    }
    (worst, rejected)
}

fn random_sizes(rng: &mut Rng, input: usize, output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    for _ in 0..rng.index(3) {
        sizes.push(2 + rng.index(6));
    }
    sizes.push(output);
    sizes
}

fn random_critic_batch(rng: &mut Rng, dim: usize, n: usize) -> CriticBatch {
    let mut b = CriticBatch::new(dim);
    for _ in 0..n {
        let f: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let g: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        b.push(&f, rng.normal(), &g, rng.uniform() < 0.2, 0.1 + rng.uniform());
    }
    b
}

#[test]
fn criterion_05_gradient_integrity() {
    let start = Instant::now();
    let mut rng = Rng::new(55);
    let (pin, pin_rej) = fd_audit(100, &mut rng, |rng| {
        let tau = 0.01 + 0.98 * rng.uniform();
        let delta = 5.0 * rng.normal();
        fd_check(&[delta], |d| (pinball_loss(d[0], tau).unwrap(), vec![pinball_derivative(d[0], tau)]))
    });
    let critic_point = |rng: &mut Rng, penalty_only: bool| {
        let dim = 1 + rng.index(4);
        let heads = 2 + rng.index(5);
        let sizes = random_sizes(rng, dim, heads);
        let levels: Vec<f64> = (1..=heads).map(|j| j as f64 / (heads + 1) as f64).collect();
        let grid = QuantileGrid::new(levels, 0).unwrap();
        let online = Mlp::new(&sizes, 1e-3, rng).unwrap();
        let target = Mlp::new(&sizes, 1e-3, rng).unwrap();
        let batch = random_critic_batch(rng, dim, 6);
        let mut with = CriticParams::from_parts(online.clone(), target.clone(), grid.clone(), 5.0, 0.1).unwrap();
        let mut without = CriticParams::from_parts(online.clone(), target, grid, 0.0, 0.1).unwrap();
        fd_check(&online.flat_params(), |p| {
            with.online.set_flat_params(p).unwrap();
            let lw = critic_loss(&with, &batch, 0.9, 2.0).unwrap();
            if !penalty_only {
                return (lw.total(), lw.grads.flat());
            }
            // the pinball part cancels, leaving the order penalty alone
            without.online.set_flat_params(p).unwrap();
            let lo = critic_loss(&without, &batch, 0.9, 2.0).unwrap();
            let g = lw.grads.flat().iter().zip(lo.grads.flat()).map(|(a, b)| a - b).collect();
            (lw.penalty, g)
        })
    };
    let (pen, pen_rej) = fd_audit(100, &mut rng, |rng| critic_point(rng, true));
    let (crit, crit_rej) = fd_audit(100, &mut rng, |rng| critic_point(rng, false));
    let mut draw = 0usize;
    let (act, act_rej) = fd_audit(100, &mut rng, |rng| {
        draw += 1;
        let dim = 1 + rng.index(4);
        let a = 2 + rng.index(3);
        let head = if draw % 2 == 0 {
            PolicyHead::Gaussian { sigma: 0.2 + rng.uniform() }
        } else {
            PolicyHead::Dirichlet { bias: 0.1 }
        };
        let sizes = random_sizes(rng, dim, a);
        let mut params = ActorParams::from_net(Mlp::new(&sizes, 1e-3, rng).unwrap(), head).unwrap();
        let mut batch = ActorBatch::new(dim, a);
        for _ in 0..6 {
            let f: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let raw: Vec<f64> = match head {
                PolicyHead::Gaussian { .. } => (0..a).map(|_| rng.normal()).collect(),
                PolicyHead::Dirichlet { .. } => {
                    let g: Vec<f64> = (0..a).map(|_| 0.05 + rng.uniform()).collect();
                    let t: f64 = g.iter().sum();
                    g.iter().map(|x| x / t).collect()
                }
            };
            batch.push(&f, &raw, rng.normal(), 0.1 + rng.uniform());
        }
        let tau = 0.05 + 0.9 * rng.uniform();
        let theta = params.net.flat_params();
        fd_check(&theta, |p| {
            params.net.set_flat_params(p).unwrap();
            let l = actor_loss(&params, &batch, tau).unwrap();
            (l.loss + l.l2, l.grads.flat())
        })
    });
    let (net, net_rej) = fd_audit(100, &mut rng, |rng| {
        let input = 1 + rng.index(5);
        let output = 1 + rng.index(4);
        let sizes = random_sizes(rng, input, output);
        let mut m = Mlp::new(&sizes, 0.0, rng).unwrap();
        let x: Vec<f64> = (0..input).map(|_| rng.normal()).collect();
        let up: Vec<f64> = (0..output).map(|_| rng.normal()).collect();
        let theta = m.flat_params();
        fd_check(&theta, |p| {
            m.set_flat_params(p).unwrap();
            let v = m.forward(&x).unwrap().iter().zip(&up).map(|(o, u)| o * u).sum();
            (v, m.gradients(&x, &up).unwrap().flat())
        })
    });
    let line = |name: &str, e: f64, rej: usize| (e <= 1e-4, format!("{name} max rel err {e:.1e} ({rej} kink draws redrawn)"));
    conclude(
        5,
        &[
            line("pinball", pin, pin_rej),
            line("order penalty", pen, pen_rej),
            line("critic loss", crit, crit_rej),
            line("actor surrogate", act, act_rej),
            line("network", net, net_rej),
        ],
        start.elapsed(),
        Some(Duration::from_secs(30)),
    );
}

#[test]
fn criterion_06_monotone_heads() {
    let mut checks = Vec::new();
    let testbeds: [(&str, Vec<&RunOutput>); 2] = [
        ("two-period", two_period_runs().runs.iter().collect()),
        ("rs-var", sim_runs().runs.iter().map(|(_, _, r)| r).collect()),
    ];
    for (name, runs) in testbeds {
        let stats: Vec<_> = runs.iter().map(|r| r.report.as_ref().unwrap().evaluation.crossing).collect();
        let worst_frac = stats.iter().map(|c| c.fraction).fold(0.0, f64::max);
        let worst_mag = stats.iter().map(|c| c.relative_magnitude).fold(0.0, f64::max);
        checks.push((
            worst_frac <= 0.05 && worst_mag <= 0.01,
            format!(
                "{name}: worst run crossing fraction {:.2}% (<= 5%), magnitude {:.3}% (<= 1%) over {} runs",
                100.0 * worst_frac,
                100.0 * worst_mag,
                stats.len()
            ),
        ));
    }
    conclude(6, &checks, Duration::ZERO, None);
}

#[test]
fn criterion_07_rs_var_policy_ordering() {
    let sim = sim_runs();
    let mut checks = Vec::new();
    for sc in Scenario::ALL {
        let avg = |tau: f64| -> Vec<f64> {
            let ws: Vec<&Vec<f64>> = sim
                .runs
                .iter()
                .filter(|(s, t, _)| *s == sc && *t == tau)
                .map(|(_, _, r)| &r.report.as_ref().expect("no divergence").weights.overall)
                .collect();
            (0..ws[0].len()).map(|k| mean(ws.iter().map(|w| w[k]))).collect()
        };
        let w: Vec<Vec<f64>> = TAUS.iter().map(|&t| avg(t)).collect();
        let cash: Vec<f64> = w.iter().map(|x| *x.last().unwrap()).collect();
        let sleeve: Vec<f64> = w.iter().map(|x| x[0]).collect();
        let ok = cash[0] > cash[1] && cash[1] > cash[2] && sleeve[0] < sleeve[1] && sleeve[1] < sleeve[2];
        checks.push((
            ok,
            format!(
                "{sc}: cash {:.3}/{:.3}/{:.3}, high-dispersion sleeve {:.3}/{:.3}/{:.3}",
                cash[0], cash[1], cash[2], sleeve[0], sleeve[1], sleeve[2]
            ),
        ));
    }
    conclude(7, &checks, sim.elapsed, Some(Duration::from_secs(1800)));
}

#[test]
fn criterion_08_tail_dominance() {
    let sim = sim_runs();
    let curve = |tau: f64| -> (Vec<f64>, Vec<f64>) {
        let sel: Vec<&RunOutput> = sim.runs.iter().filter(|(_, t, _)| *t == tau).map(|(_, _, r)| r).collect();
        let ev = &sel[0].report.as_ref().unwrap().evaluation;
        let c = (0..ev.icdf.len())
            .map(|j| mean(sel.iter().map(|r| r.report.as_ref().unwrap().evaluation.icdf[j])))
            .collect();
        (ev.levels.clone(), c)
    };
    let (levels, low) = curve(0.1);
    let (_, high) = curve(0.9);
    let at = |l: f64| levels.iter().position(|x| (x - l).abs() < 1e-12).expect("grid level");
    let (i1, i9) = (at(0.1), at(0.9));
    conclude(
        8,
        &[
            (low[i1] >= high[i1], format!("level 0.1: tau 0.1 curve {:.4} >= tau 0.9 curve {:.4}", low[i1], high[i1])),
            (low[i9] <= high[i9], format!("level 0.9: tau 0.1 curve {:.4} <= tau 0.9 curve {:.4}", low[i9], high[i9])),
        ],
        Duration::ZERO,
        None,
    );
}

#[test]
fn criterion_09_metrics_validation() {
    let start = Instant::now();
    let (n, sd) = (100_000usize, 0.01);
    let mut rng = Rng::new(99);
    let r: Vec<f64> = (0..n).map(|_| sd * rng.normal()).collect();
    let s = performance_summary(&r).unwrap();
    let p = 0.05;
    let z = inv_std_normal_cdf(p).unwrap();
    let phi = std_normal_pdf(z);
    let var = 100.0 * sd * z;
    let cvar = -100.0 * sd * phi / p;
    // quantile estimator: sqrt(p(1-p)/n) / f(q)
    let se_var = 100.0 * (p * (1.0 - p) / n as f64).sqrt() / (phi / sd);
    // tail mean of a normal: Var(X | X <= q) plus the threshold term
    let tail_var = sd * sd * (1.0 - z * phi / p - (phi / p).powi(2));
    let gap = sd * (-phi / p - z);
    let se_cvar = 100.0 * ((tail_var + (1.0 - p) * gap * gap) / (n as f64 * p)).sqrt();
    conclude(
        9,
        &[
            (
                (s.var95 - var).abs() <= 3.0 * se_var,
                format!("VaR95 {:.4}% vs {:.4}% (3 se = {:.4})", s.var95, var, 3.0 * se_var),
            ),
            (
                (s.cvar95 - cvar).abs() <= 3.0 * se_cvar,
                format!("CVaR95 {:.4}% vs {:.4}% (3 se = {:.4})", s.cvar95, cvar, 3.0 * se_cvar),
            ),
            (
                (s.mvar95 - s.var95).abs() <= 0.05 * s.var95.abs(),
                format!("mVaR95 {:.4}% within 5% of VaR95 {:.4}%", s.mvar95, s.var95),
            ),
        ],
        start.elapsed(),
        None,
    );
}

/// Three assets of increasing dispersion.
fn synthetic_returns(dir: &Path) -> PathBuf {
    let path = dir.join("returns.csv");
    let mut rng = Rng::new(7);
    let mut text = String::from("date,low,mid,high\n");
    let mut day = 0usize;
    for t in 0..1500 {
        let r: Vec<String> = [(2e-4, 4e-3), (5e-4, 1.2e-2), (9e-4, 2.5e-2)]
            .iter()
            .map(|(m, s)| format!("{:.6}", m + s * rng.normal()))
            .collect();
        let (y, rest) = (2000 + day / 336, day % 336);
        text.push_str(&format!("{y}-{:02}-{:02},{}\n", rest / 28 + 1, rest % 28 + 1, r.join(",")));
        day += 1 + usize::from(t % 5 == 4);
    }
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn criterion_10_user_data_pipeline() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_returns(dir.path());
    let extra = [("data", data.display().to_string()), ("cost", "0".to_string())];
    let cfgs: Vec<TrainConfig> = (0..SEEDS)
        .flat_map(|s| TAUS.iter().map(move |&t| (s, t)))
        .map(|(s, t)| config(EnvKind::Historical, t, s, &extra))
        .collect();
    let runs = run_all(cfgs);
    let mut checks = Vec::new();

    let shaped = runs.iter().all(|r| {
        let m = r.report.as_ref().and_then(|rep| rep.metrics);
        m.is_some_and(|m| m.rows().len() == METRIC_ROWS.len() && m.rows().iter().all(|x| x.is_finite()))
    });
    checks.push((shaped, format!("{} runs report all {} metric rows", runs.len(), METRIC_ROWS.len())));

    let high = |r: &RunOutput| r.report.as_ref().unwrap().weights.overall[2];
    let mut ordered = 0;
    let mut tilts = Vec::new();
    for seed_runs in runs.chunks(TAUS.len()) {
        let t: Vec<f64> = seed_runs.iter().map(high).collect();
        ordered += usize::from(t[0] < t[1] && t[1] < t[2]);
        tilts.push(format!("{:.3}/{:.3}/{:.3}", t[0], t[1], t[2]));
    }
    checks.push((
        ordered >= 3,
        format!("high-dispersion tilt strictly increasing in tau for {ordered}/{SEEDS} seeds ({})", tilts.join(", ")),
    ));

    // replay one learned weight sequence at increasing cost rates
    let base = &runs[1];
    let cfg = &base.config;
    let weights: Vec<Vec<f64>> = base.report.as_ref().unwrap().evaluation.rollout.weights();
    let returns = Arc::new(load_returns_csv(&data, false).unwrap());
    let split = split_data(returns.rows(), cfg.train_frac, cfg.val_frac).unwrap();
    let paths: Vec<Vec<f64>> = [0.0, 5e-4, 1e-3, 5e-3, 1e-2]
        .iter()
        .map(|&c| {
            let mut env = HistoricalEnv::new(
                returns.clone(),
                split.test.clone(),
                CostSchedule::new(c, cfg.interest).unwrap(),
                cfg.reward_scale,
                cfg.initial_wealth,
                cfg.window,
                FeatureScaling::default(),
            )
            .unwrap();
            let mut k = 0;
            let mut replay = |_: &[f64]| {
                k += 1;
                Ok(weights[k - 1].clone())
            };
            let ro = rollout_policy(&mut env, &mut replay, 1, 0, &mut Rng::new(0)).unwrap();
            ro.rows.iter().map(|r| r.wealth).collect()
        })
        .collect();
    let monotone = paths.windows(2).all(|p| p[0].iter().zip(&p[1]).all(|(a, b)| b <= a));
    checks.push((
        monotone && paths[0].len() == weights.len(),
        format!(
            "terminal wealth nonincreasing in cost at every step: {}",
            paths.iter().map(|p| format!("{:.2}", p.last().unwrap())).collect::<Vec<_>>().join(" >= ")
        ),
    ));
    conclude(10, &checks, start.elapsed(), None);
}

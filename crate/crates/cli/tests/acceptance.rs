//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs sequentially with a custom harness so the latency measurement is not
//! disturbed by concurrently running experiments. Pass criterion numbers as
//! arguments to run a subset: `cargo test --test acceptance -- 5 6 7`.

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{ensure, Result};
use critic_pi2::actor_critic::{vtrace_targets, Critic, VtraceConfig};
use critic_pi2::dynamics::DynamicsModel;
use critic_pi2::env::{EnvConfig, EnvKind, EnvSpec};
use critic_pi2::nn::{GaussianPolicy, Loss, Matrix, Mlp};
use critic_pi2::planner::{normalize_costs, pi2_weights};
use critic_pi2::replay::Transition;
use critic_pi2::trainer::{AgentKind, ExperimentConfig};
use critic_pi2_cli::commands::{cmd_ablation, cmd_benchmark, cmd_train, Precision};
use critic_pi2_cli::output::{RESULTS_FILE, TIMING_FILE};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

// ---------------------------------------------------------------- criterion 1

fn inverted_pendulum_solved() -> Result<Verdict> {
    const TARGET: f64 = 450.0;
    let dir = tempfile::tempdir()?;
    let mut solved = Vec::new();
    let mut failed = Vec::new();
    for seed in 0..5u64 {
        if solved.len() >= 3 || failed.len() > 2 {
            break;
        }
        let cfg = ExperimentConfig {
            seed,
            target_return: Some(TARGET),
            ..ExperimentConfig::default()
        };
        let t = Instant::now();
        let outcome = cmd_train(&cfg, &dir.path().join(format!("seed_{seed}")), Precision::F64)?;
        let first = outcome
            .records
            .iter()
            .find(|r| r.eval_return.is_some_and(|v| v >= TARGET))
            .map(|r| r.episode);
        say(&format!(
            "  criterion 1 seed {seed}: best eval {:.1}, reached {TARGET} at episode {first:?}, {:.0} s",
            outcome.summary.best_eval_return.unwrap_or(f64::NAN),
            t.elapsed().as_secs_f64()
        ));
        match first {
            Some(ep) => solved.push((seed, ep)),
            None => failed.push(seed),
        }
    }
    verdict(
        solved.len() >= 3,
        format!("solved (seed, episode) {solved:?}; unsolved seeds {failed:?}"),
    )
}

// ---------------------------------------------------------------- criterion 2

/// Vanilla PI2 planning budget. Its default (K=50, M=10, H=50) costs about two
/// hours per seed on one core; the smaller budget only weakens the baseline.
const C2_VANILLA_K: usize = 20;
const C2_VANILLA_M: usize = 3;

fn sample_efficiency_ordering() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let mut means = Vec::new();
    for agent in [AgentKind::CriticPi2, AgentKind::VanillaPi2, AgentKind::Ddpg] {
        let mut returns = Vec::new();
        for seed in 0..5u64 {
            let mut cfg = ExperimentConfig {
                agent,
                seed,
                episodes: 50,
                eval_every: 50,
                ..ExperimentConfig::default()
            };
            if agent == AgentKind::VanillaPi2 {
                cfg.planner.k = C2_VANILLA_K;
                cfg.planner.m = C2_VANILLA_M;
            }
            let t = Instant::now();
            let out = cmd_train(
                &cfg,
                &dir.path().join(format!("{}_{seed}", agent.name())),
                Precision::F32,
            )?;
            let ret = out.summary.final_eval_return.unwrap_or(f64::NAN);
            say(&format!(
                "  criterion 2 {} seed {seed}: episode-50 eval {ret:.1}, {:.0} s",
                agent.name(),
                t.elapsed().as_secs_f64()
            ));
            returns.push(ret);
        }
        means.push(returns.iter().sum::<f64>() / returns.len() as f64);
    }
    let (c, v, d) = (means[0], means[1], means[2]);
    verdict(
        c >= v && c >= d,
        format!(
            "episode-50 mean eval: critic_pi2 {c:.1}, vanilla_pi2 {v:.1} (K={C2_VANILLA_K}, M={C2_VANILLA_M}), ddpg {d:.1}"
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn ablation_config() -> ExperimentConfig {
    ExperimentConfig {
        env: EnvConfig::new(EnvKind::InvertedDoublePendulum),
        episodes: ABLATION_EPISODES,
        eval_every: ABLATION_EPISODES,
        ..ExperimentConfig::default()
    }
}

const ABLATION_EPISODES: usize = 60;

fn ablation_ordering() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let t = Instant::now();
    let report = cmd_ablation(&ablation_config(), &[0, 1, 2], dir.path(), Precision::F32)?;
    for v in &report.variants {
        say(&format!(
            "  criterion 3 {}: final {:?} first {:?}",
            v.name, v.final_returns, v.first_returns
        ));
    }
    let full = report.variant("full").mean_final_return;
    let no_greedy = report.variant("no_greedy").mean_final_return;
    let no_critic = report.variant("no_critic").mean_final_return;
    let nat = report.variant("no_actor_training");
    let pass = full >= no_greedy && full >= no_critic && nat.mean_final_return > nat.mean_first_return;
    verdict(
        pass,
        format!(
            "mean final: full {full:.1}, no_greedy {no_greedy:.1}, no_critic {no_critic:.1}; \
             no_actor_training {:.1} vs its episode-1 {:.1}; {:.0} s",
            nat.mean_final_return,
            nat.mean_first_return,
            t.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn planning_latency() -> Result<Verdict> {
    let report = cmd_benchmark(&ExperimentConfig::default(), 100, 2, Precision::F64)?;
    for line in report.render().lines() {
        say(&format!("  {line}"));
    }
    let critic = report.row("critic_pi2");
    let (rv, rm) = report.ratios();
    let pass = rv >= 10.0
        && rm >= 10.0
        && report.row("vanilla_pi2").horizon == 50
        && report.row("mpc").horizon == 50
        && critic.horizon == 1;
    verdict(pass, format!("vanilla/critic {rv:.1}x, mpc/critic {rm:.1}x (need >= 10x)"))
}

// ---------------------------------------------------------------- criterion 5

/// Softmax of `-s / lambda` computed with log-sum-exp, independent of the crate.
fn oracle_weights(s: &[f64], lambda: f64) -> Vec<f64> {
    let logits: Vec<f64> = s.iter().map(|v| -v / lambda).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| (l - lse).exp()).collect()
}

fn pi2_math() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_sum = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for _ in 0..10_000 {
        let k = rng.gen_range(1..=100);
        let costs: Vec<f64> = (0..k).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let lambda = 10f64.powf(rng.gen_range(-3.0..1.0));
        let s = normalize_costs(&costs)?;
        let w = pi2_weights(&s, lambda);
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        for (a, b) in w.iter().zip(oracle_weights(&s, lambda)) {
            worst_oracle = worst_oracle.max((a - b).abs());
        }
    }
    ensure!(worst_sum <= 1e-9, "weight sum off by {worst_sum:e}");
    ensure!(worst_oracle <= 1e-9, "weights differ from oracle by {worst_oracle:e}");

    let mut min_mass = 1.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=100);
        let mut ranks: Vec<f64> = (0..k).map(|i| i as f64).collect();
        ranks.shuffle(&mut rng);
        let (a, b) = (rng.gen_range(0.01..100.0), rng.gen_range(-50.0..50.0));
        let costs: Vec<f64> = ranks.iter().map(|r| a * r + b).collect();
        let best = ranks.iter().position(|&r| r == 0.0).expect("rank 0 present");
        let w = pi2_weights(&normalize_costs(&costs)?, 1e-6);
        min_mass = min_mass.min(w[best]);
    }
    ensure!(min_mass >= 0.999, "lambda=1e-6 puts only {min_mass} on the best sample");

    for k in [1usize, 2, 7, 50] {
        let w = pi2_weights(&normalize_costs(&vec![3.25; k])?, 0.3);
        ensure!(
            w.iter().all(|x| (x - 1.0 / k as f64).abs() <= 1e-12),
            "degenerate costs not uniform for K={k}"
        );
    }

    let mut worst_affine = 0.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=60);
        let costs: Vec<f64> = (0..k).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (a, b) = (10f64.powf(rng.gen_range(-2.0..2.0)), rng.gen_range(-100.0..100.0));
        let moved: Vec<f64> = costs.iter().map(|c| a * c + b).collect();
        let lambda = rng.gen_range(0.05..2.0);
        let w1 = pi2_weights(&normalize_costs(&costs)?, lambda);
        let w2 = pi2_weights(&normalize_costs(&moved)?, lambda);
        for (x, y) in w1.iter().zip(&w2) {
            worst_affine = worst_affine.max((x - y).abs());
        }
    }
    ensure!(worst_affine <= 1e-9, "affine invariance off by {worst_affine:e}");
    verdict(
        true,
        format!(
            "sum err {worst_sum:.1e}, oracle err {worst_oracle:.1e}, min-cost mass {min_mass:.6}, affine err {worst_affine:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn vtrace_equivalence() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (obs_dim, act_dim) = (4, 1);
    let cfg = VtraceConfig::default();
    let gamma = cfg.gamma;
    let mut worst = 0.0f64;
    for i in 0..1000u64 {
        let critic = Critic::<f64>::new(obs_dim, &[16, 16], i, rng.gen_range(0.5..20.0))?;
        let actor = GaussianPolicy::new(Mlp::new(&[obs_dim, 8, act_dim], 10_000 + i)?, vec![rng.gen_range(0.05..1.0)])?;
        let n = rng.gen_range(1..=5);
        let terminal = rng.gen_bool(0.3);
        let mut obs: Vec<f64> = (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut seq = Vec::new();
        for t in 0..n {
            let next: Vec<f64> = (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let action = vec![rng.gen_range(-3.0..3.0)];
            let logp = actor.log_prob(&obs, &action)?;
            seq.push(Transition {
                obs: obs.clone(),
                action,
                reward: rng.gen_range(-2.0..2.0),
                next_obs: next.clone(),
                terminated: terminal && t == n - 1,
                truncated: false,
                behavior_log_prob: Some(logp),
            });
            obs = next;
        }
        let refs: Vec<&Transition<f64>> = seq.iter().collect();
        let targets = vtrace_targets(&refs, &critic, &actor, &cfg)?;
        // n-step TD target from every start position of the window
        for s in 0..n {
            let mut g = 0.0;
            let mut discount = 1.0;
            for t in &seq[s..] {
                g += discount * t.reward;
                discount *= gamma;
            }
            let last = &seq[n - 1];
            if !last.terminated {
                g += discount * critic.value(&last.next_obs)?;
            }
            worst = worst.max((targets[s] - g).abs());
        }
    }
    verdict(worst <= 1e-10, format!("max |vtrace - n-step| = {worst:.2e} over 1000 sequences"))
}

// ---------------------------------------------------------------- criterion 7

fn batch_loss(net: &Mlp<f64>, x: &Matrix<f64>, y: &Matrix<f64>, loss: &Loss<f64>) -> Result<f64> {
    Ok(net.loss_and_gradients(x, y, loss)?.0)
}

fn gradient_correctness() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for kind in ["mse", "gaussian_nll"] {
        for i in 0..20u64 {
            let depth = rng.gen_range(1..=3);
            let mut sizes = vec![rng.gen_range(1..=6)];
            for _ in 0..depth {
                sizes.push(rng.gen_range(2..=12));
            }
            let out_dim = rng.gen_range(1..=4);
            sizes.push(out_dim);
            let mut net = Mlp::<f64>::new(&sizes, 700 + i)?;
            let batch = rng.gen_range(1..=8);
            let x = Matrix::new(batch, sizes[0], (0..batch * sizes[0]).map(|_| rng.gen_range(-2.0..2.0)).collect())?;
            let y = Matrix::new(batch, out_dim, (0..batch * out_dim).map(|_| rng.gen_range(-2.0..2.0)).collect())?;
            let loss = match kind {
                "mse" => Loss::Mse,
                _ => Loss::GaussianNll((0..out_dim).map(|_| rng.gen_range(0.2..2.0)).collect()),
            };
            let analytic = net.loss_and_gradients(&x, &y, &loss)?.1.flatten();
            ensure!(analytic.len() == net.num_params(), "gradient length mismatch");
            for _ in 0..10 {
                let idx = rng.gen_range(0..net.num_params());
                let h = 1e-5;
                let orig = net.param(idx);
                net.set_param(idx, orig + h);
                let up = batch_loss(&net, &x, &y, &loss)?;
                net.set_param(idx, orig - h);
                let down = batch_loss(&net, &x, &y, &loss)?;
                net.set_param(idx, orig);
                let numeric = (up - down) / (2.0 * h);
                let rel = (analytic[idx] - numeric).abs() / (analytic[idx].abs() + numeric.abs()).max(1e-8);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    verdict(worst < 1e-4, format!("max relative error {worst:.2e} over {checked} coordinates"))
}

// ---------------------------------------------------------------- criterion 8

fn random_transitions(count: usize, seed: u64) -> Result<Vec<Transition<f64>>> {
    let env = EnvSpec::<f64>::inverted_pendulum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut episode = 0;
    let (mut state, mut obs) = env.reset(seed * 1000 + episode);
    while out.len() < count {
        let action = vec![rng.gen_range(env.action_low..=env.action_high)];
        let (next_state, step) = env.step(&state, &action)?;
        out.push(Transition {
            obs: obs.clone(),
            action,
            reward: step.reward,
            next_obs: step.observation.clone(),
            terminated: step.terminated,
            truncated: step.truncated,
            behavior_log_prob: None,
        });
        if step.terminated || step.truncated {
            episode += 1;
            (state, obs) = env.reset(seed * 1000 + episode);
        } else {
            (state, obs) = (next_state, step.observation);
        }
    }
    Ok(out)
}

fn one_step_mse(model: &DynamicsModel<f64>, data: &[Transition<f64>]) -> Result<(f64, f64)> {
    let (mut model_err, mut zero_err, mut n) = (0.0, 0.0, 0.0);
    for t in data {
        let pred = model.predict_next(&t.obs, &t.action)?;
        for ((p, o), y) in pred.iter().zip(&t.obs).zip(&t.next_obs) {
            model_err += (p - y).powi(2);
            zero_err += (o - y).powi(2);
            n += 1.0;
        }
    }
    Ok((model_err / n, zero_err / n))
}

fn dynamics_learning() -> Result<Verdict> {
    let train = random_transitions(5000, 1)?;
    let held_out = random_transitions(1000, 2)?;
    let mut model = DynamicsModel::<f64>::new(4, 1, &[64, 64], 8)?;
    model.fit_normalization(train.iter());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let t = Instant::now();
    for _ in 0..200 {
        order.shuffle(&mut rng);
        for chunk in order.chunks(256) {
            let batch: Vec<&Transition<f64>> = chunk.iter().map(|&i| &train[i]).collect();
            model.train(&batch, 1e-3)?;
        }
    }
    let (mse, baseline) = one_step_mse(&model, &held_out)?;
    verdict(
        mse < 0.5 * baseline,
        format!(
            "held-out MSE {mse:.3e} vs zero-delta {baseline:.3e} (ratio {:.4}), {:.0} s",
            mse / baseline,
            t.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn small_run(parallel: bool) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: 11,
        episodes: 4,
        epochs: 10,
        ..ExperimentConfig::default()
    };
    cfg.planner.k = 12;
    cfg.planner.m = 3;
    cfg.planner.parallel = parallel;
    cfg
}

fn csv_bytes(dir: &Path) -> Result<Vec<u8>> {
    Ok(std::fs::read(dir.join(RESULTS_FILE))?)
}

fn determinism() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let mut files = Vec::new();
    for (name, parallel) in [("serial_a", false), ("serial_b", false), ("parallel_a", true), ("parallel_b", true)] {
        let out = dir.path().join(name);
        cmd_train(&small_run(parallel), &out, Precision::F64)?;
        ensure!(out.join(TIMING_FILE).exists(), "timing file missing");
        files.push(csv_bytes(&out)?);
    }
    let serial = files[0] == files[1];
    let parallel = files[2] == files[3];
    let across = files[0] == files[2];
    verdict(
        serial && parallel,
        format!(
            "serial runs identical: {serial}, parallel runs identical: {parallel}, serial == parallel: {across}, {} bytes",
            files[0].len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Result<Verdict>); 9] = [
        (5, "PI2 math suite", pi2_math),
        (6, "V-trace equivalence", vtrace_equivalence),
        (7, "gradient correctness", gradient_correctness),
        (8, "dynamics learning", dynamics_learning),
        (9, "determinism", determinism),
        (4, "planning latency ratio", planning_latency),
        (1, "InvertedPendulum solved", inverted_pendulum_solved),
        (2, "sample-efficiency ordering", sample_efficiency_ordering),
        (3, "ablation ordering", ablation_ordering),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut results = Vec::new();
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match run() {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        let line = format!(
            "criterion {id} ({name}): {} -- {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        say(&line);
        results.push((id, pass, line));
    }
    results.sort_by_key(|r| r.0);
    say("\nacceptance summary");
    for (_, _, line) in &results {
        say(line);
    }
    if results.iter().all(|r| r.1) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

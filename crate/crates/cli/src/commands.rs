//! The `train`, `benchmark` and `ablation` subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use critic_pi2::planner::{baseline_plan, critic_pi2_plan, BaselineMode, PlanContext};
use critic_pi2::trainer::{run_experiment, AgentKind, EpisodeRecord, ExperimentConfig, Models};
use critic_pi2::env::EnvSpec;
use critic_pi2::Scalar;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::output::{write_json, write_results};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub agent: String,
    pub seed: u64,
    pub precision: Precision,
    pub episodes_run: usize,
    pub final_eval_return: Option<f64>,
    pub best_eval_return: Option<f64>,
    pub first_train_return: Option<f64>,
    pub final_train_return: Option<f64>,
    pub config: ExperimentConfig,
}

pub struct TrainOutcome {
    pub records: Vec<EpisodeRecord>,
    pub summary: TrainSummary,
}

/// Runs one experiment and writes `results.csv`, `timing.csv`,
/// `summary.json`, `config.json` and the trained networks into `out`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, precision: Precision) -> Result<TrainOutcome> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), cfg)?;
    let records = match precision {
        Precision::F32 => train_with::<f32>(cfg, out)?,
        Precision::F64 => train_with::<f64>(cfg, out)?,
    };
    write_results(out, &records)?;
    let evals: Vec<f64> = records.iter().filter_map(|r| r.eval_return).collect();
    let summary = TrainSummary {
        agent: cfg.agent.name().to_string(),
        seed: cfg.seed,
        precision,
        episodes_run: records.len(),
        final_eval_return: evals.last().copied(),
        best_eval_return: evals.iter().copied().reduce(f64::max),
        first_train_return: records.first().map(|r| r.train_return),
        final_train_return: records.last().map(|r| r.train_return),
        config: cfg.clone(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(TrainOutcome { records, summary })
}

fn train_with<T: Scalar>(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<EpisodeRecord>> {
    let outcome = run_experiment::<T>(cfg)?;
    save_models(&outcome.models, &out.join("models"))?;
    Ok(outcome.records)
}

fn save_models<T: Scalar>(models: &Models<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    models.actor.mean_net.save(dir.join("actor.mlp"))?;
    models.critic.net.save(dir.join("critic.mlp"))?;
    models.dynamics.net.save(dir.join("dynamics.mlp"))?;
    let as_f64 = |xs: &[T]| xs.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
    let norm = serde_json::json!({
        "input_mean": as_f64(&models.dynamics.input_norm.mean),
        "input_std": as_f64(&models.dynamics.input_norm.std),
        "target_mean": as_f64(&models.dynamics.target_norm.mean),
        "target_std": as_f64(&models.dynamics.target_norm.std),
        "policy_sigma": as_f64(models.actor.sigma()),
        "critic_value_scale": models.critic.value_scale.as_f64(),
    });
    write_json(&dir.join("normalization.json"), &norm)?;
    if let Some(ddpg) = &models.ddpg {
        ddpg.actor.save(dir.join("ddpg_actor.mlp"))?;
        ddpg.q.save(dir.join("ddpg_q.mlp"))?;
    }
    Ok(())
}

/// Published reference latencies, seconds per call, for side-by-side display.
pub const REFERENCE_LATENCY_S: [(&str, f64); 4] = [
    ("critic_pi2", 0.0139),
    ("vanilla_pi2", 1.09),
    ("mpc", 1.22),
    ("ddpg", 0.001),
];

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub horizon: usize,
    pub calls: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub reference_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkReport {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub precision: Precision,
    pub rows: Vec<BenchRow>,
}

impl BenchmarkReport {
    pub fn row(&self, method: &str) -> &BenchRow {
        self.rows.iter().find(|r| r.method == method).expect("known method")
    }

    /// `vanilla_pi2 / critic_pi2` and `mpc / critic_pi2` mean-time ratios.
    pub fn ratios(&self) -> (f64, f64) {
        let c = self.row("critic_pi2").mean_s;
        (self.row("vanilla_pi2").mean_s / c, self.row("mpc").mean_s / c)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "planning latency, K={} M={} ({:?})\n{:<12} {:>3} {:>6} {:>12} {:>12} {:>12}\n",
            self.k, self.m, self.precision, "method", "H", "calls", "mean_s", "std_s", "reference_s"
        );
        for r in &self.rows {
            s += &format!(
                "{:<12} {:>3} {:>6} {:>12.6} {:>12.6} {:>12.4}\n",
                r.method, r.horizon, r.calls, r.mean_s, r.std_s, r.reference_s
            );
        }
        let (v, m) = self.ratios();
        s += &format!("vanilla_pi2 / critic_pi2 = {v:.1}x, mpc / critic_pi2 = {m:.1}x\n");
        s
    }
}

fn time_calls<F: FnMut() -> Result<()>>(warmup: usize, calls: usize, mut f: F) -> Result<(f64, f64)> {
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(calls);
    for _ in 0..calls {
        let t = Instant::now();
        f()?;
        samples.push(t.elapsed().as_secs_f64());
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, var.sqrt()))
}

/// Times one planning call per method on identical, freshly initialized networks.
pub fn cmd_benchmark(cfg: &ExperimentConfig, calls: usize, warmup: usize, precision: Precision) -> Result<BenchmarkReport> {
    if calls == 0 {
        bail!("benchmark needs at least one timed call");
    }
    match precision {
        Precision::F32 => benchmark_with::<f32>(cfg, calls, warmup, precision),
        Precision::F64 => benchmark_with::<f64>(cfg, calls, warmup, precision),
    }
}

fn benchmark_with<T: Scalar>(cfg: &ExperimentConfig, calls: usize, warmup: usize, precision: Precision) -> Result<BenchmarkReport> {
    let mut base = cfg.clone();
    base.ablation = Default::default();
    base.agent = AgentKind::Ddpg;
    let models = Models::<T>::new(&base)?;
    let env = EnvSpec::<T>::new(&base.env);
    let obs = env.reset(base.seed).1;
    let ctx = PlanContext {
        dynamics: &models.dynamics,
        critic: Some(&models.critic),
        reward: &env,
        action_low: env.action_low,
        action_high: env.action_high,
        gamma: T::lit(base.vtrace.gamma),
        divergence_reward: T::zero(),
        actor_lr: T::lit(base.network.actor_lr),
    };
    let planner_for = |agent| {
        let mut c = base.clone();
        c.agent = agent;
        c.effective_planner()
    };
    let reference = |m: &str| REFERENCE_LATENCY_S.iter().find(|(n, _)| *n == m).expect("listed").1;
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
    let mut rows = Vec::new();

    let p = planner_for(AgentKind::CriticPi2);
    let (mean, std) = time_calls(warmup, calls, || {
        // inner actor updates must not carry over between calls
        let mut actor = models.actor.clone();
        critic_pi2_plan(&obs, &mut actor, &ctx, &p, &mut rng)?;
        Ok(())
    })?;
    rows.push(BenchRow {
        method: "critic_pi2".into(),
        horizon: p.h,
        calls,
        mean_s: mean,
        std_s: std,
        reference_s: reference("critic_pi2"),
    });

    for (agent, mode, name) in [
        (AgentKind::VanillaPi2, BaselineMode::VanillaPi2, "vanilla_pi2"),
        (AgentKind::Mpc, BaselineMode::MpcRandomShooting, "mpc"),
    ] {
        let p = planner_for(agent);
        let (mean, std) = time_calls(warmup, calls, || {
            baseline_plan(&obs, &models.actor, &ctx, &p, mode, &mut rng)?;
            Ok(())
        })?;
        info!("{name}: {mean:.6} s per call");
        rows.push(BenchRow {
            method: name.into(),
            horizon: p.h,
            calls,
            mean_s: mean,
            std_s: std,
            reference_s: reference(name),
        });
    }

    let ddpg = models.ddpg.as_ref().expect("ddpg networks built");
    let (mean, std) = time_calls(warmup, calls, || {
        std::hint::black_box(ddpg.act(&obs)?);
        Ok(())
    })?;
    rows.push(BenchRow {
        method: "ddpg".into(),
        horizon: 0,
        calls,
        mean_s: mean,
        std_s: std,
        reference_s: reference("ddpg"),
    });
    Ok(BenchmarkReport {
        k: base.planner.k,
        m: base.planner.m,
        precision,
        rows,
    })
}

pub const ABLATION_VARIANTS: [&str; 4] = ["full", "no_greedy", "no_critic", "no_actor_training"];

/// The four ablation configs; each differs from `full` by one switch.
pub fn ablation_variants(base: &ExperimentConfig) -> Vec<(&'static str, ExperimentConfig)> {
    ABLATION_VARIANTS
        .iter()
        .map(|&name| {
            let mut c = base.clone();
            c.agent = AgentKind::CriticPi2;
            c.ablation = Default::default();
            match name {
                "no_greedy" => c.ablation.no_greedy = true,
                "no_critic" => c.ablation.no_critic = true,
                "no_actor_training" => c.ablation.no_actor_training = true,
                _ => {}
            }
            (name, c)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Last evaluation return of each seed.
    pub final_returns: Vec<f64>,
    /// Training return of the first episode of each seed.
    pub first_returns: Vec<f64>,
    pub mean_final_return: f64,
    pub mean_first_return: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub variants: Vec<VariantSummary>,
    /// Variant names by descending mean final return.
    pub ranking: Vec<String>,
}

impl AblationReport {
    pub fn variant(&self, name: &str) -> &VariantSummary {
        self.variants.iter().find(|v| v.name == name).expect("known variant")
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Runs every ablation variant for every seed under `out/<variant>/seed_<s>`
/// and writes `out/comparison.json`.
pub fn cmd_ablation(base: &ExperimentConfig, seeds: &[u64], out: &Path, precision: Precision) -> Result<AblationReport> {
    if base.agent != AgentKind::CriticPi2 {
        bail!("ablation requires agent = critic_pi2");
    }
    if seeds.is_empty() {
        bail!("ablation needs at least one seed");
    }
    let mut variants = Vec::new();
    for (name, cfg) in ablation_variants(base) {
        let dir: PathBuf = out.join(name);
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("config.json"), &cfg)?;
        let mut final_returns = Vec::new();
        let mut first_returns = Vec::new();
        for &seed in seeds {
            let run_cfg = ExperimentConfig { seed, ..cfg.clone() };
            let outcome = cmd_train(&run_cfg, &dir.join(format!("seed_{seed}")), precision)
                .with_context(|| format!("ablation variant {name}, seed {seed}"))?;
            let s = &outcome.summary;
            final_returns.push(s.final_eval_return.or(s.final_train_return).unwrap_or(0.0));
            first_returns.push(s.first_train_return.unwrap_or(0.0));
            info!("ablation {name} seed {seed}: final {:?}", final_returns.last());
        }
        variants.push(VariantSummary {
            name: name.to_string(),
            seeds: seeds.to_vec(),
            mean_final_return: mean(&final_returns),
            mean_first_return: mean(&first_returns),
            final_returns,
            first_returns,
        });
    }
    let mut ranking: Vec<&VariantSummary> = variants.iter().collect();
    ranking.sort_by(|a, b| b.mean_final_return.total_cmp(&a.mean_final_return));
    let report = AblationReport {
        ranking: ranking.iter().map(|v| v.name.clone()).collect(),
        variants,
    };
    write_json(&out.join("comparison.json"), &report)?;
    Ok(report)
}

//! CSV and JSON result files.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use critic_pi2::trainer::EpisodeRecord;
use serde::Serialize;

/// Learning-curve columns; every value is a pure function of seed and config.
#[derive(Debug, Serialize)]
struct ResultRow {
    episode: usize,
    train_return: f64,
    episode_length: usize,
    eval_return: Option<f64>,
    dynamics_loss: Option<f64>,
    critic_loss: Option<f64>,
    actor_loss: Option<f64>,
}

/// Wall-clock columns, kept apart so the results file stays reproducible.
#[derive(Debug, Serialize)]
struct TimingRow {
    episode: usize,
    mean_plan_time_s: f64,
    wall_time_s: f64,
}

pub const RESULTS_FILE: &str = "results.csv";
pub const TIMING_FILE: &str = "timing.csv";

fn finite(x: Option<f64>) -> Option<f64> {
    x.filter(|v| v.is_finite())
}

pub fn write_results(dir: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let path = dir.join(RESULTS_FILE);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    for r in records {
        w.serialize(ResultRow {
            episode: r.episode,
            train_return: r.train_return,
            episode_length: r.episode_length,
            eval_return: finite(r.eval_return),
            dynamics_loss: finite(r.dynamics_loss),
            critic_loss: finite(r.critic_loss),
            actor_loss: finite(r.actor_loss),
        })?;
    }
    if records.is_empty() {
        w.write_record([
            "episode",
            "train_return",
            "episode_length",
            "eval_return",
            "dynamics_loss",
            "critic_loss",
            "actor_loss",
        ])?;
    }
    w.flush()?;

    let path = dir.join(TIMING_FILE);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    for r in records {
        w.serialize(TimingRow {
            episode: r.episode,
            mean_plan_time_s: r.mean_plan_time_s,
            wall_time_s: r.wall_time_s,
        })?;
    }
    if records.is_empty() {
        w.write_record(["episode", "mean_plan_time_s", "wall_time_s"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Reads `eval_return` per episode back from a results file.
pub fn read_eval_returns(path: &Path) -> Result<Vec<(usize, Option<f64>)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for row in r.deserialize::<(usize, f64, usize, Option<f64>, Option<f64>, Option<f64>, Option<f64>)>() {
        let row = row?;
        out.push((row.0, row.3));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(episode: usize, eval: Option<f64>) -> EpisodeRecord {
        EpisodeRecord {
            episode,
            train_return: 12.0,
            episode_length: 12,
            eval_return: eval,
            dynamics_loss: None,
            critic_loss: Some(0.25),
            actor_loss: Some(f64::NAN),
            mean_plan_time_s: 0.001,
            wall_time_s: 0.5,
        }
    }

    #[test]
    fn header_once_and_empty_missing_fields() {
        let dir = tempfile::tempdir().unwrap();
        write_results(dir.path(), &[record(1, None), record(2, Some(30.5))]).unwrap();
        let text = fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "episode,train_return,episode_length,eval_return,dynamics_loss,critic_loss,actor_loss"
        );
        assert_eq!(lines[1], "1,12.0,12,,,0.25,");
        assert_eq!(lines[2], "2,12.0,12,30.5,,0.25,");
        assert_eq!(lines.len(), 3);
        assert!(!text.contains("NaN"));
        let timing = fs::read_to_string(dir.path().join(TIMING_FILE)).unwrap();
        assert!(timing.starts_with("episode,mean_plan_time_s,wall_time_s\n1,0.001,0.5\n"));
        assert_eq!(
            read_eval_returns(&dir.path().join(RESULTS_FILE)).unwrap(),
            vec![(1, None), (2, Some(30.5))]
        );
    }

    #[test]
    fn empty_run_still_has_header() {
        let dir = tempfile::tempdir().unwrap();
        write_results(dir.path(), &[]).unwrap();
        let text = fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
        assert_eq!(text.lines().count(), 1);
    }
}

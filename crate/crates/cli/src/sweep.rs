//! Parameter sweeps: one run per (value, seed), aggregated per episode.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use pessim_drive_core::{CoreError, Result};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::runner::{run, RunArtifacts};

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// One run per (value, seed); runs execute as independent worker tasks with
/// per-run output directories. Returns the aggregated CSV path.
pub fn sweep(
    base: &ExperimentConfig,
    param: &str,
    values: &[String],
    seeds: &[u64],
) -> Result<PathBuf> {
    if values.is_empty() {
        return Err(CoreError::Config("sweep needs at least one value".into()));
    }
    if seeds.is_empty() {
        return Err(CoreError::Config("sweep needs at least one seed".into()));
    }
    // validate the parameter name and all values up front
    let mut jobs = Vec::new();
    for value in values {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.apply(param, value)?;
            cfg.seed = seed;
            cfg.out_dir = base
                .out_dir
                .join(format!("{}-{}", param.replace('_', "-"), value))
                .join(format!("seed-{seed}"));
            cfg.validate()?;
            jobs.push((value.clone(), seed, cfg));
        }
    }
    let results: Vec<(String, u64, Result<RunArtifacts>)> = jobs
        .into_par_iter()
        .map(|(value, seed, cfg)| (value, seed, run(&cfg)))
        .collect();

    let mut per_value: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for (value, seed, res) in results {
        let art = res.map_err(|e| {
            CoreError::Config(format!("run {param}={value} seed {seed} failed: {e}"))
        })?;
        match per_value.iter_mut().find(|(v, _)| *v == value) {
            Some((_, runs)) => runs.push(art.utilities),
            None => per_value.push((value, vec![art.utilities])),
        }
    }

    let mut csv = String::from("param,value,episode,mean_utility,std_utility,runs\n");
    for (value, runs) in &per_value {
        let episodes = runs.iter().map(|r| r.len()).min().unwrap_or(0);
        for ep in 0..episodes {
            let xs: Vec<f64> = runs.iter().map(|r| r[ep]).collect();
            let mean: f64 = xs.iter().sum::<f64>() / xs.len() as f64;
            let var: f64 = if xs.len() > 1 {
                xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
            } else {
                0.0
            };
            let _ = writeln!(
                csv,
                "{param},{value},{ep},{mean:.9},{:.9},{}",
                var.sqrt(),
                xs.len()
            );
        }
    }
    fs::create_dir_all(&base.out_dir)?;
    let path = base.out_dir.join(format!("sweep-{}.csv", param.replace('_', "-")));
    fs::write(&path, csv)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &std::path::Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_file(
            "episodes=2\nhorizon=30\nminibatch=16\nbatch=32\nmle_steps=5\nhidden_agent=8\n\
             hidden_model=8\nupdate_every=15\nrollout_starts=2\nrollout_len=3\npgd_iters=2\n",
        )
        .unwrap();
        cfg.out_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn unknown_param_is_a_usage_error() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path());
        assert!(sweep(&cfg, "not_a_field", &["1".into()], &[0]).is_err());
    }

    #[test]
    fn aggregates_mean_and_std_per_episode() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path());
        let path = sweep(&cfg, "d", &["0".into(), "200".into()], &[0, 1]).unwrap();
        let text = fs::read_to_string(path).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        // 2 values x 2 episodes
        assert_eq!(rows.len(), 4);
        for row in rows {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols[0], "d");
            assert_eq!(cols[5], "2");
            let std: f64 = cols[4].parse().unwrap();
            assert!(std >= 0.0);
        }
    }
}

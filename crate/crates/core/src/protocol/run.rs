use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;

use super::config::SimConfig;
use super::world::{ChannelBudget, World};

/// Outcome of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub seed: u64,
    /// `mse[t-1]` is the average squared error after step `t`.
    pub mse: Vec<f64>,
    pub class_accuracy: f64,
    pub classes: Vec<usize>,
    /// `mu_a^{(t_max)}` per agent.
    pub final_estimates: Vec<f64>,
    pub true_means: Vec<f64>,
    pub budgets: Vec<ChannelBudget>,
}

pub fn run(cfg: &SimConfig, seed: u64) -> Result<RunResult> {
    let mut world = World::new(cfg, seed)?;
    let mut mse = Vec::with_capacity(cfg.t_max as usize);
    for _ in 0..cfg.t_max {
        world.step()?;
        mse.push(world.squared_error());
    }
    let m = world.agents();
    Ok(RunResult {
        seed,
        mse,
        class_accuracy: world.class_accuracy(),
        classes: (0..m).map(|a| world.class_of(a)).collect(),
        final_estimates: (0..m).map(|a| world.estimate(a)).collect(),
        true_means: (0..m).map(|a| world.true_mean(a)).collect(),
        budgets: world.budgets(),
    })
}

/// Runs every seed (in parallel on the current rayon pool); results keep the seed order.
pub fn run_seeds(cfg: &SimConfig, seeds: &[u64]) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    seeds.par_iter().map(|&s| run(cfg, s)).collect()
}

/// Per-step mean and standard error of a set of trajectories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub runs: usize,
}

impl Trajectory {
    pub fn from_runs<'a>(runs: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let runs: Vec<&[f64]> = runs.into_iter().collect();
        let n = runs.len();
        let len = runs.iter().map(|r| r.len()).min().unwrap_or(0);
        let mut mean = vec![0.0; len];
        let mut stderr = vec![0.0; len];
        for i in 0..len {
            let m = runs.iter().map(|r| r[i]).sum::<f64>() / n as f64;
            mean[i] = m;
            stderr[i] = if n > 1 {
                let var = runs.iter().map(|r| (r[i] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
        }
        Self { mean, stderr, runs: n }
    }

    pub fn from_results(results: &[RunResult]) -> Self {
        Self::from_runs(results.iter().map(|r| r.mse.as_slice()))
    }
}

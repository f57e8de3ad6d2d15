use serde::{Deserialize, Serialize};

use crate::error::{config_err, unsupported_err, Result};
use crate::noise::{DataDistribution, NoiseKind, PrivacyParams};
use crate::privacy::{scale_budget_for_pm2, MechanismKind};
use crate::stats::WeightScheme;
use crate::varest::VariancePrior;

/// Order in which an agent queries its peers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Schedule {
    /// All peers in index order, skipping the agent itself.
    #[serde(rename = "rr")]
    RoundRobin,
    /// Index order restricted to the current class estimate.
    #[serde(rename = "rrr")]
    RestrictedRoundRobin,
}

/// Confidence level `theta_t` of the per-peer test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaSchedule {
    /// `theta_t = c / ln(t + 1)`, capped at 1.
    LogDecay { c: f64 },
    Constant { theta: f64 },
}

impl Default for ThetaSchedule {
    fn default() -> Self {
        ThetaSchedule::LogDecay { c: 0.05 }
    }
}

impl ThetaSchedule {
    pub fn theta(&self, t: u64) -> f64 {
        match *self {
            ThetaSchedule::LogDecay { c } => (c / ((t as f64) + 1.0).ln()).min(1.0),
            ThetaSchedule::Constant { theta } => theta,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ThetaSchedule::LogDecay { c } => c > 0.0 && c.is_finite(),
            ThetaSchedule::Constant { theta } => theta > 0.0 && theta <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(config_err(format!("invalid theta schedule {self:?}")))
        }
    }
}

/// Where the data variances used by tests and weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// True variances are known to every agent.
    Known,
    /// Peers release private partial sample variances alongside their means.
    #[serde(rename = "schvar1")]
    SchVar1,
    /// Variances are rebuilt from consecutive PM1 mean releases.
    #[serde(rename = "schvar2")]
    SchVar2,
    /// As `SchVar2`, with negative estimates replaced by a posterior mean.
    #[serde(rename = "schvar2_bayes")]
    SchVar2Bayes,
}

impl VarianceMode {
    pub fn is_known(&self) -> bool {
        matches!(self, VarianceMode::Known)
    }
}

/// How agents form their class estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    /// Per-peer hypothesis tests.
    Estimated,
    /// The true class is given to every agent.
    Oracle,
    /// No collaboration at all.
    Local,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassAssignment {
    /// Each agent joins one of the first `classes` classes independently and uniformly.
    UniformRandom { classes: usize },
    /// Class index of every agent.
    Explicit { classes: Vec<usize> },
}

/// A full simulation setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub agents: usize,
    pub class_means: Vec<f64>,
    /// Per-class standard deviations; `sigma` for every class when absent.
    pub class_stds: Option<Vec<f64>>,
    pub sigma: f64,
    pub assignment: ClassAssignment,
    pub t_max: u64,
    pub mechanism: MechanismKind,
    pub weights: WeightScheme,
    pub schedule: Schedule,
    pub noise: NoiseKind,
    pub epsilon: f64,
    pub delta: f64,
    /// Half-range `L` of the data; `sqrt(3)` times the largest std when absent.
    pub half_range: Option<f64>,
    /// Divide PM2's budget by `floor(log2 t_max) + 1` so both mechanisms end at the same level.
    pub scale_pm2_budget: bool,
    /// Disable privacy noise entirely.
    pub non_private: bool,
    pub theta: ThetaSchedule,
    pub variance: VarianceMode,
    /// Fraction of `(epsilon, delta)` given to the mean channel under `schvar1`.
    pub schvar1_mean_share: f64,
    pub prior: VariancePrior,
    pub class_mode: ClassMode,
    /// Cap on retained releases per peer; exceeding it aborts the run.
    pub max_history: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            agents: 15,
            class_means: vec![0.2, 0.4, 0.8],
            class_stds: None,
            sigma: 0.5,
            assignment: ClassAssignment::UniformRandom { classes: 3 },
            t_max: 10_000,
            mechanism: MechanismKind::Pm1,
            weights: WeightScheme::NonMom,
            schedule: Schedule::RoundRobin,
            noise: NoiseKind::Gaussian,
            epsilon: 1.0,
            delta: 1e-6,
            half_range: None,
            scale_pm2_budget: true,
            non_private: false,
            theta: ThetaSchedule::default(),
            variance: VarianceMode::Known,
            schvar1_mean_share: 0.5,
            prior: VariancePrior::Uniform,
            class_mode: ClassMode::Estimated,
            max_history: None,
        }
    }
}

/// Noise variances derived from a validated config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePlan {
    /// Budget of each mean channel (already scaled for PM2 when requested).
    pub mean_params: PrivacyParams,
    /// Budget of each partial-variance channel under `schvar1`.
    pub variance_params: Option<PrivacyParams>,
    pub sigma_dp_sq: f64,
    pub sigma2_dp_sq: f64,
}

impl SimConfig {
    pub fn class_std(&self, class: usize) -> f64 {
        match &self.class_stds {
            Some(s) => s[class],
            None => self.sigma,
        }
    }

    pub fn class_count(&self) -> usize {
        match &self.assignment {
            ClassAssignment::UniformRandom { classes } => *classes,
            ClassAssignment::Explicit { classes } => classes.iter().max().map_or(0, |m| m + 1),
        }
    }

    /// Whether every agent has the same data standard deviation.
    pub fn homogeneous_sigma(&self) -> bool {
        match &self.class_stds {
            None => true,
            Some(s) => s.iter().take(self.class_count()).all(|&x| x == s[0]),
        }
    }

    pub fn distribution(&self, class: usize) -> Result<DataDistribution> {
        let std = self.class_std(class);
        let mean = self.class_means[class];
        if std == 0.0 {
            Ok(DataDistribution::PointMass { value: mean })
        } else {
            DataDistribution::uniform(mean, std).map_err(|e| config_err(e.to_string()))
        }
    }

    pub fn effective_half_range(&self) -> f64 {
        self.half_range.unwrap_or_else(|| {
            let max_std = (0..self.class_count()).map(|c| self.class_std(c)).fold(0.0, f64::max);
            max_std * 3f64.sqrt()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents < 2 {
            return Err(config_err(format!("need at least 2 agents, got {}", self.agents)));
        }
        if self.class_means.is_empty() || self.class_means.iter().any(|m| !m.is_finite()) {
            return Err(config_err("class_means must be a nonempty list of finite numbers"));
        }
        match &self.assignment {
            ClassAssignment::UniformRandom { classes } => {
                if *classes == 0 || *classes > self.class_means.len() {
                    return Err(config_err(format!(
                        "classes = {classes} must be between 1 and the number of class means ({})",
                        self.class_means.len()
                    )));
                }
            }
            ClassAssignment::Explicit { classes } => {
                if classes.len() != self.agents {
                    return Err(config_err(format!(
                        "explicit assignment lists {} agents, expected {}",
                        classes.len(),
                        self.agents
                    )));
                }
                if classes.iter().any(|&c| c >= self.class_means.len()) {
                    return Err(config_err("explicit assignment refers to an unknown class"));
                }
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(config_err(format!("sigma must be finite and nonnegative, got {}", self.sigma)));
        }
        if let Some(s) = &self.class_stds {
            if s.len() != self.class_means.len() || s.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                return Err(config_err("class_stds must list one finite nonnegative value per class"));
            }
        }
        if let Some(l) = self.half_range {
            if !(l > 0.0 && l.is_finite()) {
                return Err(config_err(format!("half_range must be positive, got {l}")));
            }
        }
        if !(self.schvar1_mean_share > 0.0 && self.schvar1_mean_share < 1.0) {
            return Err(config_err("schvar1_mean_share must lie in (0, 1)"));
        }
        self.theta.validate()?;
        if matches!(self.variance, VarianceMode::SchVar2 | VarianceMode::SchVar2Bayes)
            && self.mechanism == MechanismKind::Pm2
        {
            return Err(unsupported_err(
                "variance reconstruction from releases is only defined for the pm1 mechanism",
            ));
        }
        if !self.non_private {
            self.noise_plan()?;
        }
        Ok(())
    }

    /// Noise variances for the mean and partial-variance channels.
    pub fn noise_plan(&self) -> Result<NoisePlan> {
        let l = self.effective_half_range();
        if self.non_private || l == 0.0 {
            let p = PrivacyParams::new(self.epsilon.max(1e-300), self.delta, l.max(1e-300), self.noise)
                .map_err(|e| config_err(e.to_string()))?;
            return Ok(NoisePlan { mean_params: p, variance_params: None, sigma_dp_sq: 0.0, sigma2_dp_sq: 0.0 });
        }
        let base = PrivacyParams::new(self.epsilon, self.delta, l, self.noise).map_err(|e| config_err(e.to_string()))?;
        let base = if self.mechanism == MechanismKind::Pm2 && self.scale_pm2_budget {
            scale_budget_for_pm2(&base, self.t_max)?
        } else {
            base
        };
        if self.variance == VarianceMode::SchVar1 {
            let mean = base.scaled(self.schvar1_mean_share)?;
            let var = base.scaled(1.0 - self.schvar1_mean_share)?;
            Ok(NoisePlan {
                mean_params: mean,
                variance_params: Some(var),
                sigma_dp_sq: mean.sigma_dp_squared(),
                sigma2_dp_sq: var.sigma2_dp_squared(),
            })
        } else {
            Ok(NoisePlan { mean_params: base, variance_params: None, sigma_dp_sq: base.sigma_dp_squared(), sigma2_dp_sq: 0.0 })
        }
    }
}

//! The agents, their channels, and one synchronous time step.

use rand::Rng;

use crate::error::Result;
use crate::noise::{DataDistribution, SeedTree, SimRng, StreamTag};
use crate::privacy::{privacy_budget, ReleaseChannel};
use crate::stats::PeerStatistic;
use crate::varest::{
    bayesian_improve_with_prior, nonnegative_or_infinite, OwnVarianceAccumulator, PrefixSums, SchVar1State,
    SchVar2State,
};

use super::config::{ClassAssignment, ClassMode, NoisePlan, Schedule, SimConfig, VarianceMode};
use super::decision::{combine_estimate, decide_known_with_z, decide_unknown_with_z, PeerCursor};
use crate::noise::std_normal_quantile;

/// What agent `a` keeps about peer `b`.
#[derive(Debug, Clone)]
struct PeerView {
    stat: PeerStatistic,
    rebuild: Option<SchVar2State>,
}

#[derive(Debug, Clone)]
struct Agent {
    class: usize,
    dist: DataDistribution,
    variance: f64,
    data_rng: SimRng,
    own: OwnVarianceAccumulator,
    prefix: Option<PrefixSums>,
    peers: Vec<Option<PeerView>>,
    in_class: Vec<bool>,
    /// Peers dropped for good under restricted round robin.
    dropped: Vec<bool>,
    cursor: PeerCursor,
    estimate: f64,
    estimate_var: f64,
    /// Combination weights by agent index (own weight at the agent's own index).
    weights: Vec<f64>,
    last_query: Option<usize>,
}

/// Responder-side state of the ordered pair `b -> a`.
#[derive(Debug, Clone)]
struct Link {
    channel: ReleaseChannel,
    noise_rng: SimRng,
    variance: Option<(SchVar1State, SimRng)>,
}

/// Budget spent on one ordered pair at the end of a run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ChannelBudget {
    pub from: usize,
    pub to: usize,
    pub releases: u64,
    pub epsilon: f64,
    pub delta: f64,
    /// Budget of the partial-variance channel, when used.
    pub variance_epsilon: Option<f64>,
    pub variance_delta: Option<f64>,
}

/// All agents and channels of one simulation run.
#[derive(Debug, Clone)]
pub struct World {
    cfg: SimConfig,
    plan: NoisePlan,
    agents: Vec<Agent>,
    links: Vec<Link>,
    t: u64,
}

fn assign_classes(cfg: &SimConfig, seeds: &SeedTree) -> Vec<usize> {
    match &cfg.assignment {
        ClassAssignment::Explicit { classes } => classes.clone(),
        ClassAssignment::UniformRandom { classes } => {
            let mut rng = seeds.stream(StreamTag::ClassAssignment, 0, 0);
            (0..cfg.agents).map(|_| rng.random_range(0..*classes)).collect()
        }
    }
}

impl World {
    pub fn new(cfg: &SimConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let plan = cfg.noise_plan()?;
        let seeds = SeedTree::new(seed);
        let m = cfg.agents;
        let classes = assign_classes(cfg, &seeds);
        let needs_rebuild = matches!(cfg.variance, VarianceMode::SchVar2 | VarianceMode::SchVar2Bayes);
        let mut agents = Vec::with_capacity(m);
        for (a, &class) in classes.iter().enumerate() {
            let dist = cfg.distribution(class)?;
            let mut peers = Vec::with_capacity(m);
            for b in 0..m {
                if b == a {
                    peers.push(None);
                    continue;
                }
                let stat = PeerStatistic::new(cfg.weights, cfg.mechanism, plan.sigma_dp_sq)
                    .with_max_history(cfg.max_history);
                let rebuild = if needs_rebuild { Some(SchVar2State::new(cfg.mechanism)?) } else { None };
                peers.push(Some(PeerView { stat, rebuild }));
            }
            let in_class = match cfg.class_mode {
                ClassMode::Estimated => vec![true; m],
                ClassMode::Oracle => classes.iter().map(|&c| c == class).collect(),
                ClassMode::Local => (0..m).map(|b| b == a).collect(),
            };
            agents.push(Agent {
                class,
                variance: dist.variance(),
                dist,
                data_rng: seeds.stream(StreamTag::Data, a as u64, 0),
                own: OwnVarianceAccumulator::new(),
                prefix: (cfg.variance == VarianceMode::SchVar1).then(PrefixSums::new),
                peers,
                in_class,
                dropped: vec![false; m],
                cursor: PeerCursor::new(m, a),
                estimate: 0.0,
                estimate_var: f64::INFINITY,
                weights: Vec::new(),
                last_query: None,
            });
        }
        let mut links = Vec::with_capacity(m * m);
        for b in 0..m {
            for a in 0..m {
                let channel = ReleaseChannel::new(cfg.mechanism, cfg.noise, plan.sigma_dp_sq);
                let variance = (cfg.variance == VarianceMode::SchVar1).then(|| {
                    (
                        SchVar1State::new(plan.sigma2_dp_sq, cfg.noise),
                        seeds.stream(StreamTag::VarianceNoise, b as u64, a as u64),
                    )
                });
                links.push(Link { channel, noise_rng: seeds.stream(StreamTag::MeanNoise, b as u64, a as u64), variance });
            }
        }
        Ok(Self { cfg: cfg.clone(), plan, agents, links, t: 0 })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn noise_plan(&self) -> &NoisePlan {
        &self.plan
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn agents(&self) -> usize {
        self.agents.len()
    }

    pub fn class_of(&self, a: usize) -> usize {
        self.agents[a].class
    }

    pub fn true_mean(&self, a: usize) -> f64 {
        self.agents[a].dist.mean()
    }

    pub fn local_mean(&self, a: usize) -> f64 {
        self.agents[a].own.mean()
    }

    /// `mu_a^{(t)}`.
    pub fn estimate(&self, a: usize) -> f64 {
        self.agents[a].estimate
    }

    /// Variance of `mu_a^{(t)}` as booked by the combination step (with estimated
    /// variances when they are unknown).
    pub fn estimate_variance(&self, a: usize) -> f64 {
        self.agents[a].estimate_var
    }

    /// Combination weights of the latest step indexed by agent; entry `a` is the
    /// weight of the own mean.
    pub fn combination_weights(&self, a: usize) -> Vec<f64> {
        self.agents[a].weights.clone()
    }

    /// Peer queried by `a` in the latest step.
    pub fn last_query(&self, a: usize) -> Option<usize> {
        self.agents[a].last_query
    }

    /// `C_a^{(t)}` as a membership mask (always containing `a`).
    pub fn class_estimate(&self, a: usize) -> &[bool] {
        &self.agents[a].in_class
    }

    pub fn peer_statistic(&self, a: usize, b: usize) -> Option<&PeerStatistic> {
        self.agents[a].peers[b].as_ref().map(|p| &p.stat)
    }

    /// `(1/M) sum_a (mu_a - true mean_a)^2`.
    pub fn squared_error(&self) -> f64 {
        let m = self.agents.len() as f64;
        self.agents.iter().map(|ag| (ag.estimate - ag.dist.mean()).powi(2)).sum::<f64>() / m
    }

    /// Fraction of ordered pairs whose class membership is estimated correctly.
    pub fn class_accuracy(&self) -> f64 {
        let m = self.agents.len();
        let mut right = 0usize;
        for a in 0..m {
            for b in 0..m {
                if a != b && self.agents[a].in_class[b] == (self.agents[a].class == self.agents[b].class) {
                    right += 1;
                }
            }
        }
        right as f64 / (m * (m - 1)) as f64
    }

    pub fn budgets(&self) -> Vec<ChannelBudget> {
        let m = self.agents.len();
        let mut out = Vec::new();
        for b in 0..m {
            for a in 0..m {
                if a == b {
                    continue;
                }
                let link = &self.links[b * m + a];
                let k = link.channel.kappa();
                let (eps, del) = if k == 0 { (0.0, 0.0) } else { privacy_budget(self.cfg.mechanism, k, &self.plan.mean_params) };
                let var = self.plan.variance_params.filter(|_| k > 0).map(|p| privacy_budget(self.cfg.mechanism, k, &p));
                out.push(ChannelBudget {
                    from: b,
                    to: a,
                    releases: k,
                    epsilon: if self.cfg.non_private { 0.0 } else { eps },
                    delta: if self.cfg.non_private { 0.0 } else { del },
                    variance_epsilon: var.map(|v| v.0),
                    variance_delta: var.map(|v| v.1),
                });
            }
        }
        out
    }

    /// Advances every agent by one time step.
    pub fn step(&mut self) -> Result<()> {
        self.t += 1;
        let t = self.t;
        let m = self.agents.len();
        for ag in &mut self.agents {
            let x = ag.dist.sample(&mut ag.data_rng);
            ag.own.push(x);
            if let Some(p) = &mut ag.prefix {
                p.push(x);
            }
        }
        if self.cfg.class_mode != ClassMode::Local {
            for a in 0..m {
                self.query(a)?;
            }
        }
        let theta = self.cfg.theta.theta(t);
        let z = std_normal_quantile(1.0 - theta / 2.0).unwrap_or(f64::INFINITY);
        for a in 0..m {
            if self.cfg.class_mode == ClassMode::Estimated {
                self.reclassify(a, theta, z);
            }
            self.combine(a);
        }
        Ok(())
    }

    fn query(&mut self, a: usize) -> Result<()> {
        let m = self.agents.len();
        let schedule = self.cfg.schedule;
        let ag = &mut self.agents[a];
        let (in_class, dropped) = (&ag.in_class, &ag.dropped);
        let b = ag.cursor.choose(schedule, |b| in_class[b] && !dropped[b]);
        ag.last_query = b;
        let Some(b) = b else { return Ok(()) };
        let t = self.t;
        let prefix_sum = self.agents[b].own.sum();
        let link = &mut self.links[b * m + a];
        let release = link.channel.release_mean(prefix_sum, t, &mut link.noise_rng)?;
        let mut v_new = None;
        if let Some((sv, rng)) = &mut link.variance {
            let data = self.agents[b].prefix.as_ref().expect("prefix sums kept under schvar1");
            v_new = Some(nonnegative_or_infinite(sv.release(&link.channel, &release, data, rng)?));
        }
        let sigma_dp_sq = self.plan.sigma_dp_sq;
        let (mode, prior) = (self.cfg.variance, self.cfg.prior);
        let view = self.agents[a].peers[b].as_mut().expect("peer view exists");
        view.stat.update(&release)?;
        if let Some(rb) = &mut view.rebuild {
            rb.push(&release)?;
            let raw = rb.raw_estimate(sigma_dp_sq);
            let v = if mode == VarianceMode::SchVar2Bayes && raw < 0.0 {
                bayesian_improve_with_prior(raw, rb.v_prime(), rb.count(), rb.k_factor(), sigma_dp_sq, prior)?
            } else {
                raw
            };
            v_new = Some(nonnegative_or_infinite(v));
        }
        if let Some(v) = v_new {
            view.stat.set_v_estimate(v);
        }
        Ok(())
    }

    fn reclassify(&mut self, a: usize, theta: f64, z: f64) {
        let t = self.t;
        let known = self.cfg.variance.is_known();
        let restricted = self.cfg.schedule == Schedule::RestrictedRoundRobin;
        let peer_var: Vec<f64> = self.agents.iter().map(|p| p.variance).collect();
        let ag = &mut self.agents[a];
        let xbar = ag.own.mean();
        let v_a = ag.own.variance();
        for (b, view) in ag.peers.iter().enumerate() {
            let Some(view) = view else { continue };
            if ag.dropped[b] {
                continue;
            }
            let s = &view.stat;
            let accept = if known {
                decide_known_with_z(xbar, t, ag.variance, s.t_value(), s.variance(peer_var[b]), z)
            } else {
                decide_unknown_with_z(xbar, t, v_a, s.t_value(), s.estimated_variance(), s.last_time(), theta, z)
            };
            ag.in_class[b] = accept;
            if restricted && !accept {
                ag.dropped[b] = true;
            }
        }
    }

    fn combine(&mut self, a: usize) {
        let t = self.t as f64;
        let m = self.agents.len();
        let known = self.cfg.variance.is_known();
        let peer_var: Vec<f64> = self.agents.iter().map(|p| p.variance).collect();
        let ag = &mut self.agents[a];
        let own_var = if known { ag.variance / t } else { ag.own.variance() / t };
        let mut entries = vec![(ag.own.mean(), own_var)];
        let mut used = vec![a];
        for (b, view) in ag.peers.iter().enumerate() {
            let Some(view) = view else { continue };
            if !ag.in_class[b] || view.stat.kappa() == 0 {
                continue;
            }
            let var = if known { view.stat.variance(peer_var[b]) } else { view.stat.estimated_variance() };
            entries.push((view.stat.t_value(), var));
            used.push(b);
        }
        let c = combine_estimate(&entries);
        ag.estimate = c.estimate;
        ag.estimate_var = c.variance;
        ag.weights = vec![0.0; m];
        for (&b, &w) in used.iter().zip(&c.weights) {
            ag.weights[b] = w;
        }
    }
}

use colme_core::analytics::local_mse;
use colme_core::protocol::{run, ClassAssignment, ClassMode, Schedule, SimConfig, VarianceMode, World};
use colme_core::validate::mean_and_stderr;
use colme_core::{MechanismKind, WeightScheme};

fn small(agents: usize, t_max: u64) -> SimConfig {
    SimConfig { agents, t_max, ..SimConfig::default() }
}

#[test]
fn seeded_runs_are_bit_identical() {
    for variance in [VarianceMode::Known, VarianceMode::SchVar1, VarianceMode::SchVar2Bayes] {
        let cfg = SimConfig { variance, ..small(6, 300) };
        let a = run(&cfg, 42).unwrap();
        let b = run(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = run(&cfg, 43).unwrap();
        assert_ne!(a.mse, c.mse);
    }
}

#[test]
fn empty_horizon_gives_empty_trajectory() {
    let r = run(&small(3, 0), 1).unwrap();
    assert!(r.mse.is_empty());
}

#[test]
fn round_robin_query_times_and_counts() {
    for m in [3usize, 5, 10] {
        let cfg = SimConfig { class_mode: ClassMode::Oracle, ..small(m, 500) };
        let mut w = World::new(&cfg, 9).unwrap();
        for t in 1..=500u64 {
            w.step().unwrap();
            for a in 0..m {
                let b = w.last_query(a).unwrap();
                let pos = if b < a { b + 1 } else { b };
                assert_eq!(pos as u64, (t - 1) % (m as u64 - 1) + 1);
                for peer in (0..m).filter(|&p| p != a) {
                    let l = if peer < a { peer + 1 } else { peer } as u64;
                    let kappa = if t >= l { (t - l) / (m as u64 - 1) + 1 } else { 0 };
                    let ps = w.peer_statistic(a, peer).unwrap();
                    assert_eq!(ps.kappa(), kappa);
                    if kappa > 0 {
                        assert_eq!(ps.last_time(), l + (kappa - 1) * (m as u64 - 1));
                    }
                }
            }
        }
    }
}

#[test]
fn own_agent_always_in_class_and_weights_convex() {
    let cfg = SimConfig { variance: VarianceMode::SchVar2, ..small(7, 400) };
    let mut w = World::new(&cfg, 3).unwrap();
    for _ in 0..400 {
        w.step().unwrap();
        for a in 0..7 {
            assert!(w.class_estimate(a)[a]);
            let ws = w.combination_weights(a);
            assert!(ws.iter().all(|&x| x >= 0.0));
            assert!((ws.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn known_variance_oracle_classes_beat_local_variance() {
    let cfg = SimConfig { class_mode: ClassMode::Oracle, ..small(8, 300) };
    let mut w = World::new(&cfg, 5).unwrap();
    for t in 1..=300u64 {
        w.step().unwrap();
        for a in 0..8 {
            assert!(w.estimate_variance(a) <= 0.25 / t as f64 * (1.0 + 1e-12));
        }
    }
}

#[test]
fn two_noiseless_agents_pool_their_data() {
    let cfg = SimConfig {
        assignment: ClassAssignment::Explicit { classes: vec![0, 0] },
        non_private: true,
        ..small(2, 50)
    };
    let mut w = World::new(&cfg, 1).unwrap();
    for t in 1..=50u64 {
        w.step().unwrap();
        let local = 0.25 / t as f64;
        if t >= 2 {
            for a in 0..2 {
                if w.class_estimate(a)[1 - a] {
                    assert!(w.estimate_variance(a) < local);
                }
            }
        }
    }
    // Both agents see all samples once the test accepts: estimates coincide.
    assert!((w.estimate(0) - w.estimate(1)).abs() < 0.05);
}

#[test]
fn restricted_round_robin_never_requeries_dropped_peers() {
    let cfg = SimConfig { schedule: Schedule::RestrictedRoundRobin, ..small(9, 1500) };
    let mut w = World::new(&cfg, 11).unwrap();
    let mut dropped = vec![vec![false; 9]; 9];
    for _ in 0..1500 {
        w.step().unwrap();
        for (a, row) in dropped.iter_mut().enumerate() {
            if let Some(b) = w.last_query(a) {
                assert!(!row[b], "agent {a} queried dropped peer {b}");
            }
            let class = w.class_estimate(a);
            for (b, gone) in row.iter_mut().enumerate() {
                if !class[b] {
                    *gone = true;
                }
                if *gone {
                    assert!(!class[b]);
                }
            }
        }
    }
}

#[test]
fn local_mode_follows_local_curve() {
    let cfg = SimConfig { class_mode: ClassMode::Local, ..small(10, 100) };
    let runs: Vec<Vec<f64>> = (0..400).map(|s| run(&cfg, s).unwrap().mse).collect();
    for t in [10usize, 50, 100] {
        let xs: Vec<f64> = runs.iter().map(|r| r[t - 1]).collect();
        let (m, se) = mean_and_stderr(&xs);
        let want = local_mse(&[0.5; 10], t as u64);
        assert!((m - want).abs() < 4.0 * se, "t={t}: {m} vs {want} (se {se})");
    }
}

#[test]
fn oracle_estimates_are_unbiased() {
    let cfg = SimConfig {
        class_mode: ClassMode::Oracle,
        assignment: ClassAssignment::Explicit { classes: vec![0, 1, 0, 2] },
        ..small(4, 30)
    };
    let finals: Vec<Vec<f64>> = (0..10_000).map(|s| run(&cfg, s).unwrap().final_estimates).collect();
    for a in 0..4 {
        let xs: Vec<f64> = finals.iter().map(|f| f[a]).collect();
        let (m, se) = mean_and_stderr(&xs);
        let truth = cfg.class_means[[0, 1, 0, 2][a]];
        assert!((m - truth).abs() < 3.0 * se, "agent {a}: {m} vs {truth} (se {se})");
    }
}

#[test]
fn every_mode_runs() {
    for mechanism in [MechanismKind::Pm1, MechanismKind::Pm2] {
        for weights in [WeightScheme::NonMom, WeightScheme::Mom, WeightScheme::WMom] {
            for variance in [VarianceMode::Known, VarianceMode::SchVar1, VarianceMode::SchVar2, VarianceMode::SchVar2Bayes] {
                let cfg = SimConfig { mechanism, weights, variance, ..small(5, 120) };
                let res = run(&cfg, 2);
                if mechanism == MechanismKind::Pm2 && matches!(variance, VarianceMode::SchVar2 | VarianceMode::SchVar2Bayes) {
                    assert!(matches!(res, Err(colme_core::Error::Unsupported(_))));
                } else {
                    let r = res.unwrap();
                    assert_eq!(r.mse.len(), 120);
                    assert!(r.mse.iter().all(|x| x.is_finite()));
                }
            }
        }
    }
}

#[test]
fn budget_report_matches_mechanism() {
    let cfg = SimConfig { mechanism: MechanismKind::Pm2, ..small(4, 100) };
    let r = run(&cfg, 0).unwrap();
    let plan = cfg.noise_plan().unwrap();
    for b in &r.budgets {
        let scale = (64 - b.releases.leading_zeros()) as f64;
        assert!((b.epsilon - scale * plan.mean_params.epsilon()).abs() < 1e-15);
        assert!(b.epsilon <= 1.0 + 1e-12);
    }
    let cfg = SimConfig { variance: VarianceMode::SchVar1, ..small(4, 100) };
    let r = run(&cfg, 0).unwrap();
    for b in &r.budgets {
        assert_eq!(b.epsilon + b.variance_epsilon.unwrap(), 1.0);
    }
}

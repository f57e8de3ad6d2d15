//! Rows of `trajectory.csv`.

use std::io::Write;

use anyhow::Result;
use colme_core::analytics::{expected_inverse_class_size, oracle_rr_mse, oracle_rrr_mse, OracleCurveConfig};
use colme_core::protocol::{ClassAssignment, SimConfig, Trajectory, VarianceMode};

use crate::experiment::Curve;

pub struct Row {
    pub t: u64,
    pub curve: &'static str,
    pub mean: f64,
    pub stderr: f64,
    pub runs: usize,
}

/// Output times: 1, every multiple of `stride`, and `t_max`.
pub fn sample_times(t_max: u64, stride: u64) -> Vec<u64> {
    let mut out: Vec<u64> = (1..=t_max).filter(|&t| t == 1 || t % stride == 0 || t == t_max).collect();
    out.dedup();
    out
}

/// `(sigma_a^2, E[1/|C_a|])` per agent; expectations over the class draw when it is random.
fn agent_terms(cfg: &SimConfig) -> Vec<(f64, f64)> {
    match &cfg.assignment {
        ClassAssignment::Explicit { classes } => classes
            .iter()
            .map(|c| {
                let size = classes.iter().filter(|d| *d == c).count() as f64;
                (cfg.class_std(*c).powi(2), 1.0 / size)
            })
            .collect(),
        ClassAssignment::UniformRandom { classes } => {
            let mean_var = (0..*classes).map(|c| cfg.class_std(c).powi(2)).sum::<f64>() / *classes as f64;
            let inv = expected_inverse_class_size(cfg.agents, 1.0 / *classes as f64);
            vec![(mean_var, inv); cfg.agents]
        }
    }
}

/// Analytic curves requested by the experiment. Oracle curves need random class
/// assignment, a common data variance and known variances; otherwise they are
/// skipped with a note on stderr.
pub fn analytic_rows(cfg: &SimConfig, curves: &[Curve], times: &[u64]) -> Result<Vec<Row>> {
    let terms = agent_terms(cfg);
    let m = terms.len() as f64;
    let oracle = if curves.iter().any(|c| matches!(c, Curve::OracleRr | Curve::OracleRrr)) {
        if cfg.variance != VarianceMode::Known {
            eprintln!("note: oracle curves are only defined for known variances; skipped");
            None
        } else {
            match OracleCurveConfig::from_sim(cfg) {
                Ok(o) => Some(o),
                Err(e) => {
                    eprintln!("note: oracle curves skipped: {e}");
                    None
                }
            }
        }
    } else {
        None
    };
    let mut rows = Vec::new();
    for &t in times {
        for c in curves {
            let value = match c {
                Curve::Simulated => continue,
                Curve::Local => terms.iter().map(|(v, _)| v).sum::<f64>() / (m * t as f64),
                Curve::Ideal => terms.iter().map(|(v, inv)| v * inv).sum::<f64>() / (m * t as f64),
                Curve::OracleRr => match &oracle {
                    Some(o) => oracle_rr_mse(o, t),
                    None => continue,
                },
                Curve::OracleRrr => match &oracle {
                    Some(o) => oracle_rrr_mse(o, t),
                    None => continue,
                },
            };
            rows.push(Row { t, curve: c.name(), mean: value, stderr: 0.0, runs: 0 });
        }
    }
    Ok(rows)
}

pub fn simulated_rows(tr: &Trajectory, times: &[u64]) -> Vec<Row> {
    times
        .iter()
        .map(|&t| Row {
            t,
            curve: Curve::Simulated.name(),
            mean: tr.mean[t as usize - 1],
            stderr: tr.stderr[t as usize - 1],
            runs: tr.runs,
        })
        .collect()
}

/// Writes rows sorted by `(t, curve order)` with 17 significant digits.
pub fn write_csv(w: impl Write, rows: &mut [Row], order: &[Curve]) -> csv::Result<()> {
    let rank = |name: &str| order.iter().position(|c| c.name() == name).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| a.t.cmp(&b.t).then(rank(a.curve).cmp(&rank(b.curve))));
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "curve", "mse_mean", "mse_stderr", "runs"])?;
    for r in rows.iter() {
        out.write_record([
            r.t.to_string(),
            r.curve.to_string(),
            format!("{:.16e}", r.mean),
            format!("{:.16e}", r.stderr),
            r.runs.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn times_include_ends() {
        assert_eq!(sample_times(25, 10), vec![1, 10, 20, 25]);
        assert_eq!(sample_times(20, 10), vec![1, 10, 20]);
        assert!(sample_times(0, 10).is_empty());
    }

    #[test]
    fn csv_has_seventeen_digits() {
        let mut rows = vec![Row { t: 3, curve: "local", mean: 1.0 / 3.0, stderr: 0.0, runs: 0 }];
        let mut buf = Vec::new();
        write_csv(&mut buf, &mut rows, &[Curve::Local]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "t,curve,mse_mean,mse_stderr,runs\n3,local,3.3333333333333331e-1,0.0000000000000000e0,0\n");
    }
}

//! Step record aggregation and comparison against the performance model.

use super::{HarnessError, StepRecord};
use crate::perf_model::{let_bytes_estimate, predict_step, wan_exchange_count, RunSpec};
use crate::ring::Phase;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldStat {
    pub name: String,
    pub mean: f64,
    /// Sample standard deviation; zero for a window of one.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowAverage {
    pub window: usize,
    pub fields: Vec<FieldStat>,
}

impl WindowAverage {
    pub fn get(&self, name: &str) -> Option<&FieldStat> {
        self.fields.iter().find(|f| f.name == name)
    }
}

/// Mean and standard deviation of every field over the last `window` records.
pub fn average_window(records: &[StepRecord], window: usize) -> Result<WindowAverage, HarnessError> {
    if window == 0 || window > records.len() {
        return Err(HarnessError::Config(format!(
            "window {window} must lie in 1..={}",
            records.len()
        )));
    }
    let tail = &records[records.len() - window..];
    let names: Vec<String> = tail[0].fields().into_iter().map(|f| f.0).collect();
    // Welford's running update per field
    let mut mean = vec![0.0; names.len()];
    let mut m2 = vec![0.0; names.len()];
    for (k, r) in tail.iter().enumerate() {
        let f = r.fields();
        if f.len() != names.len() {
            return Err(HarnessError::Config("records in the window have different site counts".into()));
        }
        for (j, (_, x)) in f.into_iter().enumerate() {
            let d = x - mean[j];
            mean[j] += d / (k + 1) as f64;
            m2[j] += d * (x - mean[j]);
        }
    }
    let fields = names
        .into_iter()
        .zip(mean.into_iter().zip(m2))
        .map(|(name, (mean, m2))| FieldStat {
            name,
            mean,
            std: if window > 1 { (m2 / (window - 1) as f64).sqrt() } else { 0.0 },
        })
        .collect();
    Ok(WindowAverage { window, fields })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermRow {
    pub term: &'static str,
    pub measured: f64,
    pub predicted: f64,
}

impl TermRow {
    pub fn relative_error(&self) -> f64 {
        if self.predicted == 0.0 {
            if self.measured == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.measured - self.predicted).abs() / self.predicted.abs()
        }
    }
}

/// Measured step structure against the model, averaged over all records.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelComparison {
    pub rows: Vec<TermRow>,
}

pub const MODEL_COMPARISON_CSV_HEADER: &str = "term,measured,predicted";

impl ModelComparison {
    pub fn get(&self, term: &str) -> Option<&TermRow> {
        self.rows.iter().find(|r| r.term == term)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{MODEL_COMPARISON_CSV_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.term, r.measured, r.predicted));
        }
        s
    }
}

/// Compare records of a simulated run with the model for `spec`.
///
/// `w_b_measured_volume` applies the model's bandwidth term to the byte
/// volume the run actually moved, so it must equal the virtual clock's
/// charge. `w_b` uses the model's own volume estimate.
pub fn compare_with_model(records: &[StepRecord], spec: &RunSpec) -> Result<ModelComparison, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Config("no records to compare".into()));
    }
    let pred = predict_step(spec).map_err(|e| HarnessError::Config(e.to_string()))?;
    let s = spec.site_count();
    let n = records.len() as f64;
    let mean = |f: &dyn Fn(&StepRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let bytes = |ph: Phase| mean(&|r: &StepRecord| r.phase_bytes(ph) as f64);
    let wan_bytes = mean(&|r: &StepRecord| r.wan_bytes as f64);
    let sigma = spec.network.effective_wan_bandwidth(s);
    let multi = s > 1;
    let rows = vec![
        TermRow {
            term: "wan_exchanges",
            measured: mean(&|r: &StepRecord| r.wan_exchanges as f64),
            predicted: wan_exchange_count(s) as f64,
        },
        TermRow {
            term: "w_l",
            measured: mean(&|r: &StepRecord| r.w_l),
            predicted: pred.w_l,
        },
        TermRow {
            term: "w_b_measured_volume",
            measured: mean(&|r: &StepRecord| r.w_b),
            predicted: wan_bytes / sigma,
        },
        TermRow {
            term: "w_b",
            measured: mean(&|r: &StepRecord| r.w_b),
            predicted: pred.w_b,
        },
        TermRow {
            term: "mesh_bytes",
            measured: bytes(Phase::Mesh),
            predicted: 4.0 * s as f64 * spec.n_mesh,
        },
        TermRow {
            term: "sample_bytes",
            measured: bytes(Phase::Samples),
            predicted: 4.0 * spec.n_particles * spec.r_samp,
        },
        TermRow {
            term: "let_bytes",
            measured: bytes(Phase::Let),
            predicted: if multi { let_bytes_estimate(spec.n_particles, spec.theta) } else { 0.0 },
        },
        TermRow {
            term: "migration_bytes",
            measured: bytes(Phase::Migration),
            predicted: spec.migration_bytes,
        },
        TermRow {
            term: "t_tree",
            measured: mean(&|r: &StepRecord| r.tree_seconds),
            predicted: pred.t_tree,
        },
        TermRow {
            term: "t_pm",
            measured: mean(&|r: &StepRecord| r.pm_seconds),
            predicted: pred.t_pm,
        },
    ];
    Ok(ModelComparison { rows })
}

pub const STEP_RECORDS_CSV_HEADER: &str =
    "step,clock,dt,theta,wan_exchanges,comm_seconds,w_l,w_b,tree_seconds,pm_seconds,total_seconds,interactions,t_calc,counts";

/// One line per record; per-site columns are `;`-separated.
pub fn records_csv(records: &[StepRecord]) -> String {
    let join = |v: Vec<String>| v.join(";");
    let mut s = format!("{STEP_RECORDS_CSV_HEADER}\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.step,
            r.clock.name(),
            r.dt,
            r.theta,
            r.wan_exchanges,
            r.comm_seconds(),
            r.w_l,
            r.w_b,
            r.tree_seconds,
            r.pm_seconds,
            r.total_seconds,
            r.interactions,
            join(r.t_calc.iter().map(|x| x.to_string()).collect()),
            join(r.counts.iter().map(|x| x.to_string()).collect()),
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::super::ClockKind;
    use super::*;
    use proptest::prelude::*;

    fn record(step: u64, x: f64) -> StepRecord {
        StepRecord {
            step,
            clock: ClockKind::Virtual,
            dt: 0.01,
            theta: 0.5,
            wan_exchanges: 13,
            phase_seconds: vec![x; 7],
            phase_bytes: vec![100; 7],
            wan_bytes: 700,
            w_l: 0.039,
            w_b: x,
            tree_seconds: 2.0 * x,
            pm_seconds: 1.0,
            total_seconds: 10.0 * x + 1.0,
            interactions: 1000,
            t_calc: vec![x, 2.0 * x],
            counts: vec![10, 20],
            process_imbalance: 1.0,
        }
    }

    /// Two-pass mean and sample deviation.
    fn two_pass(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = if xs.len() > 1 {
            xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (m, v.sqrt())
    }

    #[test]
    fn identical_records_average_to_themselves() {
        let rs = vec![record(0, 3.0); 5];
        let avg = average_window(&rs, 5).unwrap();
        for ((name, x), f) in rs[0].fields().into_iter().zip(&avg.fields) {
            assert_eq!(name, f.name);
            assert_eq!(f.mean, x);
            assert_eq!(f.std, 0.0);
        }
    }

    #[test]
    fn linear_ramp_mean_is_midpoint() {
        let rs: Vec<StepRecord> = (0..10).map(|k| record(k, k as f64)).collect();
        let avg = average_window(&rs, 10).unwrap();
        assert!((avg.get("w_b").unwrap().mean - 4.5).abs() < 1e-12);
        assert!((avg.get("step").unwrap().mean - 4.5).abs() < 1e-12);
    }

    #[test]
    fn window_must_fit() {
        let rs = vec![record(0, 1.0); 3];
        assert!(average_window(&rs, 4).is_err());
        assert!(average_window(&rs, 0).is_err());
        assert_eq!(average_window(&rs, 1).unwrap().get("w_b").unwrap().std, 0.0);
    }

    #[test]
    fn trailing_window_is_used() {
        let rs: Vec<StepRecord> = (0..6).map(|k| record(k, k as f64)).collect();
        let avg = average_window(&rs, 2).unwrap();
        assert_eq!(avg.get("w_b").unwrap().mean, 4.5);
    }

    proptest! {
        #[test]
        fn welford_matches_two_pass(xs in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            let rs: Vec<StepRecord> = xs.iter().enumerate().map(|(k, &x)| record(k as u64, x)).collect();
            let avg = average_window(&rs, rs.len()).unwrap();
            let (m, sd) = two_pass(&xs);
            let f = avg.get("w_b").unwrap();
            prop_assert!((f.mean - m).abs() <= 1e-12 * (1.0 + m.abs()));
            prop_assert!((f.std - sd).abs() <= 1e-12 * (1.0 + sd));
        }
    }

    #[test]
    fn csv_layout() {
        let csv = records_csv(&[record(2, 1.0)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), STEP_RECORDS_CSV_HEADER);
        let row = lines.next().unwrap();
        assert_eq!(row.split(',').count(), STEP_RECORDS_CSV_HEADER.split(',').count());
        assert!(row.starts_with("2,virtual,"));
        assert!(row.ends_with(",1;2,10;20"));
    }
}

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::metrics::{AccuracyPoint, Summary};
use super::sim::{run_with, PacketLogMode, RunOptions};
use super::EngineError;
use crate::channel::Scenario;

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub value: String,
    pub seed: u64,
    pub summary: Summary,
    pub accuracy: Vec<AccuracyPoint>,
    pub early_recovery: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub stdev: f64,
}

impl Stat {
    /// Sample mean and (n-1) standard deviation.
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Stat { mean: 0.0, stdev: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Stat { mean, stdev: var.sqrt() }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub runs: usize,
    pub throughput_pps: Stat,
    pub delivered: Stat,
    pub energy_mj: Stat,
    pub overhead: Stat,
    pub early_recovery: Option<Stat>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub param: String,
    /// In `(value, seed)` order.
    pub runs: Vec<SweepRun>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "# bpnc-metrics v1\nparam,value,runs,throughput_mean,throughput_stdev,delivered_mean,delivered_stdev,\
             energy_mj_mean,energy_mj_stdev,overhead_mean,overhead_stdev,early_recovery_mean,early_recovery_stdev\n",
        );
        for r in &self.rows {
            let (em, es) = r.early_recovery.as_ref().map_or((String::new(), String::new()), |s| {
                (format!("{:.6}", s.mean), format!("{:.6}", s.stdev))
            });
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{em},{es}",
                self.param,
                r.value,
                r.runs,
                r.throughput_pps.mean,
                r.throughput_pps.stdev,
                r.delivered.mean,
                r.delivered.stdev,
                r.energy_mj.mean,
                r.energy_mj.stdev,
                r.overhead.mean,
                r.overhead.stdev,
            );
        }
        out
    }

    /// Accuracy-versus-received curves, one block per value, pooled over seeds.
    pub fn accuracy_csv(&self) -> String {
        let mut out = String::from("# bpnc-metrics v1\nvalue,received,mean_fraction,samples\n");
        for row in &self.rows {
            let mut pooled: BTreeMap<usize, (f64, u64)> = BTreeMap::new();
            for run in self.runs.iter().filter(|r| r.value == row.value) {
                for p in &run.accuracy {
                    let e = pooled.entry(p.received).or_insert((0.0, 0));
                    e.0 += p.mean_fraction * p.samples as f64;
                    e.1 += p.samples;
                }
            }
            for (received, (sum, n)) in pooled {
                let _ = writeln!(out, "{},{},{:.6},{}", row.value, received, sum / n as f64, n);
            }
        }
        out
    }

    pub fn row(&self, value: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value)
    }
}

/// One run per `(value, seed)`; `parallel` spreads runs over threads without
/// changing any result. Sweeping `seed` itself runs each value once.
pub fn sweep(
    base: &Scenario,
    param: &str,
    values: &[String],
    seeds: &[u64],
    parallel: bool,
) -> Result<SweepResult, EngineError> {
    if values.is_empty() {
        return Err(EngineError::EmptySweep(param.to_string()));
    }
    if seeds.is_empty() {
        return Err(EngineError::NoSeeds);
    }
    let mut jobs = Vec::new();
    for v in values {
        let mut sc = base.clone();
        sc.set_param(param, v)?;
        if param == "seed" {
            jobs.push((v.clone(), sc));
            continue;
        }
        for &seed in seeds {
            let mut sc = sc.clone();
            sc.seed = seed;
            jobs.push((v.clone(), sc));
        }
    }
    let opts = RunOptions { packet_log: PacketLogMode::DigestOnly };
    let exec = |(value, sc): &(String, Scenario)| -> Result<SweepRun, EngineError> {
        let out = run_with(sc, opts)?;
        Ok(SweepRun {
            value: value.clone(),
            seed: sc.seed,
            summary: out.summary,
            accuracy: out.metrics.accuracy,
            early_recovery: out.metrics.early_recovery,
        })
    };
    let runs: Vec<SweepRun> = if parallel {
        jobs.par_iter().map(exec).collect::<Result<_, _>>()?
    } else {
        jobs.iter().map(exec).collect::<Result<_, _>>()?
    };
    let rows = values
        .iter()
        .map(|v| {
            let rs: Vec<&SweepRun> = runs.iter().filter(|r| &r.value == v).collect();
            let col = |f: &dyn Fn(&Summary) -> f64| Stat::of(&rs.iter().map(|r| f(&r.summary)).collect::<Vec<_>>());
            let er: Vec<f64> = rs.iter().filter_map(|r| r.summary.early_recovery_mean).collect();
            SweepRow {
                value: v.clone(),
                runs: rs.len(),
                throughput_pps: col(&|s| s.throughput_pps),
                delivered: col(&|s| s.flows.iter().map(|f| f.delivered).sum::<u64>() as f64),
                energy_mj: col(&|s| s.energy_total_mj),
                overhead: col(&|s| s.overhead_total as f64),
                early_recovery: (!er.is_empty()).then(|| Stat::of(&er)),
            }
        })
        .collect();
    Ok(SweepResult { param: param.to_string(), runs, rows })
}

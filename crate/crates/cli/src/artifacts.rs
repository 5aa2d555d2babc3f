//! Output directory handling and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use cogcoop::admm::{AdmmDuals, AdmmResult};
use cogcoop::io;
use cogcoop::regions::RegionPoint;
use cogcoop::sim::ScanRow;
use cogcoop::{JointPolicy, SystemParams};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub args: serde_json::Value,
    pub params: Option<SystemParams>,
    pub inputs: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub exit_code: u8,
    pub wall_seconds: f64,
}

pub struct OutDir {
    dir: PathBuf,
    pub manifest: Manifest,
}

impl OutDir {
    pub fn create<A: Serialize>(dir: &Path, args: &A) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                command: String::new(),
                version: env!("CARGO_PKG_VERSION"),
                args: serde_json::to_value(args)?,
                params: None,
                inputs: Vec::new(),
                seeds: Vec::new(),
                outputs: Vec::new(),
                exit_code: 0,
                wall_seconds: 0.0,
            },
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn open(&mut self, name: &str) -> Result<fs::File> {
        let path = self.path(name);
        fs::File::create(&path).with_context(|| format!("creating {}", path.display()))
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.text(name, &text)
    }

    pub fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    pub fn policy_csv(&mut self, name: &str, policy: &JointPolicy) -> Result<()> {
        let file = self.open(name)?;
        io::write_policy_csv(policy, file)?;
        Ok(())
    }

    pub fn csv_rows<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(self.open(name)?);
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per direction: `w1..wn, r1..rn, value`.
    pub fn region_csv(&mut self, name: &str, points: &[RegionPoint]) -> Result<()> {
        let n = points.first().map_or(0, |p| p.rates.len());
        let mut w = csv::Writer::from_writer(self.open(name)?);
        let header: Vec<String> = (1..=n)
            .map(|i| format!("w{i}"))
            .chain((1..=n).map(|i| format!("r{i}")))
            .chain(std::iter::once("value".to_string()))
            .collect();
        w.write_record(&header)?;
        for p in points {
            let record: Vec<String> = p
                .direction
                .iter()
                .chain(&p.rates)
                .chain(std::iter::once(&p.value))
                .map(f64::to_string)
                .collect();
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn finish(mut self, command: &str) -> Result<()> {
        self.manifest.command = command.to_string();
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Debug, Serialize)]
pub struct AdmmSummary<'a> {
    pub objective: f64,
    pub rates: &'a [f64],
    pub powers: &'a [f64],
    pub converged: bool,
    pub iterations: usize,
    pub guard_delays: usize,
    pub data_messages: usize,
    pub announcements: usize,
    pub data_per_iteration: &'a [usize],
    pub duals: &'a AdmmDuals,
}

impl<'a> AdmmSummary<'a> {
    pub fn of(res: &'a AdmmResult) -> Self {
        AdmmSummary {
            objective: res.report.objective,
            rates: &res.report.rates,
            powers: &res.report.powers,
            converged: res.converged,
            iterations: res.iterations,
            guard_delays: res.guard_delays,
            data_messages: res.log.total_data(),
            announcements: res.log.total_announcements(),
            data_per_iteration: &res.log.data_per_iteration,
            duals: &res.duals,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CurveRow {
    pub q_b: f64,
    pub value: Option<f64>,
}

pub fn curve_rows(curve: &[(f64, Option<f64>)]) -> Vec<CurveRow> {
    curve
        .iter()
        .map(|&(q_b, value)| CurveRow { q_b, value })
        .collect()
}

/// Infeasible grid points leave the simulated columns empty.
#[derive(Debug, Serialize)]
pub struct ScanCsvRow {
    pub lambda_p: f64,
    pub sim_throughput: Option<f64>,
    pub analytic_objective: Option<f64>,
    pub busy_fraction: Option<f64>,
    pub analytic_busy: Option<f64>,
    pub backlog_growth: Option<f64>,
    pub mean_backlog: Option<f64>,
}

pub fn scan_rows(rows: &[ScanRow]) -> Vec<ScanCsvRow> {
    rows.iter()
        .map(|r| ScanCsvRow {
            lambda_p: r.lambda_p,
            sim_throughput: r.throughput_sum(),
            analytic_objective: r.analytic_objective,
            busy_fraction: r.report.as_ref().map(|s| s.busy_fraction),
            analytic_busy: r.analytic_busy,
            backlog_growth: r.report.as_ref().map(|s| s.backlog_growth),
            mean_backlog: r.report.as_ref().map(|s| s.mean_backlog),
        })
        .collect()
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

//! Plain-text run reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dwropt::optim::{history_csv, CycleRecord, Status};

use crate::config::ExperimentConfig;
use crate::Error;

const CONFIG_BEGIN: &str = "--- config ---";
const CONFIG_END: &str = "--- end config ---";

#[derive(Clone, Debug)]
pub struct RunReport {
    pub command: String,
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
    pub history: Vec<CycleRecord>,
    pub status: Option<Status>,
    pub j_reference: Option<f64>,
    pub alpha: Option<f64>,
    /// Scalar results specific to the command, in insertion order.
    pub values: Vec<(String, f64)>,
    pub notes: Vec<String>,
    /// Wall-clock seconds per phase.
    pub timings: Vec<(String, f64)>,
    /// Files written, relative to `out_dir`.
    pub manifest: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, config: &ExperimentConfig, out_dir: &Path) -> Self {
        Self {
            command: command.into(),
            config: config.clone(),
            out_dir: out_dir.to_path_buf(),
            history: Vec::new(),
            status: None,
            j_reference: None,
            alpha: None,
            values: Vec::new(),
            notes: Vec::new(),
            timings: Vec::new(),
            manifest: Vec::new(),
        }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        writeln!(w, "dwropt {} report", self.command).unwrap();
        writeln!(w, "scenario: {}", self.config.name).unwrap();
        if let Some(status) = self.status {
            writeln!(w, "status: {status:?}").unwrap();
        }
        if let Some(j) = self.j_reference {
            writeln!(w, "reference j: {j:.16e}").unwrap();
        }
        if let Some(a) = self.alpha {
            writeln!(w, "alpha: {a:.16e}").unwrap();
        }
        for (k, v) in &self.values {
            writeln!(w, "{k}: {v:.16e}").unwrap();
        }
        if !self.history.is_empty() {
            let first = &self.history[0];
            let last = self.history.last().unwrap();
            writeln!(w, "updates: {}", last.cycle).unwrap();
            writeln!(w, "initial estimator: {:.16e}", first.theta.abs()).unwrap();
            writeln!(w, "final estimator: {:.16e}", last.theta.abs()).unwrap();
            if let (Some(a), Some(b)) = (first.rel_error_pct, last.rel_error_pct) {
                writeln!(w, "relative QoI error: {a:.4}% -> {b:.4}%").unwrap();
            }
            let worst = self.history.iter().map(|r| r.min_eigenvalue).fold(f64::INFINITY, f64::min);
            writeln!(w, "smallest model eigenvalue over all cycles: {worst:.6e}").unwrap();
        }
        for n in &self.notes {
            writeln!(w, "note: {n}").unwrap();
        }
        writeln!(w, "\ntimings (s):").unwrap();
        for (phase, t) in &self.timings {
            writeln!(w, "  {phase}: {t:.3}").unwrap();
        }
        if !self.history.is_empty() {
            writeln!(w, "\nhistory:").unwrap();
            w.push_str(&history_csv(&self.history));
        }
        writeln!(w, "\nfiles:").unwrap();
        for f in &self.manifest {
            writeln!(w, "  {f}").unwrap();
        }
        writeln!(w, "\n{CONFIG_BEGIN}").unwrap();
        w.push_str(&self.config.to_toml());
        writeln!(w, "{CONFIG_END}").unwrap();
        s
    }

    /// Writes `report.txt` and adds it to the manifest.
    pub fn write(&mut self) -> Result<PathBuf, Error> {
        self.manifest.push("report.txt".into());
        let path = self.path("report.txt");
        std::fs::write(&path, self.render())?;
        Ok(path)
    }

    /// Manifest entries that are missing on disk.
    pub fn missing_files(&self) -> Vec<String> {
        self.manifest.iter().filter(|f| !self.path(f).is_file()).cloned().collect()
    }
}

/// Recovers the configuration echoed at the end of a rendered report.
pub fn config_echo(report: &str) -> Result<ExperimentConfig, Error> {
    let start = report
        .find(CONFIG_BEGIN)
        .ok_or_else(|| Error::Parse("report has no configuration section".into()))?
        + CONFIG_BEGIN.len();
    let end = report[start..]
        .find(CONFIG_END)
        .ok_or_else(|| Error::Parse("unterminated configuration section".into()))?;
    ExperimentConfig::from_toml(&report[start..start + end])
}

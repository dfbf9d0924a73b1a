use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub const CSV_HEADER: [&str; 12] = [
    "trial",
    "m",
    "epsilon",
    "delta",
    "sigma",
    "schedule",
    "step_mult",
    "iteration",
    "mspbe",
    "xi_norm_sq",
    "clipped_frac",
    "diverged",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Ok,
    Diverged,
    /// The privacy budget could not be met at any noise scale.
    Infeasible,
}

impl RowStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowStatus::Ok => "false",
            RowStatus::Diverged => "true",
            RowStatus::Infeasible => "infeasible",
        }
    }
}

/// One checkpoint of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub trial: usize,
    pub m: usize,
    /// `inf` for noise-free runs.
    pub epsilon: f64,
    pub delta: f64,
    pub sigma: f64,
    pub schedule: &'static str,
    pub step_mult: f64,
    pub iteration: usize,
    /// NaN when the run diverged or was infeasible.
    pub mspbe: f64,
    /// Absent when the oracle has no unique fixed point.
    pub xi_norm_sq: Option<f64>,
    pub clipped_frac: f64,
    pub status: RowStatus,
}

impl ResultRow {
    fn record(&self) -> [String; 12] {
        [
            self.trial.to_string(),
            self.m.to_string(),
            self.epsilon.to_string(),
            self.delta.to_string(),
            self.sigma.to_string(),
            self.schedule.to_string(),
            self.step_mult.to_string(),
            self.iteration.to_string(),
            self.mspbe.to_string(),
            self.xi_norm_sq.map(|x| x.to_string()).unwrap_or_default(),
            self.clipped_frac.to_string(),
            self.status.as_str().to_string(),
        ]
    }
}

pub fn write_rows<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_rows(std::fs::File::create(path)?, rows)
}

pub fn rows_to_string(rows: &[ResultRow]) -> String {
    let mut buf = Vec::new();
    write_rows(&mut buf, rows).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is UTF-8")
}

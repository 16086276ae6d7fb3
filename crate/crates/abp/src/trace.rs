//! JSON-lines benchmark traces.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use abp_core::metrics::{l2_error, tv_distance, MetricError};
use abp_core::Snapshot;
use serde::{Deserialize, Serialize};

/// One sample of a run. Error columns are `null` without a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub method: String,
    pub seed: u64,
    pub wall_clock_ms: f64,
    pub factor_updates: u64,
    pub tv_distance: Option<f64>,
    pub l2_error: Option<f64>,
    pub avg_residual: f64,
    pub max_residual: f64,
    pub domain_fill: f64,
    pub consistent: bool,
}

impl TraceRecord {
    pub fn from_snapshot(
        method: &str,
        seed: u64,
        snapshot: &Snapshot,
        reference: Option<&[Vec<f64>]>,
    ) -> Result<Self, MetricError> {
        let (tv, l2) = match reference {
            Some(r) => (
                Some(tv_distance(&snapshot.var_marginals, r)?),
                Some(l2_error(&snapshot.var_marginals, r)?),
            ),
            None => (None, None),
        };
        Ok(Self {
            method: method.to_owned(),
            seed,
            wall_clock_ms: snapshot.wall_clock_ms,
            factor_updates: snapshot.factor_updates,
            tv_distance: tv,
            l2_error: l2,
            avg_residual: snapshot.avg_residual,
            max_residual: snapshot.max_residual,
            domain_fill: snapshot.domain_fill,
            consistent: snapshot.consistent,
        })
    }
}

/// Append-only trace file.
pub struct TraceWriter {
    out: BufWriter<File>,
}

impl TraceWriter {
    pub fn append(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { out: BufWriter::new(file) })
    }

    pub fn write(&mut self, record: &TraceRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.out.flush()
    }
}

pub fn read_trace(path: &Path) -> io::Result<Vec<TraceRecord>> {
    BufReader::new(File::open(path)?)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

//! On-disk forecast store. One CSV per (model, region, origin) under
//! `forecasts/`, a manifest listing task outcomes, and a snapshot of the
//! config that produced the run.
//!
//! Every file lands via write-to-temp-then-rename, so a crash never leaves a
//! truncated forecast behind and reruns can trust what they find.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::config::BacktestConfig;
use crate::corpus::HORIZON;
use crate::error::{Error, Result};
use crate::forecast::ForecastDraws;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SNAPSHOT_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Ok,
    Failed,
}

impl TaskStatus {
    fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Ok => "ok",
            TaskStatus::Failed => "failed",
        }
    }
}

/// One row of the manifest: the outcome of a forecast task.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub model_id: String,
    pub region_id: String,
    pub origin: NaiveDate,
    pub status: TaskStatus,
    /// Failure reason; empty on success.
    pub reason: String,
}

/// Snapshot of the run stored next to its outputs, so scoring and reporting
/// never need the original config file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StoreSnapshot {
    pub config: BacktestConfig,
    /// Resolved (variant id, family) pairs in run order.
    pub variants: Vec<(String, String)>,
}

pub struct ForecastStore {
    root: PathBuf,
}

impl ForecastStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("forecasts"))?;
        Ok(ForecastStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn forecast_path(&self, model: &str, region: &str, origin: NaiveDate) -> PathBuf {
        self.root
            .join("forecasts")
            .join(model)
            .join(region)
            .join(format!("{origin}.csv"))
    }

    /// Writes `content` to `path` atomically (temp file in the same
    /// directory, then rename).
    fn write_atomic(&self, path: &Path, content: &[u8]) -> Result<()> {
        let dir = path
            .parent()
            .ok_or_else(|| Error::Store("path has no parent".into()))?;
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".{}.tmp",
            path.file_name().unwrap_or_default().to_string_lossy()
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(content)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Stores one forecast: one row per draw, 14 integer columns.
    pub fn write_forecast(&self, fc: &ForecastDraws) -> Result<()> {
        let mut out = String::with_capacity(fc.n_draws() * HORIZON * 6);
        for row in &fc.draws {
            let cells: Vec<String> = row.iter().map(|&x| format!("{}", x as i64)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        let path = self.forecast_path(&fc.model_id, &fc.region_id, fc.origin);
        self.write_atomic(&path, out.as_bytes())
    }

    /// True when a complete forecast with the expected number of draws is
    /// already on disk.
    pub fn has_forecast(&self, model: &str, region: &str, origin: NaiveDate, draws: usize) -> bool {
        let path = self.forecast_path(model, region, origin);
        match fs::read_to_string(&path) {
            Ok(text) => text.lines().count() == draws,
            Err(_) => false,
        }
    }

    pub fn read_forecast(
        &self,
        model: &str,
        region: &str,
        origin: NaiveDate,
        population: u64,
    ) -> Result<ForecastDraws> {
        let path = self.forecast_path(model, region, origin);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Store(format!("cannot read {}: {e}", path.display())))?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| {
                Error::Store(format!("{}: bad value on line {}: {e}", path.display(), i + 1))
            })?;
            rows.push(row);
        }
        ForecastDraws::new(model, region, origin, population, rows)
    }

    pub fn write_manifest(&self, entries: &[ManifestEntry]) -> Result<()> {
        // Reasons are free-form error text; csv handles the quoting.
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "region", "origin", "status", "reason"])?;
        for e in entries {
            w.write_record([
                e.model_id.as_str(),
                e.region_id.as_str(),
                &e.origin.to_string(),
                e.status.as_str(),
                e.reason.as_str(),
            ])?;
        }
        let out = w
            .into_inner()
            .map_err(|e| Error::Store(format!("manifest buffer: {e}")))?;
        self.write_atomic(&self.root.join(MANIFEST_FILE), &out)
    }

    pub fn read_manifest(&self) -> Result<Vec<ManifestEntry>> {
        let path = self.root.join(MANIFEST_FILE);
        let mut reader = csv::Reader::from_path(&path)
            .map_err(|e| Error::Store(format!("cannot read {}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for record in reader.records() {
            let r = record?;
            if r.len() != 5 {
                return Err(Error::Store(format!(
                    "{}: expected 5 manifest columns",
                    path.display()
                )));
            }
            let status = match &r[3] {
                "ok" => TaskStatus::Ok,
                "failed" => TaskStatus::Failed,
                other => {
                    return Err(Error::Store(format!("unknown manifest status {other:?}")))
                }
            };
            entries.push(ManifestEntry {
                model_id: r[0].to_string(),
                region_id: r[1].to_string(),
                origin: r[2]
                    .parse()
                    .map_err(|e| Error::Store(format!("bad manifest date: {e}")))?,
                status,
                reason: r[4].to_string(),
            });
        }
        Ok(entries)
    }

    pub fn write_snapshot(&self, snap: &StoreSnapshot) -> Result<()> {
        let text = serde_json::to_string_pretty(snap)
            .map_err(|e| Error::Store(format!("cannot serialize snapshot: {e}")))?;
        self.write_atomic(&self.root.join(SNAPSHOT_FILE), text.as_bytes())
    }

    pub fn read_snapshot(&self) -> Result<StoreSnapshot> {
        let path = self.root.join(SNAPSHOT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| {
            Error::Store(format!(
                "no run snapshot at {}: {e}; run the backtest first",
                path.display()
            ))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Store(format!("bad snapshot {}: {e}", path.display())))
    }

    /// Writes a named CSV table (scores, summaries, ribbons) atomically.
    pub fn write_table(&self, name: &str, content: &str) -> Result<()> {
        self.write_atomic(&self.root.join(name), content.as_bytes())
    }

    pub fn table_path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

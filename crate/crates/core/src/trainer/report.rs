//! Training report: one metadata line plus one line per evaluation step,
//! serialized as line-delimited JSON next to the checkpoint.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: u64,
    pub rgb_loss: f64,
    pub depth_loss: f64,
    pub psnr: f64,
    pub depth_rmse: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub freeze_policy: String,
    pub view_count: Option<usize>,
    pub train_views: Vec<usize>,
    pub eval_views: Vec<usize>,
    /// Audit: training never drew rays from an evaluation view.
    pub view_partition_disjoint: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub meta: ReportMeta,
    pub records: Vec<EvalRecord>,
}

impl TrainReport {
    pub fn new(freeze_policy: &str, view_count: Option<usize>) -> Self {
        Self {
            meta: ReportMeta {
                freeze_policy: freeze_policy.to_string(),
                view_count,
                train_views: Vec::new(),
                eval_views: Vec::new(),
                view_partition_disjoint: true,
            },
            records: Vec::new(),
        }
    }

    pub fn set_views(&mut self, train: Vec<usize>, eval: Vec<usize>) {
        self.meta.view_partition_disjoint = train.iter().all(|v| !eval.contains(v));
        self.meta.train_views = train;
        self.meta.eval_views = eval;
    }

    pub fn push(&mut self, record: EvalRecord) {
        if let Some(last) = self.records.last() {
            debug_assert!(record.iteration > last.iteration, "records must advance");
        }
        self.records.push(record);
    }

    pub fn last_psnr(&self) -> Option<f64> {
        self.records.last().map(|r| r.psnr)
    }

    pub fn last_depth_rmse(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.depth_rmse)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), TrainError> {
        let mut buf = Vec::new();
        let meta = serde_json::json!({ "type": "meta", "data": self.meta });
        writeln!(buf, "{meta}").expect("in-memory write");
        for r in &self.records {
            let line = serde_json::json!({ "type": "eval", "data": r });
            writeln!(buf, "{line}").expect("in-memory write");
        }
        fs::write(path, buf).map_err(|e| TrainError::ReportIo {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut meta: Option<ReportMeta> = None;
        let mut records = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
            match v["type"].as_str() {
                Some("meta") => {
                    meta = Some(
                        serde_json::from_value(v["data"].clone()).map_err(|e| e.to_string())?,
                    )
                }
                Some("eval") => records.push(
                    serde_json::from_value(v["data"].clone()).map_err(|e| e.to_string())?,
                ),
                other => return Err(format!("unknown record type {other:?}")),
            }
        }
        Ok(Self {
            meta: meta.ok_or("report missing meta line")?,
            records,
        })
    }
}

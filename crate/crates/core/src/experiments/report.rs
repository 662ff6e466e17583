use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::network::{save_checkpoint, save_cross_domain, CrossDomainNetwork, Network};
use crate::{Error, Result, Rng};

/// One line of `report.csv` or `curves.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub seed: u64,
    pub condition: String,
    pub iteration: u64,
    pub metric: String,
    pub value: f64,
}

pub fn rows_to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["experiment", "seed", "condition", "iteration", "metric", "value"])?;
    }
    for r in rows {
        if !r.value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("report value {} of {}", r.metric, r.condition),
                iteration: r.iteration,
            });
        }
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Aggregate of one (condition, metric) over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub metric: String,
    pub seeds: Vec<u64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Per seed, the first evaluated iteration whose accuracy reached the
    /// configured threshold.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub first_reaching: Vec<Option<u64>>,
    /// Facts about the condition (source pixel count, schedule, depth).
    pub metadata: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub threshold: f64,
    pub conditions: Vec<ConditionSummary>,
}

/// Groups rows by (condition, metric) in first-seen order and computes
/// mean/min/max over them. Rows are expected sorted by seed.
pub fn aggregate(rows: &[ReportRow]) -> Vec<ConditionSummary> {
    let mut out: Vec<ConditionSummary> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let pos = out.iter().position(|c| c.condition == r.condition && c.metric == r.metric);
        let i = pos.unwrap_or_else(|| {
            out.push(ConditionSummary {
                condition: r.condition.clone(),
                metric: r.metric.clone(),
                seeds: Vec::new(),
                mean: 0.0,
                min: 0.0,
                max: 0.0,
                first_reaching: Vec::new(),
                metadata: BTreeMap::new(),
            });
            values.push(Vec::new());
            out.len() - 1
        });
        out[i].seeds.push(r.seed);
        values[i].push(r.value);
    }
    for (c, v) in out.iter_mut().zip(&values) {
        c.mean = v.iter().sum::<f64>() / v.len() as f64;
        c.min = v.iter().copied().fold(f64::INFINITY, f64::min);
        c.max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    out
}

/// A trained network to be written next to the reports.
#[derive(Clone, Debug)]
pub enum SavedNet {
    Single(Network<f32>),
    CrossDomain(CrossDomainNetwork<f32>),
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    /// One final-accuracy (or final-loss) row per condition and seed.
    pub rows: Vec<ReportRow>,
    /// Every evaluation point of every run.
    pub curves: Vec<ReportRow>,
    pub summary: Summary,
    /// File name, network and the RNG state after training.
    pub checkpoints: Vec<(String, SavedNet, Rng)>,
}

impl ExperimentOutput {
    /// Writes `report.csv`, `curves.csv`, `summary.json` and checkpoints.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        put("report.csv", rows_to_csv(&self.rows)?)?;
        put("curves.csv", rows_to_csv(&self.curves)?)?;
        put("summary.json", serde_json::to_string_pretty(&self.summary)? + "\n")?;
        for (name, net, rng) in &self.checkpoints {
            let p = dir.join(name);
            match net {
                SavedNet::Single(n) => save_checkpoint(n, Some(rng), &p)?,
                SavedNet::CrossDomain(n) => save_cross_domain(n, Some(rng), &p)?,
            }
        }
        Ok(())
    }
}

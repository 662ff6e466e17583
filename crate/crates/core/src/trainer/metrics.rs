use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::GroupRates;
use crate::{Error, Result};

/// Metrics recorded every `eval_every` iterations: mean training loss over
/// the window and, for target runs, overall accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iteration: u64,
    pub domain: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Learning rates actually handed to the optimizer for one domain step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrRecord {
    pub iteration: u64,
    pub domain: usize,
    pub private_lr: f64,
    pub shared_lr: f64,
}

impl LrRecord {
    pub(super) fn new(iteration: u64, domain: usize, rates: GroupRates) -> Self {
        Self {
            iteration,
            domain,
            private_lr: rates.private,
            shared_lr: rates.shared,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub points: Vec<EvalPoint>,
    /// Batch loss of every iteration, per domain.
    pub loss_trace: Vec<Vec<f64>>,
    pub lr_log: Vec<LrRecord>,
    /// Wall-clock seconds per 100 iterations. Not part of the CSV output.
    pub secs_per_100: f64,
}

impl TrainMetrics {
    pub(super) fn new(domains: usize) -> Self {
        Self {
            points: Vec::new(),
            loss_trace: vec![Vec::new(); domains],
            lr_log: Vec::new(),
            secs_per_100: 0.0,
        }
    }

    pub(super) fn set_timing(&mut self, elapsed: Duration, iterations: u64) {
        if iterations > 0 {
            self.secs_per_100 = elapsed.as_secs_f64() * 100.0 / iterations as f64;
        }
    }

    /// Accuracy points of `domain` as (iteration, accuracy).
    pub fn accuracy_curve(&self, domain: usize) -> Vec<(u64, f64)> {
        self.points
            .iter()
            .filter(|p| p.domain == domain)
            .filter_map(|p| p.accuracy.map(|a| (p.iteration, a)))
            .collect()
    }

    /// First recorded iteration whose accuracy reaches `threshold`.
    pub fn first_reaching(&self, domain: usize, threshold: f64) -> Option<u64> {
        self.accuracy_curve(domain).into_iter().find(|&(_, a)| a >= threshold).map(|(i, _)| i)
    }

    pub fn final_accuracy(&self, domain: usize) -> Option<f64> {
        self.accuracy_curve(domain).last().map(|&(_, a)| a)
    }

    /// CSV with header `iteration,domain,loss,accuracy`; accuracy is empty
    /// when not measured.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "domain", "loss", "accuracy"])?;
        for p in &self.points {
            w.write_record([
                p.iteration.to_string(),
                p.domain.to_string(),
                p.loss.to_string(),
                p.accuracy.map(|a| a.to_string()).unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_leaves_missing_accuracy_empty() {
        let mut m = TrainMetrics::new(2);
        m.points.push(EvalPoint {
            iteration: 100,
            domain: 1,
            loss: 0.5,
            accuracy: None,
        });
        m.points.push(EvalPoint {
            iteration: 100,
            domain: 0,
            loss: 0.25,
            accuracy: Some(0.75),
        });
        assert_eq!(m.to_csv().unwrap(), "iteration,domain,loss,accuracy\n100,1,0.5,\n100,0,0.25,0.75\n");
        assert_eq!(m.first_reaching(0, 0.7), Some(100));
        assert_eq!(m.first_reaching(0, 0.8), None);
    }
}

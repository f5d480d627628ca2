//! Metric rows and CSV serialization.
//!
//! `metrics.csv` is the reproducibility surface: identical (config, seed)
//! pairs must produce byte-identical files, so floats are written with
//! Rust's shortest round-trip formatting and undefined losses are written
//! as `NaN` rather than omitted.

use std::fmt::Write as _;

/// One row of training/evaluation telemetry.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub env_step: usize,
    pub episode: usize,
    pub epsilon: f64,
    pub loss_v: f64,
    pub loss_qh: f64,
    pub loss_ql: f64,
    pub train_return: f64,
    pub eval_return_mean: f64,
    pub eval_success_rate: f64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "env_step,episode,epsilon,loss_v,loss_qh,loss_ql,train_return,eval_return_mean,eval_success_rate,wall_ms";

impl MetricRow {
    pub fn to_csv_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            self.env_step,
            self.episode,
            self.epsilon,
            self.loss_v,
            self.loss_qh,
            self.loss_ql,
            self.train_return,
            self.eval_return_mean,
            self.eval_success_rate,
            self.wall_ms
        );
        s
    }
}
